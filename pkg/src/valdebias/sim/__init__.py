"""Simulation scenarios, learners, CV runner and the replication-study driver."""
