"""Scenario loading, report writing and the command-line front end."""
