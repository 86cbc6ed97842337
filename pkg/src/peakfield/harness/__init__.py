"""Configuration, experiment dispatch, persistence, acceptance suite and CLI."""
