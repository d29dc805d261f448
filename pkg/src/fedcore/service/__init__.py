"""FastAPI service: the CLI's backend."""
