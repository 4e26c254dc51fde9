"""HTTP front end: pydantic payloads plus the FastAPI app factory."""

from .app import create_app

__all__ = ["create_app"]
