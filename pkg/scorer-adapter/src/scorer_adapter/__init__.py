"""Masked-LM inference worker for the JSON-lines scoring protocol."""

from .adapter import AdapterConfig, AdapterError, ModelScorer, main, serve
from .wire import Request, WireError

__version__ = "0.1.0"

__all__ = [
    "AdapterConfig",
    "AdapterError",
    "ModelScorer",
    "Request",
    "WireError",
    "main",
    "serve",
    "__version__",
]
