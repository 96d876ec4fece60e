"""Multi-view clustering with partially aligned views."""

from circle.errors import CircleError

__version__ = "0.1.0"

__all__ = ["CircleError", "__version__"]
