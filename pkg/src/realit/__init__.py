"""Learning to find and fix single-token bugs in Python functions."""

__version__ = "0.1.0"

from .edits import BugExample, EditOp  # noqa: E402
from .errors import RealitError  # noqa: E402
from .pytok import TokenSeq, render, tokenize  # noqa: E402

__all__ = ["BugExample", "EditOp", "RealitError", "TokenSeq", "render", "tokenize", "__version__"]
