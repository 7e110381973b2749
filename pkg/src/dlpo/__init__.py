"""DLPO: deep-learning-inspired prompt optimization with textual gradients."""

__version__ = "0.1.0"

from .prompt import (  # noqa: F401
    EditKind,
    EditOp,
    Prompt,
    PromptDiff,
    SentenceSpan,
    diff,
    merge,
    segment,
)
