"""Lexical token counting used for block-size thresholds.

The size threshold that drives segmentation is measured in tokens. The
default tokenizer is a plain lexical one: identifier/number runs count as
one token each, every other non-space character counts individually. It
needs no vocabulary, so indexing stays offline-testable; providers that
bill by their own tokenizer can plug in a replacement.
"""

from __future__ import annotations

import re
from typing import Protocol, runtime_checkable

_LEXEME = re.compile(r"\w+|[^\w\s]", re.UNICODE)


@runtime_checkable
class Tokenizer(Protocol):
    name: str

    def tokenize(self, text: str) -> list[str]: ...

    def count(self, text: str) -> int: ...


class LexicalTokenizer:
    """Whitespace-and-punctuation tokenizer: `int x = 0;` -> 5 tokens."""

    name = "lexical"

    def tokenize(self, text: str) -> list[str]:
        return _LEXEME.findall(text)

    def count(self, text: str) -> int:
        return len(_LEXEME.findall(text))


DEFAULT_TOKENIZER = LexicalTokenizer()
