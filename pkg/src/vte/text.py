"""Tokenization and small text helpers.

The same tokenizer is applied to hypotheses, explanations, and the
highlighted-word matching rule so that client- and server-side validation
agree token for token.
"""

from __future__ import annotations

import string

# ASCII punctuation only, so a TypeScript mirror can share the exact set.
PUNCTUATION = string.punctuation
_PUNCT_SET = frozenset(PUNCTUATION)


def tokenize(text: str) -> list[str]:
    """Lowercase, detach punctuation into standalone tokens, split on whitespace."""
    chars = []
    for ch in text.lower():
        if ch in _PUNCT_SET:
            chars.append(f" {ch} ")
        else:
            chars.append(ch)
    return "".join(chars).split()


def normalize_token(token: str) -> str:
    """Canonical form for word matching: lowercase, edge punctuation stripped."""
    return token.lower().strip(PUNCTUATION)


def format_table(headers: list[str], rows: list[list[str]]) -> str:
    """Render an aligned plain-text table; all cells are stringified."""
    table = [[str(c) for c in row] for row in rows]
    widths = [len(h) for h in headers]
    for row in table:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))
    lines = [
        "  ".join(h.ljust(w) for h, w in zip(headers, widths)).rstrip(),
        "  ".join("-" * w for w in widths),
    ]
    for row in table:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
    return "\n".join(lines)
