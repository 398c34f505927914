"""Lexer for C function sources.

One tokenizer shared by corpus ingestion (token counts), identifier
anonymization, and CFG construction, so all three agree on what a token is.
"""

from __future__ import annotations

from dataclasses import dataclass

C_KEYWORDS = frozenset(
    """
    auto break case char const continue default do double else enum extern
    float for goto if inline int long register restrict return short signed
    sizeof static struct switch typedef union unsigned void volatile while
    _Bool _Complex _Imaginary
    """.split()
)

#: tokenization scheme identifier stored alongside token counts
TOKENIZER_ID = "c-ws-punct-v1"

_PUNCT3 = ("<<=", ">>=", "...")
_PUNCT2 = (
    "->", "++", "--", "<<", ">>", "<=", ">=", "==", "!=", "&&", "||",
    "+=", "-=", "*=", "/=", "%=", "&=", "^=", "|=", "##",
)
_PUNCT1 = set("()[]{};,.?:~!%^&*-+=<>|/#")


class LexError(ValueError):
    """Raised on source that cannot be tokenized; carries the offending line."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class Token:
    kind: str  # ident | keyword | number | string | char | punct | comment | preproc
    text: str
    line: int
    col: int
    start: int
    end: int


def _is_ident_start(ch: str) -> bool:
    return ch.isalpha() or ch == "_"


def _is_ident_char(ch: str) -> bool:
    return ch.isalnum() or ch == "_"


def lex(source: str, include_trivia: bool = False) -> list[Token]:
    """Tokenize C source.

    Comments and preprocessor lines are emitted only when ``include_trivia``
    is true; whitespace is never emitted. Raises LexError on unterminated
    strings, character constants, or block comments.
    """
    out: list[Token] = []
    i, n = 0, len(source)
    line, col = 1, 1
    at_line_start = True

    def emit(kind: str, start: int, start_line: int, start_col: int, end: int) -> None:
        out.append(Token(kind, source[start:end], start_line, start_col, start, end))

    while i < n:
        ch = source[i]

        if ch in " \t\r\v\f":
            i += 1
            col += 1
            continue
        if ch == "\n":
            i += 1
            line += 1
            col = 1
            at_line_start = True
            continue

        start, start_line, start_col = i, line, col

        if ch == "/" and i + 1 < n and source[i + 1] == "/":
            j = source.find("\n", i)
            j = n if j < 0 else j
            if include_trivia:
                emit("comment", start, start_line, start_col, j)
            col += j - i
            i = j
            continue

        if ch == "/" and i + 1 < n and source[i + 1] == "*":
            j = source.find("*/", i + 2)
            if j < 0:
                raise LexError("unterminated block comment", start_line)
            j += 2
            if include_trivia:
                emit("comment", start, start_line, start_col, j)
            skipped = source[i:j]
            line += skipped.count("\n")
            col = j - skipped.rfind("\n") if "\n" in skipped else col + (j - i)
            i = j
            continue

        if ch == "#" and at_line_start:
            j = source.find("\n", i)
            j = n if j < 0 else j
            if include_trivia:
                emit("preproc", start, start_line, start_col, j)
            col += j - i
            i = j
            continue

        at_line_start = False

        if ch in "\"'":
            quote = ch
            j = i + 1
            while j < n:
                c = source[j]
                if c == "\\" and j + 1 < n:
                    j += 2
                    continue
                if c == quote:
                    j += 1
                    break
                if c == "\n":
                    raise LexError(f"unterminated {quote} literal", start_line)
                j += 1
            else:
                raise LexError(f"unterminated {quote} literal", start_line)
            emit("string" if quote == '"' else "char", start, start_line, start_col, j)
            col += j - i
            i = j
            continue

        if ch.isdigit() or (ch == "." and i + 1 < n and source[i + 1].isdigit()):
            # pp-number: digits, letters, dots, and exponent signs
            j = i + 1
            while j < n:
                c = source[j]
                if _is_ident_char(c) or c == ".":
                    j += 1
                elif c in "+-" and source[j - 1] in "eEpP":
                    j += 1
                else:
                    break
            emit("number", start, start_line, start_col, j)
            col += j - i
            i = j
            continue

        if _is_ident_start(ch):
            j = i + 1
            while j < n and _is_ident_char(source[j]):
                j += 1
            text = source[i:j]
            emit("keyword" if text in C_KEYWORDS else "ident", start, start_line, start_col, j)
            col += j - i
            i = j
            continue

        matched = None
        for cand in _PUNCT3:
            if source.startswith(cand, i):
                matched = cand
                break
        if matched is None:
            for cand in _PUNCT2:
                if source.startswith(cand, i):
                    matched = cand
                    break
        if matched is None and ch in _PUNCT1:
            matched = ch
        if matched is None:
            raise LexError(f"unexpected character {ch!r}", start_line)
        emit("punct", start, start_line, start_col, i + len(matched))
        col += len(matched)
        i += len(matched)

    return out


def code_tokens(source: str) -> list[Token]:
    """Tokens that count as code: no whitespace, comments, or preprocessor lines."""
    return lex(source, include_trivia=False)


def token_count(source: str) -> int:
    return len(code_tokens(source))
