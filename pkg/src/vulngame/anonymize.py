"""Identifier substitution for C functions.

Replaces user-defined names (the function's own name, parameters, and local
variables) with symbolic names FUN1, VAR1, VAR2, ... numbered by first
occurrence. External names (library calls, globals not declared in the
sample), keywords, literals, struct members, labels, and comments are left
untouched, so the token count and control-flow structure are preserved and
the mapping is exactly invertible.
"""

from __future__ import annotations

from collections import namedtuple
from dataclasses import dataclass, field

from sklearn.base import BaseEstimator, TransformerMixin

from . import lexer
from .corpus import CodeSample, Corpus
from .lexer import Token

_TYPE_STARTERS = frozenset(
    "void char short int long float double signed unsigned _Bool".split())
_TAGGED = frozenset(("struct", "union", "enum"))
_QUALIFIERS = frozenset(
    "const volatile static register auto extern inline restrict".split())

#: flag attached to samples whose source could not be transformed
UNTRANSFORMED = "UNTRANSFORMED"


class AnonymizeError(ValueError):
    pass


@dataclass(frozen=True)
class IdentifierMap:
    """Original-to-symbolic renaming for one sample; insertion order is
    first-occurrence order in the token stream."""

    function_names: dict[str, str] = field(default_factory=dict)
    variable_names: dict[str, str] = field(default_factory=dict)

    def inverse(self) -> dict[str, str]:
        inv = {}
        for mapping in (self.function_names, self.variable_names):
            for orig, sym in mapping.items():
                inv[sym] = orig
        return inv

    def to_dict(self) -> dict:
        return {"function_names": dict(self.function_names),
                "variable_names": dict(self.variable_names)}


_FunctionShape = namedtuple("_FunctionShape", "name_index lparen rparen lbrace rbrace")


def _match_forward(tokens: list[Token], i: int, open_text: str, close_text: str) -> int:
    """Index of the token closing the group opened at ``i``."""
    depth = 0
    for j in range(i, len(tokens)):
        t = tokens[j].text
        if t == open_text:
            depth += 1
        elif t == close_text:
            depth -= 1
            if depth == 0:
                return j
    raise AnonymizeError(f"unbalanced {open_text!r} starting at line {tokens[i].line}")


def _function_shape(tokens: list[Token]) -> _FunctionShape:
    lparen = None
    for j, t in enumerate(tokens):
        if t.text == "(" and j > 0 and tokens[j - 1].kind == "ident":
            lparen = j
            break
    if lparen is None:
        raise AnonymizeError("no function declarator found")
    rparen = _match_forward(tokens, lparen, "(", ")")
    lbrace = None
    for j in range(rparen + 1, len(tokens)):
        if tokens[j].text == "{":
            lbrace = j
            break
        if tokens[j].text == ";":
            raise AnonymizeError("declaration without a body")
    if lbrace is None:
        raise AnonymizeError("function has no body")
    rbrace = _match_forward(tokens, lbrace, "{", "}")
    return _FunctionShape(lparen - 1, lparen, rparen, lbrace, rbrace)


def _parameter_names(tokens: list[Token], shape: _FunctionShape) -> list[str]:
    names = []
    group: list[Token] = []
    depth = 0
    for t in tokens[shape.lparen + 1:shape.rparen] + [tokens[shape.rparen]]:
        if t.text in "([":
            depth += 1
        elif t.text in ")]":
            depth -= 1
        if (t.text == "," and depth == 0) or t is tokens[shape.rparen]:
            name = _name_from_param_group(group)
            if name is not None:
                names.append(name)
            group = []
        else:
            group.append(t)
    return names


def _name_from_param_group(group: list[Token]) -> str | None:
    if not group or (len(group) == 1 and group[0].text in ("void", "...")):
        return None
    top_level: list[str] = []
    nested: list[str] = []
    depth = 0
    prev: Token | None = None
    for t in group:
        if t.text == "(":
            depth += 1
        elif t.text == ")":
            depth -= 1
        elif t.kind == "ident" and not (prev and prev.text in _TAGGED):
            (top_level if depth == 0 else nested).append(t.text)
        prev = t
    if top_level:
        return top_level[-1]
    return nested[-1] if nested else None


def _match_declaration(tokens: list[Token], i: int, end: int) -> list[str] | None:
    """Names declared by a declaration statement starting at ``i``, or None."""
    j = i
    while j < end and tokens[j].text in _QUALIFIERS:
        j += 1
    if j >= end:
        return None
    t = tokens[j]
    if t.text in _TAGGED:
        j += 1
        if j < end and tokens[j].kind == "ident":
            j += 1  # tag name
        if j < end and tokens[j].text == "{":
            j = _match_forward(tokens, j, "{", "}") + 1
    elif t.text in _TYPE_STARTERS:
        while j < end and tokens[j].text in (_TYPE_STARTERS | _QUALIFIERS):
            j += 1
    elif t.kind == "ident":
        j += 1  # candidate typedef name; declarator shape decides below
    else:
        return None

    names: list[str] = []
    while True:
        while j < end and (tokens[j].text == "*" or tokens[j].text in _QUALIFIERS):
            j += 1
        if j >= end or tokens[j].kind != "ident":
            return None
        names.append(tokens[j].text)
        j += 1
        while j < end and tokens[j].text == "[":
            j = _match_forward(tokens, j, "[", "]") + 1
        if j < end and tokens[j].text == "(":
            return None  # prototype or function pointer; leave untouched
        if j < end and tokens[j].text == "=":
            depth = 0
            j += 1
            while j < end:
                txt = tokens[j].text
                if txt in "([{":
                    depth += 1
                elif txt in ")]}":
                    depth -= 1
                elif depth == 0 and txt in (",", ";"):
                    break
                j += 1
        if j >= end:
            return None
        if tokens[j].text == ",":
            j += 1
            continue
        if tokens[j].text == ";":
            return names
        return None


def _local_names(tokens: list[Token], shape: _FunctionShape) -> list[str]:
    start, end = shape.lbrace + 1, shape.rbrace
    starts = [start]
    for j in range(start, end):
        if tokens[j].text in "{};":
            starts.append(j + 1)
        elif tokens[j].text == "for" and j + 1 < end and tokens[j + 1].text == "(":
            starts.append(j + 2)
    names: list[str] = []
    for j in starts:
        if j < end:
            found = _match_declaration(tokens, j, end)
            if found:
                names.extend(found)
    return names


def _mappable_indices(tokens: list[Token], func_name: str, var_names: set[str]) -> list[int]:
    """Token indices whose identifiers get renamed, in stream order."""
    out = []
    for j, t in enumerate(tokens):
        if t.kind != "ident":
            continue
        prev = tokens[j - 1] if j > 0 else None
        nxt = tokens[j + 1] if j + 1 < len(tokens) else None
        if prev is not None and prev.text in (".", "->", "goto", "case"):
            continue
        if prev is not None and prev.text in _TAGGED:
            continue
        at_stmt_start = prev is None or prev.text in ("{", "}", ";", ":")
        if at_stmt_start and nxt is not None and nxt.text == ":":
            continue  # label definition
        if t.text == func_name or t.text in var_names:
            out.append(j)
    return out


def anonymize_source(source: str) -> tuple[str, IdentifierMap]:
    """Rename user-defined identifiers in one C function to FUNk/VARk.

    Deterministic, token-count preserving, and idempotent on its own output.
    Raises AnonymizeError when the source does not look like a function
    definition.
    """
    tokens = lexer.code_tokens(source)
    if not tokens:
        raise AnonymizeError("empty source")
    shape = _function_shape(tokens)
    func_name = tokens[shape.name_index].text
    var_names = set(_parameter_names(tokens, shape)) | set(_local_names(tokens, shape))
    var_names.discard(func_name)

    mapped_idx = _mappable_indices(tokens, func_name, var_names)
    mapped_originals = {tokens[j].text for j in mapped_idx}
    surviving = {t.text for t in tokens if t.kind == "ident"} - mapped_originals

    fun_map: dict[str, str] = {}
    var_map: dict[str, str] = {}
    counters = {"FUN": 1, "VAR": 1}

    def fresh(prefix: str) -> str:
        while f"{prefix}{counters[prefix]}" in surviving:
            counters[prefix] += 1
        name = f"{prefix}{counters[prefix]}"
        counters[prefix] += 1
        return name

    pieces: list[str] = []
    cursor = 0
    for j in mapped_idx:
        t = tokens[j]
        if t.text == func_name:
            if t.text not in fun_map:
                fun_map[t.text] = fresh("FUN")
            sym = fun_map[t.text]
        else:
            if t.text not in var_map:
                var_map[t.text] = fresh("VAR")
            sym = var_map[t.text]
        pieces.append(source[cursor:t.start])
        pieces.append(sym)
        cursor = t.end
    pieces.append(source[cursor:])
    return "".join(pieces), IdentifierMap(function_names=fun_map, variable_names=var_map)


def invert_anonymization(source: str, mapping: IdentifierMap) -> str:
    """Apply the inverse renaming, recovering the original source exactly."""
    inv = mapping.inverse()
    tokens = lexer.code_tokens(source)
    func_syms = set(mapping.function_names.values())
    var_syms = set(mapping.variable_names.values())
    idx = _mappable_indices(tokens, "", func_syms | var_syms)
    pieces: list[str] = []
    cursor = 0
    for j in idx:
        t = tokens[j]
        if t.text in inv:
            pieces.append(source[cursor:t.start])
            pieces.append(inv[t.text])
            cursor = t.end
    pieces.append(source[cursor:])
    return "".join(pieces)


def anonymize_identifiers(sample: CodeSample) -> tuple[CodeSample, IdentifierMap]:
    """Anonymized copy of a sample; id, label, pair link, and date carry over."""
    new_source, mapping = anonymize_source(sample.source)
    new_sample = CodeSample.from_fields(
        sample.id, new_source, sample.set_kind,
        pair_id=sample.pair_id, timestamp=sample.timestamp, flags=sample.flags)
    assert new_sample.token_count == sample.token_count
    return new_sample, mapping


def build_identifier_setting(corpus: Corpus) -> tuple[Corpus, dict[str, IdentifierMap]]:
    """Per-sample anonymization over a whole corpus.

    Samples that fail to transform are kept verbatim and flagged UNTRANSFORMED,
    never dropped, so any existing split assignment still applies.
    """
    out: list[CodeSample] = []
    mappings: dict[str, IdentifierMap] = {}
    for s in corpus.samples:
        try:
            new_sample, mapping = anonymize_identifiers(s)
        except (AnonymizeError, lexer.LexError):
            new_sample = CodeSample.from_fields(
                s.id, s.source, s.set_kind, pair_id=s.pair_id,
                timestamp=s.timestamp, flags=s.flags + (UNTRANSFORMED,))
            mapping = IdentifierMap()
        out.append(new_sample)
        mappings[s.id] = mapping
    return (Corpus(tuple(out), provenance=corpus.provenance,
                   tokenizer_id=corpus.tokenizer_id), mappings)


class IdentifierAnonymizer(BaseEstimator, TransformerMixin):
    """Stateless transformer applying identifier substitution per sample.

    ``transform`` accepts a Corpus (returning one) or an iterable of
    CodeSample (returning a list); the fitted ``mappings_`` attribute exposes
    the per-sample renaming for reversibility audits.
    """

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        if isinstance(X, Corpus):
            transformed, self.mappings_ = build_identifier_setting(X)
            return transformed
        corpus = Corpus(tuple(X))
        transformed, self.mappings_ = build_identifier_setting(corpus)
        return list(transformed.samples)
