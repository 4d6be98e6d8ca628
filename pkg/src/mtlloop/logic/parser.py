"""Recursive-descent parser for the MTL concrete syntax.

Grammar (loosest binding first)::

    or_expr   := and_expr ('|' and_expr)*
    and_expr  := temp_expr ('&' temp_expr)*
    temp_expr := unary (('U' | 'S') interval unary)*
    unary     := '!' unary | ('F' | 'G' | 'P' | 'H') interval unary | primary
    primary   := 'true' | 'false' | IDENT | '(' or_expr ')'
    interval  := '[' NUM ',' (NUM | 'inf') ')'
"""
from __future__ import annotations

import re
from dataclasses import dataclass

from .syntax import (
    Always,
    And,
    Atom,
    Eventually,
    Formula,
    Historically,
    Interval,
    Not,
    Once,
    Or,
    Since,
    Top,
    Until,
    atoms,
    false,
    to_time,
)


class FormulaSyntaxError(ValueError):
    """Raised for malformed formula text; carries the 0-based character offset."""

    def __init__(self, message: str, position: int, text: str = ""):
        self.position = position
        self.text = text
        super().__init__(f"{message} at position {position}")


class UnknownAtomError(ValueError):
    pass


@dataclass
class _Tok:
    kind: str
    value: str
    pos: int


_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+(?:\.\d*)?|\.\d+)|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)|(?P<sym>[!&|()\[\],]))"
)
_PREFIX_OPS = {"F": Eventually, "G": Always, "P": Once, "H": Historically}
_INFIX_OPS = {"U": Until, "S": Since}


def _tokenize(text: str) -> list[_Tok]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            raise FormulaSyntaxError(f"unexpected character {text[pos:].lstrip()[:1]!r}",
                                     len(text) - len(text[pos:].lstrip()), text)
        kind = m.lastgroup
        value = m.group(kind)
        start = m.start(kind)
        if kind == "ident":
            rest = text[m.end():].lstrip()
            if value in _PREFIX_OPS and rest.startswith("["):
                kind = "prefix"
            elif value in _INFIX_OPS and rest.startswith("["):
                kind = "infix"
            elif value in ("true", "false", "inf"):
                kind = value
        tokens.append(_Tok(kind, value, start))
        pos = m.end()
    tokens.append(_Tok("eof", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0

    @property
    def cur(self) -> _Tok:
        return self.toks[self.i]

    def error(self, message: str, tok: _Tok | None = None):
        tok = tok or self.cur
        raise FormulaSyntaxError(message, tok.pos, self.text)

    def take(self, kind: str, value: str | None = None) -> _Tok:
        tok = self.cur
        if tok.kind != kind or (value is not None and tok.value != value):
            want = value or kind
            got = tok.value or tok.kind
            self.error(f"expected {want!r}, found {got!r}")
        self.i += 1
        return tok

    def at(self, kind: str, value: str | None = None) -> bool:
        tok = self.cur
        return tok.kind == kind and (value is None or tok.value == value)

    def parse(self) -> Formula:
        node = self.or_expr()
        if not self.at("eof"):
            self.error(f"unexpected {self.cur.value!r}")
        return node

    def or_expr(self) -> Formula:
        node = self.and_expr()
        while self.at("sym", "|"):
            self.i += 1
            node = Or(node, self.and_expr())
        return node

    def and_expr(self) -> Formula:
        node = self.temp_expr()
        while self.at("sym", "&"):
            self.i += 1
            node = And(node, self.temp_expr())
        return node

    def temp_expr(self) -> Formula:
        node = self.unary()
        while self.at("infix"):
            op = _INFIX_OPS[self.take("infix").value]
            interval = self.interval()
            node = op(node, self.unary(), interval)
        return node

    def unary(self) -> Formula:
        if self.at("sym", "!"):
            self.i += 1
            return Not(self.unary())
        if self.at("prefix"):
            op = _PREFIX_OPS[self.take("prefix").value]
            interval = self.interval()
            return op(self.unary(), interval)
        return self.primary()

    def primary(self) -> Formula:
        tok = self.cur
        if tok.kind == "true":
            self.i += 1
            return Top()
        if tok.kind == "false":
            self.i += 1
            return false()
        if tok.kind == "ident":
            self.i += 1
            return Atom(tok.value)
        if self.at("sym", "("):
            self.i += 1
            node = self.or_expr()
            self.take("sym", ")")
            return node
        self.error(f"expected a formula, found {tok.value or tok.kind!r}")

    def interval(self) -> Interval:
        start = self.take("sym", "[")
        lo = self.take("num")
        self.take("sym", ",")
        if self.at("inf"):
            hi_text = self.take("inf").value
        else:
            hi_text = self.take("num").value
        self.take("sym", ")")
        try:
            return Interval(to_time(lo.value), to_time(hi_text))
        except ValueError as exc:
            raise FormulaSyntaxError(str(exc), start.pos, self.text) from None


def parse_formula(text: str, pmap=None) -> Formula:
    """Parse ``text`` into a formula; atoms are checked against ``pmap`` if given."""
    node = _Parser(text).parse()
    if pmap is not None:
        unknown = sorted(atoms(node) - set(pmap.names()))
        if unknown:
            raise UnknownAtomError(f"unknown atomic predicate(s): {', '.join(unknown)}")
    return node
