"""Propositional formulas with next, and the GR(1) specification template.

Formulas are parsed by a lark LALR grammar (see _GRAMMAR): "->" binds loosest
and is right associative, then "|", "&" and the prefix operators "!" and X(...).

X(...) may wrap a boolean combination of atoms; it is normalised by pushing
next onto the atoms, so that the AST only ever contains Next(atom).
"""

import logging
import re
from collections.abc import Collection, Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

from lark import Lark, Token, Transformer, v_args
from lark.exceptions import (UnexpectedCharacters, UnexpectedEOF, UnexpectedInput,
                             UnexpectedToken)

logger = logging.getLogger(__name__)

SECTIONS = ("ENV_VARS", "ENV_INIT", "ENV_SAFETY", "ENV_JUSTICE",
            "SYS_INIT", "SYS_SAFETY", "SYS_JUSTICE")


class SpecError(ValueError):
    """Semantically invalid specification."""


class SpecSyntaxError(SpecError):
    def __init__(self, message: str, position: int, text: str, line: Optional[int] = None):
        self.position = position
        self.line = line
        self.column = position + 1
        where = f"line {line}, column {self.column}" if line else f"column {self.column}"
        super().__init__(f"{message} at {where}: {text!r}")


class ValuationError(ValueError):
    """A valuation does not cover an atom the formula needs."""


@dataclass(frozen=True)
class Const:
    value: bool


@dataclass(frozen=True)
class Atom:
    name: str


@dataclass(frozen=True)
class Next:
    name: str


@dataclass(frozen=True)
class Not:
    arg: "PropFormula"


@dataclass(frozen=True)
class And:
    left: "PropFormula"
    right: "PropFormula"


@dataclass(frozen=True)
class Or:
    left: "PropFormula"
    right: "PropFormula"


@dataclass(frozen=True)
class Implies:
    left: "PropFormula"
    right: "PropFormula"


PropFormula = Union[Const, Atom, Next, Not, And, Or, Implies]
TRUE = Const(True)
FALSE = Const(False)

_GRAMMAR = r"""
    ?start: implies

    ?implies: disj
            | disj "->" implies     -> implies
    ?disj: conj
         | disj "|" conj            -> or_
    ?conj: unary
         | conj "&" unary           -> and_
    ?unary: "!" unary               -> not_
          | "X" "(" implies ")"     -> next_
          | "(" implies ")"
          | NAME                    -> atom

    NAME: /[A-Za-z_][A-Za-z0-9_]*/

    %import common.WS_INLINE
    %ignore WS_INLINE
"""

_parser = Lark(_GRAMMAR, parser="lalr", propagate_positions=True)


@v_args(inline=True)
class _ToProp(Transformer[Token, PropFormula]):
    def implies(self, left: PropFormula, right: PropFormula) -> PropFormula:
        return Implies(left, right)

    def or_(self, left: PropFormula, right: PropFormula) -> PropFormula:
        return Or(left, right)

    def and_(self, left: PropFormula, right: PropFormula) -> PropFormula:
        return And(left, right)

    def not_(self, arg: PropFormula) -> PropFormula:
        return Not(arg)

    def next_(self, arg: PropFormula) -> PropFormula:
        return _push_next(arg)

    def atom(self, name: Token) -> PropFormula:
        if name in ("true", "TRUE"):
            return TRUE
        if name in ("false", "FALSE"):
            return FALSE
        return Atom(str(name))


def _push_next(f: PropFormula) -> PropFormula:
    if isinstance(f, Atom):
        return Next(f.name)
    if isinstance(f, Const):
        return f
    if isinstance(f, Not):
        return Not(_push_next(f.arg))
    if isinstance(f, (And, Or, Implies)):
        return type(f)(_push_next(f.left), _push_next(f.right))
    raise SpecError("Nested next is not supported")


def _syntax_error(e: UnexpectedInput, text: str, line: Optional[int]) -> SpecSyntaxError:
    if isinstance(e, UnexpectedCharacters):
        return SpecSyntaxError("Unexpected character", e.column - 1, text, line)
    at_end = isinstance(e, UnexpectedEOF) or (isinstance(e, UnexpectedToken)
                                             and e.token.type == "$END")
    if at_end:
        message = "Expected ')'" if "RPAR" in e.expected else "Unexpected end of formula"
        return SpecSyntaxError(message, len(text), text, line)
    return SpecSyntaxError("Unexpected token", e.column - 1, text, line)


def parse_prop(text: str, *, line: Optional[int] = None) -> PropFormula:
    if not text.strip():
        raise SpecSyntaxError("Empty formula", len(text), text, line)
    try:
        tree = _parser.parse(text)
    except UnexpectedInput as e:
        raise _syntax_error(e, text, line) from None
    for outer in tree.find_data("next_"):
        for inner in outer.iter_subtrees():
            if inner is not outer and inner.data == "next_":
                raise SpecSyntaxError("Nested next is not supported", inner.meta.column - 1,
                                      text, line)
    return _ToProp().transform(tree)


_PRECEDENCE = {Implies: 1, Or: 2, And: 3}


def _prec(f: PropFormula) -> int:
    return _PRECEDENCE.get(type(f), 4)


def print_prop(f: PropFormula) -> str:
    """Canonical text that parses back to the same tree."""
    if isinstance(f, Const):
        return "true" if f.value else "false"
    if isinstance(f, Atom):
        return f.name
    if isinstance(f, Next):
        return f"X({f.name})"
    if isinstance(f, Not):
        inner = print_prop(f.arg)
        return f"!{inner}" if _prec(f.arg) == 4 else f"!({inner})"

    op = {And: "&", Or: "|", Implies: "->"}[type(f)]
    p = _prec(f)
    left, right = print_prop(f.left), print_prop(f.right)
    if isinstance(f, Implies):
        left_paren, right_paren = _prec(f.left) <= p, _prec(f.right) < p
    else:
        left_paren, right_paren = _prec(f.left) < p, _prec(f.right) <= p
    if left_paren:
        left = f"({left})"
    if right_paren:
        right = f"({right})"
    return f"{left} {op} {right}"


def atoms(f: PropFormula) -> Iterator[str]:
    """Names of current-step atoms."""
    if isinstance(f, Atom):
        yield f.name
    elif isinstance(f, Not):
        yield from atoms(f.arg)
    elif isinstance(f, (And, Or, Implies)):
        yield from atoms(f.left)
        yield from atoms(f.right)


def next_atoms(f: PropFormula) -> Iterator[str]:
    if isinstance(f, Next):
        yield f.name
    elif isinstance(f, Not):
        yield from next_atoms(f.arg)
    elif isinstance(f, (And, Or, Implies)):
        yield from next_atoms(f.left)
        yield from next_atoms(f.right)


def has_next(f: PropFormula) -> bool:
    return any(True for _ in next_atoms(f))


Assignment = Mapping[str, bool]


def eval_prop(f: PropFormula, current: Assignment,
              next_env: Optional[Assignment] = None) -> bool:
    if isinstance(f, Const):
        return f.value
    if isinstance(f, Atom):
        try:
            return current[f.name]
        except KeyError:
            raise ValuationError(f"Valuation does not assign '{f.name}'") from None
    if isinstance(f, Next):
        if next_env is None:
            raise ValuationError(f"X({f.name}) needs a next-step valuation")
        try:
            return next_env[f.name]
        except KeyError:
            raise ValuationError(f"Next valuation does not assign '{f.name}'") from None
    if isinstance(f, Not):
        return not eval_prop(f.arg, current, next_env)
    if isinstance(f, And):
        return eval_prop(f.left, current, next_env) and eval_prop(f.right, current, next_env)
    if isinstance(f, Or):
        return eval_prop(f.left, current, next_env) or eval_prop(f.right, current, next_env)
    return (not eval_prop(f.left, current, next_env)) or eval_prop(f.right, current, next_env)


class _LabelAssignment(Mapping[str, bool]):
    """Treats a set of true propositions over a universe as a total assignment."""

    def __init__(self, true: Collection[str], universe: Collection[str]):
        self._true = true
        self._universe = universe

    def __getitem__(self, name: str) -> bool:
        if name not in self._universe:
            raise KeyError(name)
        return name in self._true

    def __iter__(self) -> Iterator[str]:
        return iter(self._universe)

    def __len__(self) -> int:
        return len(self._universe)


def assignment(true: Collection[str], universe: Collection[str]) -> Assignment:
    return _LabelAssignment(frozenset(true), frozenset(universe))


def conjunction(formulas: Sequence[PropFormula]) -> PropFormula:
    if not formulas:
        return TRUE
    f = formulas[0]
    for g in formulas[1:]:
        f = And(f, g)
    return f


@dataclass(frozen=True)
class Gr1Spec:
    """psi_e -> psi_s; safety lines carry an implicit always, justice lines always-eventually."""

    env_vars: tuple[str, ...]
    env_init: PropFormula = TRUE
    env_safety: tuple[PropFormula, ...] = ()
    env_justice: tuple[PropFormula, ...] = (TRUE,)
    sys_init: PropFormula = TRUE
    sys_safety: tuple[PropFormula, ...] = ()
    sys_justice: tuple[PropFormula, ...] = (TRUE,)
    sys_justice_text: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self) -> None:
        env = set(self.env_vars)
        for f in self.env_safety:
            bad = set(next_atoms(f)) - env
            if bad:
                raise SpecError(f"ENV_SAFETY may only use next on env atoms, got {sorted(bad)}")
        for section, formulas in (("ENV_INIT", (self.env_init,)), ("SYS_INIT", (self.sys_init,)),
                                  ("ENV_JUSTICE", self.env_justice),
                                  ("SYS_SAFETY", self.sys_safety),
                                  ("SYS_JUSTICE", self.sys_justice)):
            if any(has_next(f) for f in formulas):
                raise SpecError(f"{section} formulas must not use next")
        if not self.env_justice or not self.sys_justice:
            raise SpecError("Justice lists must not be empty (use true)")

    def formulas(self) -> Iterator[PropFormula]:
        yield self.env_init
        yield from self.env_safety
        yield from self.env_justice
        yield self.sys_init
        yield from self.sys_safety
        yield from self.sys_justice

    def check_universe(self, universe: Collection[str]) -> None:
        """Every atom must be declared, either as an env var or by the world."""
        known = set(universe) | set(self.env_vars)
        unknown = sorted({a for f in self.formulas() for a in (*atoms(f), *next_atoms(f))}
                         - known)
        if unknown:
            raise SpecError(f"Unknown atomic propositions: {unknown}")


def _split_sections(document: str) -> dict[str, list[tuple[int, str]]]:
    sections: dict[str, list[tuple[int, str]]] = {}
    current: Optional[str] = None
    for lineno, raw in enumerate(document.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        header = re.fullmatch(r"\[\s*([A-Z_]+)\s*\]", line)
        if header:
            current = header.group(1)
            if current not in SECTIONS:
                raise SpecSyntaxError(f"Unknown section '{current}'", 0, raw, lineno)
            if current in sections:
                raise SpecSyntaxError(f"Duplicate section '{current}'", 0, raw, lineno)
            sections[current] = []
        elif current is None:
            raise SpecSyntaxError("Formula outside of a section", 0, raw, lineno)
        else:
            sections[current].append((lineno, line))
    missing = [s for s in SECTIONS if s not in sections]
    if missing:
        raise SpecError(f"Missing sections: {missing}")
    return sections


def parse_gr1(document: str, universe: Optional[Collection[str]] = None) -> Gr1Spec:
    sections = _split_sections(document)
    env_vars = tuple(name for _, line in sections["ENV_VARS"]
                     for name in re.split(r"[,\s]+", line) if name)
    for name in env_vars:
        if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", name) or name == "X":
            raise SpecError(f"Invalid env variable name: '{name}'")

    def formulas(section: str) -> tuple[PropFormula, ...]:
        return tuple(parse_prop(line, line=lineno) for lineno, line in sections[section])

    env_justice = formulas("ENV_JUSTICE") or (TRUE,)
    sys_justice = formulas("SYS_JUSTICE") or (TRUE,)
    spec = Gr1Spec(
        env_vars=env_vars,
        env_init=conjunction(formulas("ENV_INIT")),
        env_safety=formulas("ENV_SAFETY"),
        env_justice=env_justice,
        sys_init=conjunction(formulas("SYS_INIT")),
        sys_safety=formulas("SYS_SAFETY"),
        sys_justice=sys_justice,
        sys_justice_text=tuple(print_prop(f) for f in sys_justice))
    if universe is not None:
        spec.check_universe(universe)
    logger.debug("Parsed GR(1) spec: %d env vars, %d/%d safety, %d/%d justice",
                 len(env_vars), len(spec.env_safety), len(spec.sys_safety),
                 len(spec.env_justice), len(spec.sys_justice))
    return spec


def load_gr1(path: Union[str, Path], universe: Optional[Collection[str]] = None) -> Gr1Spec:
    return parse_gr1(Path(path).read_text(), universe)
