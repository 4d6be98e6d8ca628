"""MTL formulas: syntax, parsing, signed distances and semantics."""
from .lengths import TemporalDirectionError, necessary_length, required_horizon
from .parser import FormulaSyntaxError, UnknownAtomError, parse_formula
from .predicates import (
    AtomicPredicate,
    Box,
    Halfspace,
    Metric,
    PredicateMap,
    signed_distance,
)
from .semantics import (
    boolean_signal,
    eval_boolean,
    eval_robust,
    eval_robust_oracle,
    robust_signal,
    trace_distance,
)
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
    false,
    fmt_time,
    pretty,
    to_time,
)

__all__ = [
    "Always", "And", "Atom", "AtomicPredicate", "Box", "Eventually", "Formula",
    "FormulaSyntaxError", "Halfspace", "Historically", "Interval", "Metric", "Not", "Once",
    "Or", "PredicateMap", "Since", "TemporalDirectionError", "Top", "UnknownAtomError",
    "Until", "boolean_signal", "eval_boolean", "eval_robust", "eval_robust_oracle", "false",
    "fmt_time", "necessary_length", "parse_formula", "pretty", "required_horizon",
    "robust_signal", "signed_distance", "to_time", "trace_distance",
]
