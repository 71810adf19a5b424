"""Small expression language used by guards, arc inscriptions, action
arguments, and query filters.

Expressions are immutable prefix trees.  They may read:

* variables bound by input-arc patterns,
* ``now()``, the firing (or enablement) time being evaluated,
* ``age(x)``, the difference between now and the creation time of the token
  that bound ``x``,
* ``count(rel, pattern)``, the number of facts of ``rel`` matching a
  pattern of constants, bound variables, and wildcards,
* ``merge_text(rel, pattern, order_col, text_col)``, the concatenation of a
  text column over the matching facts, ordered by another column.

Time dependence (``now``/``age``) is restricted to +/- chains and
comparisons so that the instant at which a guard flips can be computed
exactly; ``validate_time_usage`` rejects anything else.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Optional

from .values import value_key


class DefinitionError(ValueError):
    """A net, query, or action is malformed."""


class EvalError(ValueError):
    """An expression could not be evaluated under the given environment."""


@dataclass(frozen=True)
class Const:
    value: object


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Param:
    """Placeholder in query/action templates, substituted from call args."""

    name: str


@dataclass(frozen=True)
class Wild:
    """Anonymous position in a match pattern."""


@dataclass(frozen=True)
class Now:
    pass


@dataclass(frozen=True)
class Age:
    var: str


@dataclass(frozen=True)
class Op:
    """n-ary operator node.  Comparison ops yield bools, ``tuple`` builds a
    tuple value, the rest are arithmetic/boolean."""

    op: str
    args: tuple


@dataclass(frozen=True)
class DbCount:
    relation: str
    terms: tuple


@dataclass(frozen=True)
class DbMergeText:
    relation: str
    terms: tuple
    order_col: int
    text_col: int
    sep: str = ""


Expr = object  # any of the node classes above

TRUE = Const(True)

_CMP = {
    "=": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
}
_ARITH = {
    "+": lambda a, b: a + b,
    "-": lambda a, b: a - b,
    "*": lambda a, b: a * b,
    "min": min,
    "max": max,
}


def resolve_term(term, env: Mapping[str, object], args: Mapping[str, object] | None = None):
    """Resolve a pattern term to a concrete value, or None for a wildcard."""
    if isinstance(term, Const):
        return term.value
    if isinstance(term, Var):
        if term.name not in env:
            raise EvalError(f"unbound variable {term.name!r}")
        return env[term.name]
    if isinstance(term, Param):
        if args is None or term.name not in args:
            raise EvalError(f"unbound parameter {term.name!r}")
        return args[term.name]
    if isinstance(term, Wild):
        return None
    raise EvalError(f"not a pattern term: {term!r}")


def eval_expr(
    e,
    env: Mapping[str, object],
    *,
    instance=None,
    now: int = 0,
    ages: Mapping[str, int] | None = None,
    args: Mapping[str, object] | None = None,
):
    t = type(e)
    if t is Const:
        return e.value
    if t is Var:
        try:
            return env[e.name]
        except KeyError:
            raise EvalError(f"unbound variable {e.name!r}") from None
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        if e.name not in env:
            raise EvalError(f"unbound variable {e.name!r}")
        return env[e.name]
    if isinstance(e, Param):
        if args is None or e.name not in args:
            raise EvalError(f"unbound parameter {e.name!r}")
        return args[e.name]
    if isinstance(e, Now):
        return now
    if isinstance(e, Age):
        if ages is None or e.var not in ages:
            raise EvalError(f"age() of variable {e.var!r} not bound by a normal place")
        return now - ages[e.var]
    if isinstance(e, DbCount):
        if instance is None:
            raise EvalError("count() needs a persistence instance")
        pattern = tuple(resolve_term(t, env, args) if not isinstance(t, Wild) else None for t in e.terms)
        return instance.count_matching(e.relation, pattern)
    if isinstance(e, DbMergeText):
        if instance is None:
            raise EvalError("merge_text() needs a persistence instance")
        pattern = tuple(resolve_term(t, env, args) if not isinstance(t, Wild) else None for t in e.terms)
        rows = instance.match_values(e.relation, pattern)
        rows = sorted(rows, key=lambda vs: value_key(vs[e.order_col]))
        return e.sep.join(str(vs[e.text_col]) for vs in rows)
    if isinstance(e, Op):
        if e.op in ("and", "or"):
            vals = [eval_expr(a, env, instance=instance, now=now, ages=ages, args=args) for a in e.args]
            return all(vals) if e.op == "and" else any(vals)
        if e.op == "not":
            return not eval_expr(e.args[0], env, instance=instance, now=now, ages=ages, args=args)
        if e.op == "tuple":
            return tuple(eval_expr(a, env, instance=instance, now=now, ages=ages, args=args) for a in e.args)
        vals = [eval_expr(a, env, instance=instance, now=now, ages=ages, args=args) for a in e.args]
        if e.op in _CMP:
            return _CMP[e.op](vals[0], vals[1])
        if e.op in _ARITH:
            out = vals[0]
            for v in vals[1:]:
                out = _ARITH[e.op](out, v)
            return out
        raise EvalError(f"unknown operator {e.op!r}")
    raise EvalError(f"not an expression: {e!r}")


def variables(e) -> set[str]:
    """All Var names appearing in an expression (Age vars included)."""
    out: set[str] = set()
    _walk_vars(e, out)
    return out


def _walk_vars(e, out: set[str]) -> None:
    if isinstance(e, Var):
        out.add(e.name)
    elif isinstance(e, Age):
        out.add(e.var)
    elif isinstance(e, Op):
        for a in e.args:
            _walk_vars(a, out)
    elif isinstance(e, (DbCount, DbMergeText)):
        for t in e.terms:
            _walk_vars(t, out)


def depends_on_time(e) -> bool:
    if isinstance(e, (Now, Age)):
        return True
    if isinstance(e, Op):
        return any(depends_on_time(a) for a in e.args)
    return False


_TIME_SAFE_OPS = {"+", "-", "and", "or", "not"} | set(_CMP)


def validate_time_usage(e, where: str) -> None:
    """Reject now()/age() under operators that would make flip-time solving
    inexact (multiplication, min/max, tuple building, count patterns)."""
    if isinstance(e, Op):
        if depends_on_time(e) and e.op not in _TIME_SAFE_OPS:
            raise DefinitionError(f"{where}: now()/age() not allowed under {e.op!r}")
        for a in e.args:
            validate_time_usage(a, where)
    elif isinstance(e, (DbCount, DbMergeText)):
        for t in e.terms:
            if depends_on_time(t):
                raise DefinitionError(f"{where}: now()/age() not allowed inside db patterns")


def _affine(e, env, instance, ages, args) -> tuple[int, int]:
    """Return (coefficient of now, constant) for a time-affine integer
    expression.  Only +/- combine time-dependent operands, which
    validate_time_usage guarantees."""
    if isinstance(e, Now):
        return (1, 0)
    if isinstance(e, Age):
        if ages is None or e.var not in ages:
            raise EvalError(f"age() of variable {e.var!r} not bound by a normal place")
        return (1, -ages[e.var])
    if isinstance(e, Op) and e.op in ("+", "-") and depends_on_time(e):
        k, c = _affine(e.args[0], env, instance, ages, args)
        for a in e.args[1:]:
            k2, c2 = _affine(a, env, instance, ages, args)
            if e.op == "+":
                k, c = k + k2, c + c2
            else:
                k, c = k - k2, c - c2
        return (k, c)
    v = eval_expr(e, env, instance=instance, now=0, ages=ages, args=args)
    if not isinstance(v, int) or isinstance(v, bool):
        raise EvalError("time-affine expression must be integer valued")
    return (0, v)


def _breakpoints(e, env, instance, ages, args, out: set[int]) -> None:
    if isinstance(e, Op):
        if e.op in _CMP and depends_on_time(e):
            ka, ca = _affine(e.args[0], env, instance, ages, args)
            kb, cb = _affine(e.args[1], env, instance, ages, args)
            dk, dc = ka - kb, ca - cb
            if dk != 0:
                # dk*now + dc <op> 0 changes truth near now = -dc/dk
                q = -dc / dk
                base = int(q // 1)
                out.update((base - 1, base, base + 1, base + 2))
        else:
            for a in e.args:
                _breakpoints(a, env, instance, ages, args, out)


def guard_flip_time(
    guard,
    env: Mapping[str, object],
    *,
    instance=None,
    ages: Mapping[str, int] | None = None,
    args: Mapping[str, object] | None = None,
    from_time: int = 0,
) -> Optional[int]:
    """Earliest integer u >= from_time at which the guard evaluates true,
    or None if it never will (under an otherwise unchanged snapshot)."""

    def truth(u: int) -> bool:
        return bool(eval_expr(guard, env, instance=instance, now=u, ages=ages, args=args))

    if truth(from_time):
        return from_time
    pts: set[int] = set()
    _breakpoints(guard, env, instance, ages, args, pts)
    for u in sorted(p for p in pts if p > from_time):
        if truth(u):
            return u
    return None


def match_pattern(pattern, value, env: Mapping[str, object]) -> Optional[dict]:
    """Match an input-arc pattern against a token value.

    A pattern is a single term or a tuple of terms (Var binds, Const must be
    equal, Wild matches anything).  Returns the extended environment or None.
    """
    if isinstance(pattern, tuple):
        if not isinstance(value, tuple) or len(value) != len(pattern):
            return None
        new = dict(env)
        for t, v in zip(pattern, value):
            if not _match_term(t, v, new):
                return None
        return new
    new = dict(env)
    return new if _match_term(pattern, value, new) else None


def _match_term(term, v, env: dict) -> bool:
    t = type(term)
    if t is Var:
        prior = env.setdefault(term.name, v)
        return prior is v or prior == v
    if t is Wild or isinstance(term, Wild):
        return True
    if t is Const or isinstance(term, Const):
        return term.value == v
    if isinstance(term, Var):
        if term.name in env:
            return env[term.name] == v
        env[term.name] = v
        return True
    raise DefinitionError(f"input patterns allow Var/Const/Wild only, got {term!r}")


def pattern_vars(pattern) -> list[str]:
    terms: Iterable = pattern if isinstance(pattern, tuple) else (pattern,)
    return [t.name for t in terms if isinstance(t, Var)]
