"""Structural types for timed db-nets: places (normal and view), transitions
with guards, delays, output and rollback arcs, markings, and snapshots.

A snapshot bundles the relational instance, the marking, and the integer
clock.  View places never store tokens of their own; their marking is the
bound query evaluated on the current instance, recomputed after every
committed firing.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from hashlib import sha256
from typing import Iterable, Mapping, Optional

from .exprs import (
    Age,
    Const,
    DbCount,
    DbMergeText,
    DefinitionError,
    Op,
    TRUE,
    Var,
    Wild,
    depends_on_time,
    pattern_vars,
    validate_time_usage,
    variables,
)
from .persistence import Action, Instance, Query, Schema, check_compliance, eval_query
from .values import ColorType, conforms, value_key


@dataclass(frozen=True)
class Token:
    value: object
    created_at: int = 0


@dataclass(frozen=True)
class Place:
    id: str
    color: ColorType
    kind: str = "normal"  # or "view"
    query: Optional[str] = None  # bound query name for view places

    def __post_init__(self) -> None:
        if self.kind not in ("normal", "view"):
            raise DefinitionError(f"place {self.id!r}: kind must be normal or view")
        if self.kind == "view" and not self.query:
            raise DefinitionError(f"place {self.id!r}: view place needs a bound query")
        if self.kind == "normal" and self.query:
            raise DefinitionError(f"place {self.id!r}: only view places bind queries")


@dataclass(frozen=True)
class InputArc:
    place: str
    pattern: object  # term or tuple of terms (Var/Const/Wild)


@dataclass(frozen=True)
class OutputArc:
    place: str
    expr: object
    when: Optional[object] = None  # token produced only if this guard holds


@dataclass(frozen=True)
class ActionCall:
    action: str
    args: tuple = ()


@dataclass(frozen=True)
class Transition:
    id: str
    inputs: tuple[InputArc, ...] = ()
    guard: object = TRUE
    delay: tuple[int, int] = (0, 0)
    outputs: tuple[OutputArc, ...] = ()
    rollbacks: tuple[OutputArc, ...] = ()
    actions: tuple[ActionCall, ...] = ()

    def __post_init__(self) -> None:
        lo, hi = self.delay
        if lo < 0 or hi < lo:
            raise DefinitionError(f"transition {self.id!r}: bad delay window {self.delay!r}")


@dataclass(frozen=True)
class Net:
    places: tuple[Place, ...]
    transitions: tuple[Transition, ...]
    schema: Schema
    queries: tuple[Query, ...] = ()
    actions: tuple[Action, ...] = ()

    def __post_init__(self) -> None:
        for seq, label in ((self.places, "place"), (self.transitions, "transition")):
            seen = set()
            for x in seq:
                if x.id in seen:
                    raise DefinitionError(f"duplicate {label} id {x.id!r}")
                seen.add(x.id)
        object.__setattr__(self, "_place_by_id", {p.id: p for p in self.places})
        object.__setattr__(self, "_query_by_name", {q.name: q for q in self.queries})
        object.__setattr__(self, "_action_by_name", {a.name: a for a in self.actions})

    def place(self, pid: str) -> Place:
        try:
            return self._place_by_id[pid]
        except KeyError:
            raise DefinitionError(f"unknown place {pid!r}") from None

    def query(self, name: str) -> Query:
        try:
            return self._query_by_name[name]
        except KeyError:
            raise DefinitionError(f"unknown query {name!r}") from None

    def action(self, name: str) -> Action:
        try:
            return self._action_by_name[name]
        except KeyError:
            raise DefinitionError(f"unknown action {name!r}") from None

    def fingerprint(self) -> str:
        """Stable digest of the net structure (dataclass reprs are
        deterministic here because no field holds a dict)."""
        cached = getattr(self, "_fingerprint", None)
        if cached is None:
            cached = sha256(repr((self.places, self.transitions, self.schema, self.queries, self.actions)).encode()).hexdigest()
            object.__setattr__(self, "_fingerprint", cached)
        return cached


def _token_sort(tokens: Iterable[Token]) -> tuple[Token, ...]:
    toks = list(tokens)
    try:
        # one place holds one color, so natural ordering matches value_key
        toks.sort(key=lambda t: (t.value, t.created_at))
    except TypeError:
        toks.sort(key=lambda t: (value_key(t.value), t.created_at))
    return tuple(toks)


class Marking:
    """Multiset of tokens per place, kept canonically ordered."""

    __slots__ = ("_tokens",)

    def __init__(self, tokens: Mapping[str, Iterable[Token]] | None = None):
        self._tokens: dict[str, tuple[Token, ...]] = {}
        if tokens:
            for pid, toks in tokens.items():
                self._tokens[pid] = _token_sort(toks)

    def tokens(self, pid: str) -> tuple[Token, ...]:
        return self._tokens.get(pid, ())

    def place_ids(self) -> list[str]:
        return sorted(pid for pid, toks in self._tokens.items() if toks)

    def size(self) -> int:
        return sum(len(t) for t in self._tokens.values())

    def updated(
        self,
        remove: Iterable[tuple[str, Token]] = (),
        add: Iterable[tuple[str, Token]] = (),
        views: Mapping[str, Iterable[Token]] | None = None,
    ) -> "Marking":
        new = dict(self._tokens)
        touched: set[str] = set()
        for pid, tok in remove:
            pool = list(new.get(pid, ()))
            pool.remove(tok)  # removal from a sorted tuple stays sorted
            new[pid] = tuple(pool)
        for pid, tok in add:
            new[pid] = new.get(pid, ()) + (tok,)
            touched.add(pid)
        if views:
            for pid, toks in views.items():
                new[pid] = tuple(toks)
                touched.add(pid)
        for pid in touched:
            new[pid] = _token_sort(new[pid])
        m = Marking.__new__(Marking)
        m._tokens = new
        return m

    def __eq__(self, other) -> bool:
        if not isinstance(other, Marking):
            return NotImplemented
        a = {pid: t for pid, t in self._tokens.items() if t}
        b = {pid: t for pid, t in other._tokens.items() if t}
        return a == b

    def __repr__(self) -> str:
        parts = ", ".join(f"{pid}:{len(toks)}" for pid, toks in sorted(self._tokens.items()) if toks)
        return f"Marking({parts or 'empty'})"


@dataclass(frozen=True)
class Snapshot:
    instance: Instance
    marking: Marking
    clock: int = 0

    def advanced(self, clock: int) -> "Snapshot":
        if clock < self.clock:
            raise ValueError("clock never moves backwards")
        return replace(self, clock=clock)


def view_tokens(net: Net, place: Place, instance: Instance) -> tuple[Token, ...]:
    query = net.query(place.query)
    rows = eval_query(instance, query)
    if place.color.kind == "product":
        return tuple(Token(row, 0) for row in rows)
    return tuple(Token(row[0], 0) for row in rows)


def refresh_views(
    net: Net,
    instance: Instance,
    marking: Marking,
    changed_relations: set[str] | None = None,
) -> Marking:
    """Recompute view-place markings from the instance.

    When changed_relations is given, only views whose bound query mentions
    one of those relations are recomputed (the others cannot have changed).
    """
    views: dict[str, tuple[Token, ...]] = {}
    for place in net.places:
        if place.kind != "view":
            continue
        if changed_relations is not None:
            query = net.query(place.query)
            if not any(a.relation in changed_relations for a in query.atoms) and not any(
                isinstance(side, DbCount) and side.relation in changed_relations
                for f in query.filters
                for side in (f.lhs, f.rhs)
            ):
                continue
        views[place.id] = view_tokens(net, place, instance)
    if not views:
        return marking
    return marking.updated(views=views)


def initial_snapshot(
    net: Net,
    facts: Iterable[tuple] = (),
    tokens: Mapping[str, Iterable[Token]] | None = None,
    clock: int = 0,
) -> Snapshot:
    """Build a snapshot from raw facts (relation, values, at) and tokens for
    normal places; view places are computed.  Bare values are wrapped as
    tokens created at ``clock``."""
    instance = Instance.from_facts(net.schema, facts)
    bad = check_compliance(instance, net.schema)
    if bad:
        raise DefinitionError(
            "initial facts violate schema constraints: "
            + "; ".join(v.message for v in bad[:3])
        )
    wrapped = {
        pid: [t if isinstance(t, Token) else Token(t, clock) for t in toks]
        for pid, toks in (tokens or {}).items()
    }
    marking = Marking(wrapped)
    for pid in wrapped:
        if net.place(pid).kind == "view":
            raise DefinitionError(f"place {pid!r} is a view place; its marking is derived")
    marking = refresh_views(net, instance, marking)
    return Snapshot(instance, marking, clock)


# ---------------------------------------------------------------------------
# static validation

def validate_net(net: Net) -> None:
    """Check structural sanity: references resolve, variables are bound,
    age() only touches normal-place variables, time usage is affine, and
    rollback arcs only appear on transitions that write the database."""
    for place in net.places:
        if place.kind == "view":
            query = net.query(place.query)
            if query.params:
                raise DefinitionError(
                    f"place {place.id!r}: view-bound query {query.name!r} must be parameterless"
                )
            width = len(query.output)
            expected = len(place.color.components) if place.color.kind == "product" else 1
            if width != expected:
                raise DefinitionError(
                    f"place {place.id!r}: query yields {width} columns, color has {expected}"
                )

    for t in net.transitions:
        bound: set[str] = set()
        normal_bound: set[str] = set()

        def resolve(pid: str) -> Place:
            try:
                return net.place(pid)
            except DefinitionError:
                raise DefinitionError(
                    f"transition {t.id!r} references unknown place {pid!r}"
                ) from None

        for arc in t.inputs:
            place = resolve(arc.place)
            for v in pattern_vars(arc.pattern):
                bound.add(v)
                if place.kind == "normal":
                    normal_bound.add(v)

        def need(vs: set[str], where: str) -> None:
            for v in sorted(vs):
                if v not in bound:
                    raise DefinitionError(
                        f"transition {t.id!r}: variable {v!r} in {where} is not bound by any input arc"
                    )

        need(variables(t.guard), "guard")
        validate_time_usage(t.guard, f"transition {t.id!r} guard")
        _check_ages(t.guard, normal_bound, t.id)
        for arc in t.outputs + t.rollbacks:
            resolve(arc.place)
            need(variables(arc.expr), f"arc to {arc.place!r}")
            if arc.when is not None:
                need(variables(arc.when), f"arc condition on {arc.place!r}")
                _check_ages(arc.when, normal_bound, t.id)
            _check_ages(arc.expr, normal_bound, t.id)
        if t.rollbacks and not t.actions:
            raise DefinitionError(
                f"transition {t.id!r}: rollback arcs without database actions can never fire them"
            )
        for call in t.actions:
            action = net.action(call.action)
            if len(call.args) != len(action.params):
                raise DefinitionError(
                    f"transition {t.id!r}: action {call.action!r} takes {len(action.params)} args"
                )
            for a in call.args:
                need(variables(a), f"action {call.action!r} argument")
                validate_time_usage(a, f"transition {t.id!r} action argument")
                _check_ages(a, normal_bound, t.id)


def _check_ages(e, normal_bound: set[str], tid: str) -> None:
    if isinstance(e, Age):
        if e.var not in normal_bound:
            raise DefinitionError(
                f"transition {tid!r}: age({e.var!r}) needs a variable bound by a normal place"
            )
    elif isinstance(e, Op):
        for a in e.args:
            _check_ages(a, normal_bound, tid)
