"""Shared plumbing for the pattern catalog.

Every bundle follows the same conventions:

* workload messages live in an ``inbox`` relation (message id, arrival time,
  payload fields); an ``inject`` transition moves each row into the input
  channel place once the clock reaches its arrival time and records the
  arrival in ``in_log``;
* observable results are written to ordinary relations (``out_log`` and
  friends) so conformance checks can read everything from the persistence
  layer of the trace.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..exprs import Now, Op, Param, Var
from ..net import (
    ActionCall,
    InputArc,
    Net,
    OutputArc,
    Place,
    Snapshot,
    Transition,
    initial_snapshot,
)
from ..persistence import Action, Atom, Column, FactTemplate, Query, Relation
from ..values import INT, TS, ColorType, product


@dataclass(frozen=True)
class IoPlaces:
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]
    exceptions: tuple[str, ...] = ()


@dataclass(frozen=True)
class PatternBundle:
    """A ready-to-run net with its initial snapshot and the place ids a
    caller wires against."""

    name: str
    net: Net
    initial: Snapshot
    io: IoPlaces
    params: tuple = ()

    @property
    def schema(self):
        return self.net.schema


@dataclass(frozen=True)
class EndpointStub:
    """Scripted remote endpoint: each call either fails immediately or
    responds after a delay.  The script is consumed in order and its last
    entry repeats forever."""

    steps: tuple[tuple[str, int], ...]

    def __post_init__(self) -> None:
        if not self.steps:
            raise ValueError("endpoint script must not be empty")
        for kind, delay in self.steps:
            if kind not in ("respond", "fail"):
                raise ValueError(f"unknown endpoint step kind {kind!r}")
            if delay < 0:
                raise ValueError("endpoint delay must be >= 0")

    @classmethod
    def healthy(cls) -> "EndpointStub":
        return cls((("respond", 0),))

    @classmethod
    def failing(cls) -> "EndpointStub":
        return cls((("fail", 0),))

    @classmethod
    def respond_after(cls, delay: int) -> "EndpointStub":
        return cls((("respond", delay),))

    def script_rows(self) -> list[tuple[int, str, int]]:
        return [(i, kind, delay) for i, (kind, delay) in enumerate(self.steps)]


INBOX = "inbox"
IN_LOG = "in_log"


def feed_relations(fields: tuple[tuple[str, ColorType], ...]) -> tuple[Relation, Relation]:
    inbox = Relation(
        INBOX,
        (Column("mid", INT), Column("at", TS)) + tuple(Column(n, c) for n, c in fields),
        ("mid",),
    )
    in_log = Relation(
        IN_LOG,
        (Column("mid", INT),) + tuple(Column(n, c) for n, c in fields),
        ("mid",),
    )
    return inbox, in_log


def feed_parts(fields: tuple[tuple[str, ColorType], ...], ch_in: str, token_tail: tuple = ()):
    """Query, action, view place, and inject transition for the inbox feed.

    The injected token is (mid, field values..., *token_tail).
    """
    names = [n for n, _ in fields]
    colors = [c for _, c in fields]
    bad = {"m", "a", "mid", "at"}.intersection(names)
    if bad or len(set(names)) != len(names):
        raise ValueError(f"payload field names must be distinct and avoid {sorted(bad)}")
    q_inbox = Query(
        "q_inbox",
        atoms=(Atom(INBOX, (Var("m"), Var("a")) + tuple(Var(n) for n in names)),),
        output=("m", "a") + tuple(names),
    )
    take = Action(
        "take_inbox",
        params=(("m", INT), ("a", TS)) + tuple(fields),
        dels=(FactTemplate(INBOX, (Param("m"), Param("a")) + tuple(Param(n) for n in names)),),
        adds=(FactTemplate(IN_LOG, (Param("m"),) + tuple(Param(n) for n in names)),),
    )
    v_inbox = Place("v_inbox", product(INT, TS, *colors), kind="view", query="q_inbox")
    inject = Transition(
        "inject",
        inputs=(InputArc("v_inbox", (Var("m"), Var("a")) + tuple(Var(n) for n in names)),),
        guard=Op(">=", (Now(), Var("a"))),
        actions=(
            ActionCall("take_inbox", (Var("m"), Var("a")) + tuple(Var(n) for n in names)),
        ),
        outputs=(
            OutputArc(ch_in, Op("tuple", (Var("m"),) + tuple(Var(n) for n in names) + token_tail)),
        ),
    )
    return q_inbox, take, v_inbox, inject


def with_workload(bundle: PatternBundle, arrivals) -> Snapshot:
    """Initial snapshot of a bundle with inbox rows for each (at, fields)
    arrival.  Message ids continue from whatever the snapshot already saw."""
    return extend_workload(bundle, bundle.initial, arrivals)


def extend_workload(bundle: PatternBundle, snapshot: Snapshot, arrivals) -> Snapshot:
    rows = list(snapshot.instance.all_rows())
    used = [values[0] for rel, values, _ in rows if rel in (INBOX, IN_LOG)]
    mid = max(used, default=-1) + 1
    for at, fields in arrivals:
        if at < 0:
            raise ValueError("arrival times must be >= 0")
        rows.append((INBOX, (mid, at) + tuple(fields), min(at, snapshot.clock)))
        mid += 1
    return _rebuild(bundle, snapshot, rows)


def replace_rows(bundle: PatternBundle, snapshot: Snapshot, relation: str, values_list) -> Snapshot:
    """Out-of-band instance surgery (operator intervention between runs):
    swap every row of one relation, stamped at the current clock."""
    rows = [r for r in snapshot.instance.all_rows() if r[0] != relation]
    rows.extend((relation, tuple(values), snapshot.clock) for values in values_list)
    return _rebuild(bundle, snapshot, rows)


def _rebuild(bundle: PatternBundle, snapshot: Snapshot, rows) -> Snapshot:
    net = bundle.net
    tokens = {
        place.id: list(snapshot.marking.tokens(place.id))
        for place in net.places
        if place.kind == "normal" and snapshot.marking.tokens(place.id)
    }
    return initial_snapshot(net, facts=rows, tokens=tokens, clock=snapshot.clock)
