"""Execution engine for timed db-nets.

Semantics in brief:

* ``enabled`` lists (transition, binding) pairs whose input patterns match
  distinct tokens and whose guard holds at the snapshot clock; the earliest
  firing time of a freshly enabled pair is ``clock + delay_min``.
* ``fire`` consumes the matched tokens, evaluates action arguments against
  the pre-firing instance, applies the actions atomically, produces output
  tokens, and refreshes every view place.  A constraint violation either
  produces tokens along the rollback arcs (outcome ``rolled_back``, instance
  reverted) or, absent rollback arcs, freezes the run at the last committed
  instance (outcome ``halted``).
* ``run`` is a discrete-event loop.  Delay windows are anchored at the
  moment a specific binding became enabled, which the loop tracks by
  visiting every instant at which a time-dependent guard flips.  The eager
  policy fires, among the candidates due earliest, the first by transition
  id then canonical binding order; the seeded-random policy draws the pair
  and the firing time within the delay window from a seeded generator.

Traces replay exactly: folding the recorded events over the initial
snapshot reproduces every intermediate and the final snapshot.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional

from .exprs import (
    DefinitionError,
    Var,
    depends_on_time,
    eval_expr,
    guard_flip_time,
    match_pattern,
    pattern_vars,
)
from .net import Marking, Net, Place, Snapshot, Token, Transition, refresh_views, validate_net, view_tokens
from .persistence import ConstraintViolation, apply_action_delta, check_compliance
from .values import conforms, value_key


class FiringError(ValueError):
    """fire() called with a pair that is not enabled or a time outside the
    delay window."""


class ViewConsistencyError(AssertionError):
    """A view place diverged from its bound query (debug validator)."""


@dataclass(frozen=True)
class FiringEvent:
    step: int
    time: int
    transition: str
    binding: tuple  # sorted (var, value) pairs
    consumed: tuple  # (place_id, Token) pairs, view reads included
    produced: tuple  # (place_id, Token) pairs
    added: tuple  # (relation, values, at) rows inserted
    deleted: tuple  # (relation, values, at) rows removed
    outcome: str  # committed | rolled_back | halted


@dataclass(frozen=True)
class TraceMeta:
    net_hash: str
    policy: str
    seed: Optional[int]


@dataclass(frozen=True)
class Trace:
    meta: TraceMeta
    initial: Snapshot
    events: tuple
    final: Snapshot


# ---------------------------------------------------------------------------
# candidate enumeration

class _Cand:
    __slots__ = ("transition", "env", "matches", "ages", "_items")

    def __init__(self, transition: Transition, env: dict, matches: tuple, ages: dict):
        self.transition = transition
        self.env = env
        self.matches = matches  # ((place_id, Token, is_view), ...)
        self.ages = ages
        self._items = None

    def binding_items(self) -> tuple:
        if self._items is None:
            self._items = tuple(sorted(self.env.items(), key=lambda kv: kv[0]))
        return self._items

    def bkey(self) -> tuple:
        return tuple((k, value_key(v)) for k, v in self.binding_items())

    def onset_key(self) -> tuple:
        # identity only (dict key / dedup); values are hashable as-is
        sig = tuple((pid, tok.value, tok.created_at) for pid, tok, _ in self.matches)
        return (self.transition.id, self.binding_items(), sig)


def _cand_sorted(cands: list["_Cand"]) -> list["_Cand"]:
    """Canonical binding order; natural comparison with a value_key
    fallback for pools mixing value types."""
    try:
        return sorted(cands, key=_Cand.binding_items)
    except TypeError:
        return sorted(cands, key=_Cand.bkey)


def _ensure_valid(net: Net) -> None:
    if not getattr(net, "_validated", False):
        validate_net(net)
        object.__setattr__(net, "_validated", True)


_NO_FAST = object()


def _arc_fast(arc):
    """(var names, binding-items layout) for an all-variable pattern, else
    None; cached on the arc."""
    info = getattr(arc, "_fast", _NO_FAST)
    if info is not _NO_FAST:
        return info
    p = arc.pattern
    info = None
    if type(p) is Var:
        info = ((p.name,), ((p.name, None),))
    elif type(p) is tuple and all(type(term) is Var for term in p):
        names = tuple(term.name for term in p)
        if len(set(names)) == len(names):
            layout = tuple(
                (name, idx) for name, idx in sorted((n, i) for i, n in enumerate(names))
            )
            info = (names, layout)
    object.__setattr__(arc, "_fast", info)
    return info


def _enumerate_fast(t: Transition, arc, pool, is_view: bool) -> list[_Cand]:
    names, layout = arc._fast
    single = layout[0][1] is None
    width = len(names)
    out: list[_Cand] = []
    prev = None
    for tok in pool:
        if tok == prev:  # pool is sorted, duplicates are adjacent
            continue
        prev = tok
        v = tok.value
        if single:
            env = {names[0]: v}
            items = ((names[0], v),)
        else:
            if type(v) is not tuple or len(v) != width:
                continue
            env = dict(zip(names, v))
            items = tuple((name, v[idx]) for name, idx in layout)
        ages = {} if is_view else dict.fromkeys(names, tok.created_at)
        cand = _Cand(t, env, ((arc.place, tok, is_view),), ages)
        cand._items = items
        out.append(cand)
    return out


def _enumerate(net: Net, snapshot: Snapshot, t: Transition) -> list[_Cand]:
    """All distinct-token matches of a transition's input arcs, in pool
    order.  Guards are not evaluated here."""
    if len(t.inputs) == 1:
        arc = t.inputs[0]
        if _arc_fast(arc) is not None:
            place = net.place(arc.place)
            return _enumerate_fast(
                t, arc, snapshot.marking.tokens(place.id), place.kind == "view"
            )
    partial: list[tuple[dict, dict, list]] = [({}, {}, [])]  # env, used, matches
    for arc in t.inputs:
        place = net.place(arc.place)
        pool = snapshot.marking.tokens(place.id)
        is_view = place.kind == "view"
        grown: list[tuple[dict, dict, list]] = []
        for env, used, matches in partial:
            taken = used.get(place.id, ())
            for idx, tok in enumerate(pool):
                if idx in taken:
                    continue
                env2 = match_pattern(arc.pattern, tok.value, env)
                if env2 is None:
                    continue
                used2 = dict(used)
                used2[place.id] = taken + (idx,)
                grown.append((env2, used2, matches + [(place.id, tok, is_view)]))
        partial = grown
        if not partial:
            return []
    out = []
    seen = set()
    for env, _, matches in partial:
        ages = {}
        for arc, (pid, tok, is_view) in zip(t.inputs, matches):
            if not is_view:
                for v in pattern_vars(arc.pattern):
                    ages[v] = tok.created_at
        cand = _Cand(t, env, tuple(matches), ages)
        key = cand.onset_key()
        if key not in seen:
            seen.add(key)
            out.append(cand)
    return out


def _transitions_by_id(net: Net) -> tuple[Transition, ...]:
    cached = getattr(net, "_by_id", None)
    if cached is None:
        cached = tuple(sorted(net.transitions, key=lambda tr: tr.id))
        object.__setattr__(net, "_by_id", cached)
    return cached


def _guard_time_dep(t: Transition) -> bool:
    """Whether clock progress alone can change the guard's truth; cached.
    A time-independent guard that fails now keeps failing until the next
    firing changes the snapshot, so flip-time solving is pointless."""
    dep = getattr(t, "_time_dep", None)
    if dep is None:
        dep = depends_on_time(t.guard)
        object.__setattr__(t, "_time_dep", dep)
    return dep


def _flip_time(t: Transition, snap: Snapshot, cand: _Cand, from_time: int) -> Optional[int]:
    if not _guard_time_dep(t):
        return None
    return guard_flip_time(
        t.guard, cand.env, instance=snap.instance, ages=cand.ages, from_time=from_time
    )


def _guard_true(net: Net, snapshot: Snapshot, cand: _Cand, now: int) -> bool:
    return bool(
        eval_expr(
            cand.transition.guard,
            cand.env,
            instance=snapshot.instance,
            now=now,
            ages=cand.ages,
        )
    )


def enabled(net: Net, snapshot: Snapshot) -> list[tuple[str, dict, int]]:
    """Currently enabled (transition id, binding, earliest firing time)
    triples, deterministically ordered by transition id then canonical
    binding order."""
    _ensure_valid(net)
    out = []
    seen = set()
    for t in _transitions_by_id(net):
        for cand in _cand_sorted(_enumerate(net, snapshot, t)):
            if not _guard_true(net, snapshot, cand, snapshot.clock):
                continue
            key = (t.id, cand.binding_items())
            if key in seen:
                continue
            seen.add(key)
            out.append((t.id, dict(cand.env), snapshot.clock + t.delay[0]))
    return out


def advance_clock(net: Net, snapshot: Snapshot) -> Optional[int]:
    """Minimum earliest firing time over everything that is enabled now or
    will become enabled by clock progress alone; None when quiescent."""
    _ensure_valid(net)
    best: Optional[int] = None
    for t in net.transitions:
        for cand in _enumerate(net, snapshot, t):
            if _guard_true(net, snapshot, cand, snapshot.clock):
                u = snapshot.clock
            else:
                u = _flip_time(t, snapshot, cand, snapshot.clock)
                if u is None:
                    continue
            ft = u + t.delay[0]
            if best is None or ft < best:
                best = ft
    return best


# ---------------------------------------------------------------------------
# firing

def _produce(net: Net, arcs, cand: _Cand, instance, at: int) -> list[tuple[str, Token]]:
    out = []
    for arc in arcs:
        if arc.when is not None:
            keep = eval_expr(arc.when, cand.env, instance=instance, now=at, ages=cand.ages)
            if not keep:
                continue
        value = eval_expr(arc.expr, cand.env, instance=instance, now=at, ages=cand.ages)
        place = net.place(arc.place)
        if not conforms(value, place.color):
            raise DefinitionError(
                f"transition {cand.transition.id!r}: value {value!r} does not fit place {place.id!r}"
            )
        out.append((place.id, Token(value, at)))
    return out


def _execute(net: Net, snapshot: Snapshot, cand: _Cand, at: int, step: int) -> tuple[Snapshot, FiringEvent]:
    t = cand.transition
    consumed = tuple((pid, tok) for pid, tok, _ in cand.matches)
    removals = [(pid, tok) for pid, tok, is_view in cand.matches if not is_view]

    pre = snapshot.instance
    calls = []
    for call in t.actions:
        action = net.action(call.action)
        argvals = [
            eval_expr(a, cand.env, instance=pre, now=at, ages=cand.ages) for a in call.args
        ]
        calls.append((action, argvals))

    work = pre
    added: list[tuple] = []
    deleted: list[tuple] = []
    violation: Optional[ConstraintViolation] = None
    for action, argvals in calls:
        res = apply_action_delta(work, action, argvals, at)
        if isinstance(res, ConstraintViolation):
            violation = res
            break
        work, adds, dels = res
        added.extend(adds)
        deleted.extend(dels)

    if violation is not None:
        if t.rollbacks:
            produced = _produce(net, t.rollbacks, cand, pre, at)
            marking = snapshot.marking.updated(remove=removals, add=produced)
            snap2 = Snapshot(pre, marking, at)
            outcome = "rolled_back"
        else:
            produced = []
            snap2 = Snapshot(pre, snapshot.marking, at)
            outcome = "halted"
        event = FiringEvent(
            step, at, t.id, cand.binding_items(), consumed, tuple(produced), (), (), outcome
        )
        return snap2, event

    produced = _produce(net, t.outputs, cand, pre, at)
    changed = {rel for rel, _, _ in added} | {rel for rel, _, _ in deleted}
    marking = snapshot.marking.updated(remove=removals, add=produced)
    marking = refresh_views(net, work, marking, changed)
    snap2 = Snapshot(work, marking, at)
    event = FiringEvent(
        step,
        at,
        t.id,
        cand.binding_items(),
        consumed,
        tuple(produced),
        tuple(added),
        tuple(deleted),
        "committed",
    )
    return snap2, event


def fire(
    net: Net, snapshot: Snapshot, transition: str, binding: Mapping[str, object], at: int, step: int = 0
) -> tuple[Snapshot, FiringEvent]:
    """Fire one enabled pair at time ``at``.

    ``at`` must lie in the delay window anchored at the snapshot clock.  Use
    run() for multi-step execution, where windows anchor at the moment of
    enablement instead.
    """
    _ensure_valid(net)
    t = next((tr for tr in net.transitions if tr.id == transition), None)
    if t is None:
        raise DefinitionError(f"unknown transition {transition!r}")
    items = tuple(sorted(binding.items()))
    cands = [
        c
        for c in sorted(_enumerate(net, snapshot, t), key=_Cand.bkey)
        if c.binding_items() == items and _guard_true(net, snapshot, c, snapshot.clock)
    ]
    if not cands:
        raise FiringError(f"transition {transition!r} is not enabled under binding {dict(binding)!r}")
    lo, hi = snapshot.clock + t.delay[0], snapshot.clock + t.delay[1]
    if not (lo <= at <= hi):
        raise FiringError(
            f"firing time {at} outside delay window [{lo}, {hi}] of transition {transition!r}"
        )
    return _execute(net, snapshot, cands[0], at, step)


# ---------------------------------------------------------------------------
# runs

def _check_view_consistency(net: Net, snapshot: Snapshot) -> None:
    for place in net.places:
        if place.kind != "view":
            continue
        expect = view_tokens(net, place, snapshot.instance)
        got = snapshot.marking.tokens(place.id)
        if expect != got:
            raise ViewConsistencyError(
                f"view place {place.id!r}: marking {got!r} != query result {expect!r}"
            )


def run(
    net: Net,
    initial: Snapshot,
    *,
    policy: str = "eager",
    seed: Optional[int] = None,
    max_steps: int = 10_000,
    until: Optional[int] = None,
    check_views: bool = False,
) -> Trace:
    """Execute until quiescence, halt, max_steps events, or the clock passing
    ``until``.  Deterministic for a fixed (net, initial, policy, seed)."""
    _ensure_valid(net)
    bad = check_compliance(initial.instance)
    if bad:
        raise DefinitionError(f"initial instance violates constraints: {bad[0].message}")
    if policy not in ("eager", "random"):
        raise ValueError(f"unknown policy {policy!r}")
    rng = random.Random(seed if seed is not None else 0) if policy == "random" else None

    meta = TraceMeta(net.fingerprint(), policy, seed if policy == "random" else None)
    events: list[FiringEvent] = []
    snap = initial
    final = initial  # snapshot after the last event; clock advances between
    # events are cursor movement only, so traces replay exactly
    if check_views:
        _check_view_consistency(net, snap)
    onsets: dict = {}

    while len(events) < max_steps:
        if policy == "eager":
            step_result = _eager_step(net, snap, onsets, until)
        else:
            step_result = _random_step(net, snap, rng, until)
        if step_result is None:
            break
        kind, payload = step_result
        if kind == "advance":
            snap = snap.advanced(payload)
            continue
        cand, at = payload
        snap, event = _execute(net, snap, cand, at, len(events))
        final = snap
        events.append(event)
        if check_views and event.outcome == "committed":
            _check_view_consistency(net, snap)
        if event.outcome == "halted":
            break

    return Trace(meta, initial, tuple(events), final)


def _eager_step(net: Net, snap: Snapshot, onsets: dict, until: Optional[int]):
    """Pick the next action for the eager policy.

    Returns ("fire", (cand, at)), ("advance", clock), or None at quiescence.
    Mutates ``onsets``, the map from candidate identity to the time its
    enablement began (tracked only where the delay window needs it).
    """
    clock = snap.clock
    best_instant: Optional[_Cand] = None
    best_instant_key = None
    best_fire = None  # (ft, tid, bkey, cand)
    min_flip: Optional[int] = None
    new_onsets: dict = {}

    for t in _transitions_by_id(net):
        dmin = t.delay[0]
        if dmin == 0:
            if best_instant is not None:
                continue  # cannot beat the tie-break and needs no onset tracking
            # first passing candidate in canonical order wins; flip times of
            # candidates after it are irrelevant because we fire immediately
            for cand in _cand_sorted(_enumerate(net, snap, t)):
                if _guard_true(net, snap, cand, clock):
                    best_instant = cand
                    best_instant_key = (t.id, cand.binding_items())
                    break
                u = _flip_time(t, snap, cand, clock + 1)
                if u is not None and (min_flip is None or u < min_flip):
                    min_flip = u
            continue
        for cand in _enumerate(net, snap, t):
            if _guard_true(net, snap, cand, clock):
                key = cand.onset_key()
                onset = onsets.get(key, clock)
                new_onsets[key] = onset
                ft = max(onset + dmin, clock)
                if ft == clock:
                    if best_instant is None or (t.id, cand.binding_items()) < best_instant_key:
                        best_instant = cand
                        best_instant_key = (t.id, cand.binding_items())
                elif best_fire is None or (ft, t.id, cand.binding_items()) < best_fire[:3]:
                    best_fire = (ft, t.id, cand.binding_items(), cand)
            else:
                u = _flip_time(t, snap, cand, clock + 1)
                if u is not None and (min_flip is None or u < min_flip):
                    min_flip = u

    onsets.clear()
    onsets.update(new_onsets)

    if best_instant is not None:
        if until is not None and clock > until:
            return None
        return ("fire", (best_instant, clock))
    choices = []
    if best_fire is not None:
        choices.append(best_fire[0])
    if min_flip is not None:
        choices.append(min_flip)
    if not choices:
        return None
    target = min(choices)
    if until is not None and target > until:
        return None
    if min_flip is not None and (best_fire is None or min_flip < best_fire[0]):
        return ("advance", min_flip)
    ft, _, _, cand = best_fire
    if not _guard_true(net, snap, cand, ft):
        # the guard held at enablement but lapsed before the window opened;
        # let time pass and reschedule from there
        return ("advance", ft)
    return ("fire", (cand, ft))


def _random_step(net: Net, snap: Snapshot, rng: random.Random, until: Optional[int]):
    clock = snap.clock
    cands = []
    seen = set()
    min_flip: Optional[int] = None
    for t in _transitions_by_id(net):
        for cand in _cand_sorted(_enumerate(net, snap, t)):
            if _guard_true(net, snap, cand, clock):
                key = (t.id, cand.binding_items())
                if key not in seen:
                    seen.add(key)
                    cands.append(cand)
            else:
                u = _flip_time(t, snap, cand, clock + 1)
                if u is not None and (min_flip is None or u < min_flip):
                    min_flip = u
    if cands:
        cand = cands[rng.randrange(len(cands))]
        lo, hi = cand.transition.delay
        at = clock + rng.randint(lo, hi)
        if until is not None and at > until:
            return None
        return ("fire", (cand, at))
    if min_flip is None:
        return None
    if until is not None and min_flip > until:
        return None
    return ("advance", min_flip)


def replay(net: Net, trace: Trace, *, verify: bool = True) -> Snapshot:
    """Fold the recorded events over the initial snapshot.

    With verify=True (default) every recomputed event and the final snapshot
    must match the recording exactly.
    """
    _ensure_valid(net)
    snap = trace.initial
    for ev in trace.events:
        t = next((tr for tr in net.transitions if tr.id == ev.transition), None)
        if t is None:
            raise DefinitionError(f"trace names unknown transition {ev.transition!r}")
        if ev.time > snap.clock:
            snap = snap.advanced(ev.time)
        match = None
        for cand in sorted(_enumerate(net, snap, t), key=_Cand.bkey):
            consumed = tuple((pid, tok) for pid, tok, _ in cand.matches)
            if (
                cand.binding_items() == ev.binding
                and consumed == ev.consumed
                and _guard_true(net, snap, cand, ev.time)
            ):
                match = cand
                break
        if match is None:
            raise FiringError(
                f"replay: event {ev.step} ({ev.transition!r}) is not enabled under its binding"
            )
        snap, got = _execute(net, snap, match, ev.time, ev.step)
        if verify and got != ev:
            raise FiringError(f"replay: event {ev.step} diverged: {got!r} != {ev!r}")
    if verify and not (
        snap.instance == trace.final.instance
        and snap.marking == trace.final.marking
        and snap.clock == trace.final.clock
    ):
        raise FiringError("replay: final snapshot diverged from the recorded one")
    return snap
