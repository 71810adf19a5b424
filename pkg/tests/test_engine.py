"""Control layer: enablement, firing, clock advancement, runs, replay."""

import pytest

from tdbnet.engine import (
    FiringError,
    ViewConsistencyError,
    advance_clock,
    enabled,
    fire,
    replay,
    run,
)
from tdbnet.exprs import Const, DefinitionError, Op, Param, Var
from tdbnet.formats import serialize_trace
from tdbnet.net import (
    ActionCall,
    InputArc,
    Net,
    OutputArc,
    Place,
    Snapshot,
    Token,
    Transition,
    initial_snapshot,
)
from tdbnet.persistence import Action, Column, FactTemplate, Relation, Schema
from tdbnet.patterns import build_throttler, with_workload
from tdbnet.scenarios import halting_bundle
from tdbnet.values import INT, TEXT
from tdbnet.workloads import parse_workload


# ---------------------------------------------------------------------------
# enabled


def test_guard_false_never_enabled():
    net = Net(
        places=(Place("p", INT),),
        transitions=(
            Transition("t", inputs=(InputArc("p", Var("x")),), guard=Const(False)),
        ),
        schema=Schema(()),
    )
    snap = initial_snapshot(net, tokens={"p": [1]})
    assert enabled(net, snap) == []


def test_empty_marking_not_enabled(timer_net):
    snap = initial_snapshot(timer_net)
    assert enabled(timer_net, snap) == []


def test_view_binding_from_endpoint_fact(trip_net):
    snap = initial_snapshot(
        trip_net, facts=[("Endpoints", ("ep1", 6), 0), ("Endpoints", ("ep2", 2), 0)]
    )
    assert enabled(trip_net, snap) == [("trip", {"epid": "ep1", "nexc": 6}, 0)]


def test_unbound_variable_rejected_with_names():
    net = Net(
        places=(Place("p", INT), Place("q", INT)),
        transitions=(
            Transition(
                "leaky",
                inputs=(InputArc("p", Var("x")),),
                outputs=(OutputArc("q", Var("z")),),
            ),
        ),
        schema=Schema(()),
    )
    snap = initial_snapshot(net, tokens={"p": [1]})
    with pytest.raises(DefinitionError) as err:
        enabled(net, snap)
    assert "leaky" in str(err.value) and "'z'" in str(err.value)


# ---------------------------------------------------------------------------
# fire


def test_timer_fires_at_window_and_stamps_token(timer_net):
    snap = initial_snapshot(timer_net, tokens={"ch2": [Token("msg", 0)]})
    after, ev = fire(timer_net, snap, "Timer", {"m": "msg"}, at=200)
    assert ev.time == 200 and ev.outcome == "committed"
    assert ev.consumed == (("ch2", Token("msg", 0)),)
    assert ev.produced == (("ch3", Token("msg", 200)),)
    assert after.marking.tokens("ch3") == (Token("msg", 200),)
    assert after.clock == 200
    # no action calls: the database is untouched
    assert ev.added == () and ev.deleted == ()
    assert after.instance == snap.instance


def test_fire_outside_delay_window_rejected(timer_net):
    snap = initial_snapshot(timer_net, tokens={"ch2": [Token("msg", 0)]})
    with pytest.raises(FiringError):
        fire(timer_net, snap, "Timer", {"m": "msg"}, at=199)
    with pytest.raises(FiringError):
        fire(timer_net, snap, "Timer", {"m": "msg"}, at=201)


def test_fire_unknown_or_disabled_rejected(timer_net):
    snap = initial_snapshot(timer_net, tokens={"ch2": [Token("msg", 0)]})
    with pytest.raises(DefinitionError):
        fire(timer_net, snap, "NoSuch", {}, at=0)
    with pytest.raises(FiringError):
        fire(timer_net, snap, "Timer", {"m": "other"}, at=200)


def _rollback_net():
    kv = Relation("kv", (Column("k", INT),), ("k",))
    add = Action("add_kv", params=(("k", INT),), adds=(FactTemplate("kv", (Param("k"),)),))
    t = Transition(
        "write",
        inputs=(InputArc("ch", Var("k")),),
        actions=(ActionCall("add_kv", (Var("k"),)),),
        rollbacks=(OutputArc("retry", Var("k")),),
    )
    return Net(
        places=(Place("ch", INT), Place("retry", INT)),
        transitions=(t,),
        schema=Schema((kv,)),
        actions=(add,),
    )


def test_rollback_arc_requeues_token_and_keeps_instance():
    net = _rollback_net()
    snap = initial_snapshot(net, facts=[("kv", (1,), 0)], tokens={"ch": [1]})
    after, ev = fire(net, snap, "write", {"k": 1}, at=0)
    assert ev.outcome == "rolled_back"
    assert ev.added == () and ev.deleted == ()
    assert after.instance == snap.instance
    assert after.marking.tokens("retry") == (Token(1, 0),)
    assert after.marking.tokens("ch") == ()


def test_violation_without_rollback_halts_frozen():
    bundle = halting_bundle()
    tr = run(bundle.net, bundle.initial)
    assert [ev.outcome for ev in tr.events] == ["committed", "halted"]
    # frozen at the last committed instance: exactly one kv row
    assert tr.final.instance.match_values("kv", None) == [(1,)]
    assert tr.final.clock == tr.events[-1].time


# ---------------------------------------------------------------------------
# advance_clock


def test_advance_clock_immediate_when_tmin_zero(trip_net):
    snap = initial_snapshot(trip_net, facts=[("Endpoints", ("ep1", 6), 0)], clock=40)
    assert advance_clock(trip_net, snap) == 40


def test_advance_clock_timer_window(timer_net):
    snap = initial_snapshot(timer_net, tokens={"ch2": [Token("m", 0)]}, clock=50)
    assert advance_clock(timer_net, snap) == 250


def test_advance_clock_quiescent(timer_net):
    snap = initial_snapshot(timer_net)
    assert advance_clock(timer_net, snap) is None


# ---------------------------------------------------------------------------
# run


def test_run_on_empty_marking_produces_no_events(timer_net):
    tr = run(timer_net, initial_snapshot(timer_net))
    assert tr.events == ()
    assert tr.final == tr.initial


def test_run_rejects_unknown_policy(timer_net):
    with pytest.raises(ValueError):
        run(timer_net, initial_snapshot(timer_net), policy="chaotic")


def test_run_max_steps_caps_execution():
    bundle = build_throttler(5)
    arrivals = parse_workload("throttler", "burst:10@0")
    tr = run(bundle.net, with_workload(bundle, arrivals), max_steps=3)
    assert len(tr.events) == 3


def test_run_until_bounds_the_clock():
    bundle = build_throttler(5)
    arrivals = parse_workload("throttler", "burst:10@0")
    tr = run(bundle.net, with_workload(bundle, arrivals), until=400)
    assert tr.final.clock <= 400


def _throttled_trace(policy="eager", seed=None):
    bundle = build_throttler(5)
    arrivals = parse_workload("throttler", "burst:8@0")
    return bundle, run(bundle.net, with_workload(bundle, arrivals), policy=policy, seed=seed)


def test_trace_times_monotone_and_tokens_stamped():
    _, tr = _throttled_trace()
    times = [ev.time for ev in tr.events]
    assert times == sorted(times)
    for ev in tr.events:
        for _pid, tok in ev.produced:
            assert tok.created_at == ev.time
        for rel, values, at in ev.added:
            assert at == ev.time


def test_conservation_consumed_matches_input_inscriptions():
    from tdbnet.exprs import match_pattern

    bundle, tr = _throttled_trace()
    by_id = {t.id: t for t in bundle.net.transitions}
    for ev in tr.events:
        t = by_id[ev.transition]
        env = dict(ev.binding)
        assert len(ev.consumed) == len(t.inputs)
        for (pid, tok), arc in zip(ev.consumed, t.inputs):
            assert pid == arc.place
            got = match_pattern(arc.pattern, tok.value, {})
            assert got is not None
            for name, value in got.items():
                assert env[name] == value


def test_replay_reproduces_final_snapshot():
    bundle, tr = _throttled_trace()
    final = replay(bundle.net, tr)  # verify=True raises on any divergence
    assert final.instance == tr.final.instance
    assert final.marking == tr.final.marking
    assert final.clock == tr.final.clock


def test_same_seed_same_bytes_different_seed_allowed_to_differ():
    _, a = _throttled_trace(policy="random", seed=11)
    _, b = _throttled_trace(policy="random", seed=11)
    assert serialize_trace(a) == serialize_trace(b)
    _, c = _throttled_trace()
    _, d = _throttled_trace()
    assert serialize_trace(c) == serialize_trace(d)


def test_run_with_view_checks_passes_on_catalog_pattern():
    bundle = build_throttler(5)
    arrivals = parse_workload("throttler", "burst:5@0")
    tr = run(bundle.net, with_workload(bundle, arrivals), check_views=True)
    assert any(ev.outcome == "committed" for ev in tr.events)


def test_run_rejects_non_compliant_initial_instance():
    bundle = halting_bundle()
    kv = bundle.net.schema.relation("kv")
    from tdbnet.persistence import Instance

    broken = Instance(bundle.net.schema, {"kv": [((1,), 0), ((1,), 5)]})
    with pytest.raises(DefinitionError):
        run(bundle.net, Snapshot(broken, bundle.initial.marking, 0))
    assert kv.key == ("k",)


# ---------------------------------------------------------------------------
# snapshots and markings


def test_snapshot_clock_never_goes_backwards(timer_net):
    snap = initial_snapshot(timer_net, clock=10)
    assert snap.advanced(15).clock == 15
    with pytest.raises(ValueError):
        snap.advanced(9)


def test_initial_snapshot_rejects_tokens_on_view_places(trip_net):
    with pytest.raises(DefinitionError):
        initial_snapshot(trip_net, tokens={"v_endpoints": [("ep1", 6)]})


def test_initial_snapshot_rejects_bad_facts(trip_net):
    with pytest.raises(DefinitionError):
        initial_snapshot(trip_net, facts=[("Endpoints", ("ep1",), 0)])


def test_view_consistency_error_is_an_assertion():
    # scenario harnesses catch AssertionError; keep that contract stable
    assert issubclass(ViewConsistencyError, AssertionError)
