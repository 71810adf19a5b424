"""Rate limiting patterns: throttler (token-bucket of size one) and delayer.

The throttler admits a message only while it holds the capacity slot,
records the emission, and returns the slot after a fixed gate interval, so
admissions are spaced ``units_per_second // rate`` apart.  The delayer holds
each message until its age reaches the configured delay; messages do not
queue behind each other.
"""

from __future__ import annotations

from ..exprs import Age, Const, Op, Param, Var
from ..net import ActionCall, InputArc, Net, OutputArc, Place, Transition, initial_snapshot
from ..persistence import Action, Column, FactTemplate, Relation, Schema
from ..values import INT, TEXT, product
from .base import IoPlaces, PatternBundle, feed_parts, feed_relations

MSG = product(INT, TEXT, labels=("mid", "body"))


def _message_feed(ch_in: str):
    inbox, in_log = feed_relations((("body", TEXT),))
    q_inbox, take, v_inbox, inject = feed_parts((("body", TEXT),), ch_in)
    return inbox, in_log, q_inbox, take, v_inbox, inject


def build_throttler(rate: int, *, units_per_second: int = 1000) -> PatternBundle:
    """rate = messages admitted per second of model time."""
    if rate < 1:
        raise ValueError("rate must be >= 1")
    gate = units_per_second // rate
    if gate < 1:
        raise ValueError("rate exceeds clock resolution")

    inbox, in_log, q_inbox, take, v_inbox, inject = _message_feed("ch1")
    out_log = Relation("out_log", (Column("mid", INT), Column("body", TEXT)), ("mid",))
    emit = Action(
        "emit_out",
        params=(("m", INT), ("b", TEXT)),
        adds=(FactTemplate("out_log", (Param("m"), Param("b"))),),
    )

    admit = Transition(
        "t_admit",
        inputs=(
            InputArc("ch1", (Var("m"), Var("b"))),
            InputArc("cap", Var("u")),
        ),
        actions=(ActionCall("emit_out", (Var("m"), Var("b"))),),
        outputs=(OutputArc("ch2", Op("tuple", (Var("m"), Var("b")))),),
    )
    release = Transition(
        "t_release",
        inputs=(InputArc("ch2", (Var("m"), Var("b"))),),
        delay=(gate, gate),
        outputs=(
            OutputArc("ch3", Op("tuple", (Var("m"), Var("b")))),
            OutputArc("cap", Const(0)),
        ),
    )

    net = Net(
        places=(
            v_inbox,
            Place("ch1", MSG),
            Place("ch2", MSG),
            Place("ch3", MSG),
            Place("cap", INT),
        ),
        transitions=(inject, admit, release),
        schema=Schema((inbox, in_log, out_log)),
        queries=(q_inbox,),
        actions=(take, emit),
    )
    initial = initial_snapshot(net, facts=(), tokens={"cap": [0]}, clock=0)
    return PatternBundle(
        name="throttler",
        net=net,
        initial=initial,
        io=IoPlaces(inputs=("ch1",), outputs=("ch3",)),
        params=(("rate", rate), ("gate", gate)),
    )


def build_delayer(delay: int) -> PatternBundle:
    if delay < 0:
        raise ValueError("delay must be >= 0")

    inbox, in_log, q_inbox, take, v_inbox, inject = _message_feed("ch1")
    out_log = Relation("out_log", (Column("mid", INT), Column("body", TEXT)), ("mid",))
    emit = Action(
        "emit_out",
        params=(("m", INT), ("b", TEXT)),
        adds=(FactTemplate("out_log", (Param("m"), Param("b"))),),
    )

    forward = Transition(
        "t_forward",
        inputs=(InputArc("ch1", (Var("m"), Var("b"))),),
        guard=Op(">=", (Age("m"), Const(delay))),
        actions=(ActionCall("emit_out", (Var("m"), Var("b"))),),
        outputs=(OutputArc("ch3", Op("tuple", (Var("m"), Var("b")))),),
    )

    net = Net(
        places=(v_inbox, Place("ch1", MSG), Place("ch3", MSG)),
        transitions=(inject, forward),
        schema=Schema((inbox, in_log, out_log)),
        queries=(q_inbox,),
        actions=(take, emit),
    )
    initial = initial_snapshot(net, facts=(), tokens={}, clock=0)
    return PatternBundle(
        name="delayer",
        net=net,
        initial=initial,
        io=IoPlaces(inputs=("ch1",), outputs=("ch3",)),
        params=(("delay", delay),),
    )
