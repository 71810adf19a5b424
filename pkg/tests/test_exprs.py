"""Expression evaluation, pattern matching, and guard flip-time solving."""

import pytest

from tdbnet.exprs import (
    Age,
    Const,
    DbCount,
    DbMergeText,
    DefinitionError,
    EvalError,
    Now,
    Op,
    Param,
    Var,
    Wild,
    depends_on_time,
    eval_expr,
    guard_flip_time,
    match_pattern,
    pattern_vars,
    validate_time_usage,
    variables,
)
from tdbnet.persistence import Column, Instance, Relation, Schema
from tdbnet.values import INT, TEXT


def test_eval_basics():
    env = {"x": 4, "y": 10}
    assert eval_expr(Const(7), {}) == 7
    assert eval_expr(Var("x"), env) == 4
    assert eval_expr(Op("+", (Var("x"), Var("y"), Const(1))), env) == 15
    assert eval_expr(Op("-", (Var("y"), Var("x"))), env) == 6
    assert eval_expr(Op("*", (Var("x"), Const(3))), env) == 12
    assert eval_expr(Op("min", (Var("x"), Var("y"))), env) == 4
    assert eval_expr(Op("max", (Var("x"), Var("y"))), env) == 10


def test_eval_comparisons_and_logic():
    env = {"x": 4}
    assert eval_expr(Op("<", (Var("x"), Const(5))), env) is True
    assert eval_expr(Op(">=", (Var("x"), Const(5))), env) is False
    assert eval_expr(Op("!=", (Var("x"), Const(4))), env) is False
    assert eval_expr(Op("and", (Const(True), Op("=", (Var("x"), Const(4))))), env)
    assert eval_expr(Op("or", (Const(False), Const(True))), {})
    assert eval_expr(Op("not", (Const(False),)), {}) is True


def test_eval_tuple_builder():
    assert eval_expr(Op("tuple", (Const(1), Var("b"))), {"b": "x"}) == (1, "x")


def test_unbound_variable_raises():
    with pytest.raises(EvalError):
        eval_expr(Var("missing"), {})


def test_param_resolution():
    assert eval_expr(Param("p"), {}, args={"p": 9}) == 9
    with pytest.raises(EvalError):
        eval_expr(Param("p"), {})


def test_now_and_age():
    assert eval_expr(Now(), {}, now=130) == 130
    assert eval_expr(Age("m"), {}, now=300, ages={"m": 100}) == 200
    with pytest.raises(EvalError):
        eval_expr(Age("m"), {}, now=300)


def _instance():
    rel = Relation(
        "msgs", (Column("seq", INT), Column("ord", INT), Column("body", TEXT)), ("seq", "ord")
    )
    return Instance(
        Schema((rel,)),
        {"msgs": [((1, 2, "b"), 0), ((1, 1, "a"), 0), ((2, 1, "z"), 0)]},
    )


def test_db_count():
    inst = _instance()
    e = DbCount("msgs", (Var("s"), Wild(), Wild()))
    assert eval_expr(e, {"s": 1}, instance=inst) == 2
    assert eval_expr(e, {"s": 2}, instance=inst) == 1
    assert eval_expr(e, {"s": 3}, instance=inst) == 0
    with pytest.raises(EvalError):
        eval_expr(e, {"s": 1})  # no instance supplied


def test_db_merge_text_orders_by_ordinal():
    inst = _instance()
    e = DbMergeText("msgs", (Var("s"), Wild(), Wild()), order_col=1, text_col=2)
    assert eval_expr(e, {"s": 1}, instance=inst) == "ab"
    assert eval_expr(e, {"s": 2}, instance=inst) == "z"
    sep = DbMergeText("msgs", (Var("s"), Wild(), Wild()), order_col=1, text_col=2, sep="|")
    assert eval_expr(sep, {"s": 1}, instance=inst) == "a|b"


def test_variables_walks_all_nodes():
    e = Op("and", (Op(">", (Var("x"), Const(1))), Op("<", (Age("m"), Var("y")))))
    assert variables(e) == {"x", "y", "m"}
    assert variables(DbCount("msgs", (Var("s"), Wild(), Wild()))) == {"s"}


class TestMatchPattern:
    def test_tuple_pattern_binds(self):
        env = match_pattern((Var("a"), Var("b")), (1, "x"), {})
        assert env == {"a": 1, "b": "x"}

    def test_repeated_variable_must_agree(self):
        assert match_pattern((Var("a"), Var("a")), (1, 1), {}) == {"a": 1}
        assert match_pattern((Var("a"), Var("a")), (1, 2), {}) is None

    def test_prior_binding_respected(self):
        assert match_pattern(Var("a"), 5, {"a": 5}) == {"a": 5}
        assert match_pattern(Var("a"), 6, {"a": 5}) is None

    def test_const_and_wild(self):
        assert match_pattern((Const(1), Wild()), (1, "anything"), {}) == {}
        assert match_pattern((Const(1), Wild()), (2, "anything"), {}) is None

    def test_arity_mismatch(self):
        assert match_pattern((Var("a"), Var("b")), (1,), {}) is None
        assert match_pattern((Var("a"),), 1, {}) is None

    def test_pattern_vars(self):
        assert pattern_vars((Var("a"), Const(1), Wild(), Var("b"))) == ["a", "b"]
        assert pattern_vars(Var("x")) == ["x"]


class TestGuardFlipTime:
    """Earliest clock value at which a currently false guard turns true."""

    def test_age_threshold_from_zero(self):
        g = Op(">=", (Age("m"), Const(250)))
        assert guard_flip_time(g, {}, ages={"m": 0}, from_time=0) == 250

    def test_age_threshold_anchored_at_token_birth(self):
        g = Op(">=", (Age("m"), Const(250)))
        assert guard_flip_time(g, {}, ages={"m": 100}, from_time=0) == 350

    def test_now_threshold(self):
        g = Op(">=", (Now(), Const(130)))
        assert guard_flip_time(g, {}, from_time=0) == 130

    def test_never_true(self):
        assert guard_flip_time(Const(False), {}, from_time=0) is None

    def test_already_true_returns_from_time(self):
        g = Op(">=", (Now(), Const(10)))
        assert guard_flip_time(g, {}, from_time=50) == 50

    def test_conjunction_takes_later_flip(self):
        g = Op("and", (Op(">=", (Now(), Const(30))), Op(">=", (Age("m"), Const(100)))))
        assert guard_flip_time(g, {}, ages={"m": 0}, from_time=0) == 100

    def test_strictly_greater_flips_one_later(self):
        g = Op(">", (Now(), Const(130)))
        assert guard_flip_time(g, {}, from_time=0) == 131


def test_depends_on_time():
    assert depends_on_time(Now())
    assert depends_on_time(Op("+", (Const(1), Age("m"))))
    assert not depends_on_time(Op(">", (Var("x"), Const(5))))


def test_time_usage_rejects_multiplication():
    with pytest.raises(DefinitionError):
        validate_time_usage(Op("*", (Now(), Const(2))), "here")
    with pytest.raises(DefinitionError):
        validate_time_usage(Op("min", (Age("m"), Const(5))), "here")
    # additive and comparison use stays legal
    validate_time_usage(Op(">=", (Op("-", (Now(), Var("cr"))), Const(100))), "here")
    # and multiplication of time-free operands is fine
    validate_time_usage(Op("*", (Var("x"), Const(2))), "here")


def test_time_usage_rejects_time_inside_db_patterns():
    with pytest.raises(DefinitionError):
        validate_time_usage(DbCount("msgs", (Now(), Wild(), Wild())), "here")
