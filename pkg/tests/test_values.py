import pytest
from hypothesis import given, strategies as st

from tdbnet.values import BOOL, INT, TEXT, TS, ColorType, conforms, product, value_key


def test_scalar_conformance():
    assert conforms(5, INT)
    assert conforms(-3, INT)
    assert not conforms("5", INT)
    assert conforms("hi", TEXT)
    assert not conforms(5, TEXT)
    assert conforms(True, BOOL)
    assert conforms(1250, TS)


def test_bool_is_not_an_int_value():
    # bool is an int subclass in Python; the type system keeps them apart
    assert not conforms(True, INT)
    assert not conforms(False, TS)
    assert not conforms(1, BOOL)


def test_product_conformance():
    msg = product(INT, TEXT)
    assert conforms((1, "a"), msg)
    assert not conforms((1,), msg)
    assert not conforms(("a", 1), msg)
    assert not conforms([1, "a"], msg)


def test_product_labels():
    msg = product(INT, TEXT, labels=("mid", "body"))
    assert msg.field_index("body") == 1
    with pytest.raises(KeyError):
        msg.field_index("nope")
    with pytest.raises(ValueError):
        product(INT, TEXT, labels=("only_one",))


def test_no_nested_products():
    inner = product(INT, INT)
    with pytest.raises(ValueError):
        product(inner, TEXT)


def test_unknown_kind_rejected():
    with pytest.raises(ValueError):
        ColorType("float")
    with pytest.raises(ValueError):
        ColorType("product")  # products need components


def test_value_key_orders_across_types():
    mixed = ["b", 2, True, (1, "x"), False, 1, "a", (1, "a")]
    ordered = sorted(mixed, key=value_key)
    assert ordered == [False, True, 1, 2, "a", "b", (1, "a"), (1, "x")]


def test_value_key_rejects_non_values():
    with pytest.raises(TypeError):
        value_key(1.5)
    with pytest.raises(TypeError):
        value_key(None)


@given(st.lists(st.one_of(st.integers(), st.text(), st.booleans()), max_size=30))
def test_value_key_is_a_total_order(vals):
    ordered = sorted(vals, key=value_key)
    keys = [value_key(v) for v in ordered]
    assert keys == sorted(keys)
    # sorting again changes nothing
    assert sorted(ordered, key=value_key) == ordered
