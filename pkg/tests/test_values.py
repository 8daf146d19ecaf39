"""Value model and variable store tests."""

import random
from decimal import Decimal

import pytest

from taskprog.values import (
    CoercionFailed,
    PathThroughNonObject,
    ScopeUnderflow,
    Table,
    UnboundVariable,
    VariableStore,
    canonical_json,
    canonical_text,
    coerce,
    interpolate,
    kind_of,
    loads_value,
    parse_number,
    print_number,
    table_from_csv_text,
)


class TestStore:
    def test_set_then_get(self):
        store = VariableStore()
        store.set_var("userName", "Alice")
        assert store.get_var("userName") == "Alice"

    def test_dotted_path_autocreates_objects(self):
        store = VariableStore()
        store.set_var("product.price", Decimal(1200))
        store.set_var("product.name", "Laptop")
        assert store.get_var("product.price") == Decimal(1200)
        assert store.get_var("product.name") == "Laptop"
        assert kind_of(store.get_var("product")) == "object"

    def test_path_through_non_object(self):
        store = VariableStore()
        store.set_var("x", Decimal(3))
        with pytest.raises(PathThroughNonObject):
            store.set_var("x.y", Decimal(1))
        with pytest.raises(PathThroughNonObject):
            store.get_var("x.y")

    def test_unbound(self):
        with pytest.raises(UnboundVariable):
            VariableStore().get_var("ghost")

    def test_loop_iteration_special(self):
        store = VariableStore()
        frame = store.push_loop("3")
        frame["iteration"] = 3
        assert store.get_var("loop.iteration") == Decimal(3)

    def test_loop_special_resolves_innermost(self):
        store = VariableStore()
        outer = store.push_loop("1")
        outer["iteration"] = 5
        inner = store.push_loop("1.1")
        inner["iteration"] = 2
        assert store.get_var("loop.iteration") == Decimal(2)
        store.pop_loop()
        assert store.get_var("loop.iteration") == Decimal(5)

    def test_scopes_shadow_globals(self):
        store = VariableStore()
        store.set_var("x", "global")
        store.push_scope()
        store.set_var("x", "local")
        assert store.get_var("x") == "local"
        store.pop_scope()
        assert store.get_var("x") == "global"

    def test_anchor_writes_go_global_even_in_scopes(self):
        store = VariableStore(anchors=["taskList"])
        store.push_scope()
        store.set_var("taskList", ["a"])
        store.pop_scope()
        assert store.get_var("taskList") == ["a"]

    def test_anchors_survive_scope_churn(self):
        store = VariableStore(anchors=["keep"])
        store.set_var("keep", Decimal(1))
        for _ in range(5):
            store.push_scope()
            store.set_var("temp", "x")
        for _ in range(5):
            store.pop_scope()
        assert store.get_var("keep") == Decimal(1)
        assert store.bound_anchors() == {"keep": Decimal(1)}

    def test_pop_empty_scope_fails(self):
        with pytest.raises(ScopeUnderflow):
            VariableStore().pop_scope()
        with pytest.raises(ScopeUnderflow):
            VariableStore().pop_loop()

    def test_read_your_writes_property(self):
        rng = random.Random(42)
        segments = ["alpha", "beta", "gamma", "delta"]

        def fresh_value():
            return rng.choice(
                [Decimal("1.5"), "text", True, None, lambda: ["x", Decimal(2)], lambda: {"k": "v"}]
            )

        store = VariableStore()
        written = {}
        for _ in range(300):
            depth = rng.randrange(1, 5)
            path = ".".join(rng.choice(segments) for _ in range(depth))
            value = fresh_value()
            if callable(value):
                value = value()
            try:
                store.set_var(path, value)
            except PathThroughNonObject:
                continue
            # Writing may clobber paths beneath an overwritten prefix.
            written = {p: v for p, v in written.items()
                       if not (p.startswith(path + ".") or path.startswith(p + "."))}
            written[path] = value
            for p, v in written.items():
                assert store.get_var(p) == v


class TestNumbers:
    @pytest.mark.parametrize("text", ["0", "1", "-7", "123", "1200", "23.50", "0.001", "-0.5"])
    def test_print_parse_identity(self, text):
        number = parse_number(text)
        assert parse_number(print_number(number)) == number

    def test_no_exponent_in_canonical_form(self):
        assert print_number(Decimal("100")) == "100"
        assert print_number(Decimal("1E+2")) == "100"
        assert print_number(Decimal("23.50")) == "23.5"
        assert print_number(Decimal("-0")) == "0"

    def test_random_round_trip(self):
        rng = random.Random(5)
        for _ in range(200):
            number = Decimal(rng.randrange(-10**9, 10**9)) / Decimal(10 ** rng.randrange(0, 6))
            assert parse_number(print_number(number)) == number


class TestCoercion:
    def test_text_to_number(self):
        assert coerce("123", "number") == Decimal(123)

    def test_number_to_text(self):
        assert coerce(Decimal(5), "text") == "5"

    def test_bad_number_text(self):
        with pytest.raises(CoercionFailed) as err:
            coerce("abc", "number")
        assert "abc" in str(err.value)

    def test_number_to_boolean(self):
        assert coerce(Decimal(0), "boolean") is False
        assert coerce(Decimal(2), "boolean") is True

    def test_list_of_objects_to_table(self):
        rows = [{"a": "1", "b": "2"}, {"a": "3", "b": "4"}]
        table = coerce(rows, "table")
        assert isinstance(table, Table)
        assert table.columns == ["a", "b"]

    def test_misaligned_keys_fail(self):
        with pytest.raises(CoercionFailed):
            coerce([{"a": "1"}, {"b": "2"}], "table")

    @pytest.mark.parametrize(
        "value", [None, True, Decimal("1.5"), "hi", ["x"], {"k": "v"}]
    )
    def test_idempotent_on_same_kind(self, value):
        assert coerce(value, kind_of(value)) == value


class TestInterpolation:
    def test_welcome_line(self):
        store = VariableStore()
        store.set_var("userName", "Alice")
        store.set_var("initialScore", Decimal(100))
        out = interpolate('"Welcome, {userName}! Your score is {initialScore}."', store)
        assert out == '"Welcome, Alice! Your score is 100."'

    def test_no_braces_unchanged(self):
        assert interpolate("plain text", VariableStore()) == "plain text"

    def test_repeated_ref(self):
        store = VariableStore()
        store.set_var("a", "x")
        # oracle: naive left-to-right scan-replace gives "xx"
        assert interpolate("{a}{a}", store) == "xx"

    def test_unbound_propagates(self):
        with pytest.raises(UnboundVariable):
            interpolate("hello {ghost}", VariableStore())

    def test_skip_set_left_verbatim(self):
        store = VariableStore()
        store.set_var("a", "x")
        assert interpolate("{a} into {target}", store, skip={"target"}) == "x into {target}"

    def test_possessive_lookup(self):
        store = VariableStore()
        store.set_var("myCar.color", "red")
        assert interpolate("paint it {myCar's color}", store) == "paint it red"


class TestSerialization:
    def test_canonical_json_round_trip(self):
        value = {
            "name": "Laptop",
            "price": Decimal("23.50"),
            "tags": ["a", "b"],
            "ok": True,
            "none": None,
        }
        assert loads_value(canonical_json(value)) == value

    def test_table_marker(self):
        table = Table([{"a": "1"}, {"a": "2"}])
        text = canonical_json(table)
        assert text.startswith('{"$table": ')
        rebuilt = loads_value(text)
        assert isinstance(rebuilt, Table)
        assert list(rebuilt) == [{"a": "1"}, {"a": "2"}]

    def test_numbers_stay_exact(self):
        assert loads_value("0.1") == Decimal("0.1")
        assert canonical_json(Decimal("0.1")) == "0.1"

    def test_canonical_text_of_text_is_bare(self):
        assert canonical_text("Alice") == "Alice"
        assert canonical_text(Decimal(100)) == "100"
        assert canonical_text(True) == "true"
        assert canonical_text(["a", Decimal(1)]) == '["a", 1]'

    def test_object_key_order_preserved(self):
        value = {"z": "1", "a": "2"}
        assert canonical_json(value) == '{"z": "1", "a": "2"}'


class TestCsv:
    def test_cells_stay_text(self):
        table = table_from_csv_text("region,total\nwest,12.5\neast,9\n")
        assert table.columns == ["region", "total"]
        assert table[0]["total"] == "12.5"
        assert coerce(table[0]["total"], "number") == Decimal("12.5")

    def test_empty(self):
        assert list(table_from_csv_text("")) == []
