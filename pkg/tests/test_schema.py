import jsonschema
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lcm.errors import SchemaError
from lcm.schema import check_schema, is_valid, iter_errors, validate

json_values = st.recursive(
    st.none() | st.booleans() | st.integers(-50, 50) | st.floats(-50, 50, allow_nan=False) | st.text(max_size=4),
    lambda children: st.lists(children, max_size=3) | st.dictionaries(st.sampled_from("abc"), children, max_size=3),
    max_leaves=8,
)
type_names = st.sampled_from(["string", "number", "integer", "boolean", "object", "array", "null"])


def schemas(depth=2):
    leaf = st.fixed_dictionaries(
        {},
        optional={
            "type": type_names | st.lists(type_names, min_size=1, max_size=2, unique=True),
            "minimum": st.integers(-10, 10),
            "maximum": st.integers(-10, 10),
            "enum": st.lists(st.none() | st.booleans() | st.integers(-3, 3) | st.sampled_from(["a", "b"]),
                             min_size=1, max_size=3),
        },
    )
    if depth == 0:
        return leaf | st.booleans()
    sub = schemas(depth - 1)
    return st.builds(
        lambda base, props, req, items: {**base, **props, **req, **items},
        leaf,
        st.fixed_dictionaries({}, optional={"properties": st.dictionaries(st.sampled_from("abc"), sub, max_size=2)}),
        st.fixed_dictionaries({}, optional={"required": st.lists(st.sampled_from("abc"), max_size=2, unique=True)}),
        st.fixed_dictionaries({}, optional={"items": sub}),
    )


@given(json_values, schemas())
def test_agrees_with_reference_validator(instance, schema):
    ref = jsonschema.Draft7Validator(schema).is_valid(instance)
    assert is_valid(instance, schema) == ref


def test_messages_name_path():
    schema = {"type": "object", "required": ["n"], "properties": {"n": {"type": "integer", "minimum": 0}}}
    assert iter_errors({"n": -1}, schema) == ["$.n: -1 is less than the minimum 0"]
    assert iter_errors({}, schema) == ["$: missing required property 'n'"]
    assert iter_errors([], schema) == ["$: expected object, got array"]
    with pytest.raises(SchemaError):
        validate({"n": "x"}, schema)


def test_bool_is_not_a_number():
    assert not is_valid(True, {"type": "integer"})
    assert is_valid(1.0, {"type": "integer"})
    assert not is_valid(1, {"enum": [True]})


@pytest.mark.parametrize("bad", [
    {"type": "strng"},
    {"properties": []},
    {"required": "a"},
    {"enum": "a"},
    {"minimum": "0"},
    {"items": 3},
    [],
])
def test_check_schema_rejects(bad):
    with pytest.raises(SchemaError):
        check_schema(bad)


def test_boolean_schemas():
    assert is_valid(5, True)
    assert not is_valid(5, False)
