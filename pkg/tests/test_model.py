import json
import random
from fractions import Fraction as F

import pytest
from hypothesis import given, strategies as st

from conftest import layout_of, random_instance, worked_network, worked_prop, worked_region
from relucert.model import (
    DimensionError,
    IDENTITY,
    Layer,
    Network,
    ParseError,
    Region,
    SafetyProperty,
    RELU,
    build_layout,
    forward_eval,
    format_rational,
    parse_problem,
    parse_rational,
    problem_from_dict,
    trace_vector,
    validate_witness,
)

rationals = st.fractions(min_value=-1000, max_value=1000, max_denominator=50)


class TestRationals:
    def test_parse_fraction_string(self):
        assert parse_rational("3/4") == F(3, 4)
        assert parse_rational("-7/2") == F(-7, 2)
        assert parse_rational("5") == F(5)
        assert parse_rational(0) == F(0)

    def test_rejects_floats_and_bools(self):
        with pytest.raises(ParseError):
            parse_rational(0.5)
        with pytest.raises(ParseError):
            parse_rational(True)

    def test_rejects_garbage(self):
        with pytest.raises(ValueError):
            parse_rational("1/0")
        with pytest.raises(ValueError):
            parse_rational("abc")

    @given(rationals)
    def test_format_round_trip(self, q):
        assert parse_rational(format_rational(q)) == q


class TestNetworkShapes:
    def test_mismatched_columns_rejected(self):
        with pytest.raises(DimensionError):
            Network((Layer(((F(1), F(2)),), (F(0),), RELU),), 1, 1)

    def test_identity_only_on_last_layer(self):
        with pytest.raises(DimensionError):
            Network((
                Layer(((F(1),),), (F(0),), IDENTITY),
                Layer(((F(1),),), (F(0),), IDENTITY),
            ), 1, 1)

    def test_unknown_activation_rejected(self):
        with pytest.raises(DimensionError):
            Network((Layer(((F(1),),), (F(0),), "tanh"),), 1, 1)

    def test_hidden_units_enumerates_relu_layers_only(self):
        net = worked_network()
        assert net.hidden_units == [(1, 0), (1, 1)]


class TestRegion:
    def test_empty_box_rejected(self):
        with pytest.raises(ValueError):
            Region((F(1),), (F(0),))

    def test_contains_is_inclusive(self):
        r = worked_region()
        assert r.contains((F(0),)) and r.contains((F(1),)) and r.contains((F(1, 2),))
        assert not r.contains((F(-1, 100),))
        assert not r.contains((F(0), F(0)))


class TestSafetyProperty:
    def test_duplicate_margin_index_rejected(self):
        with pytest.raises(ValueError):
            SafetyProperty(((0, F(1)), (0, F(2))), F(0), F(0))

    def test_violation_threshold(self):
        assert worked_prop().violation_threshold == F(11, 10)

    def test_margin_value(self):
        prop = SafetyProperty(((0, F(2)), (1, F(-1))), F(0), F(0))
        assert prop.margin_value((F(3), F(1))) == F(5)


class TestLayout:
    def test_pre_then_post_per_layer(self):
        net = worked_network()
        layout = build_layout(net, worked_prop())
        assert layout.input_index(0) == 0
        assert layout.pre_index((1, 0)) == 1
        assert layout.pre_index((1, 1)) == 2
        assert layout.post_index((1, 0)) == 3
        assert layout.post_index((1, 1)) == 4
        # identity output aliases its post onto its pre
        assert layout.post_index((2, 0)) == layout.pre_index((2, 0)) == 5
        assert layout.output_index(0) == 5

    def test_unit_coefficient_margin_aliases_the_output(self):
        net = worked_network()
        layout = build_layout(net, worked_prop())
        assert layout.margin_is_aliased
        assert layout.margin_index == layout.output_index(0)
        assert layout.n_vars == 6

    def test_general_margin_gets_a_fresh_variable(self):
        net = worked_network()
        prop = SafetyProperty(((0, F(2)),), F(1), F(0))
        layout = build_layout(net, prop)
        assert not layout.margin_is_aliased
        assert layout.margin_index == 6
        assert layout.n_vars == 7


class TestForwardEval:
    def test_worked_network_values(self):
        net = worked_network()
        # y = relu(2x-1) - relu(1/2-x)
        assert forward_eval(net, (F(0),)).outputs == (F(-1, 2),)
        assert forward_eval(net, (F(1, 2),)).outputs == (F(0),)
        assert forward_eval(net, (F(1),)).outputs == (F(1),)
        assert forward_eval(net, (F(3, 4),)).outputs == (F(1, 2),)

    def test_wrong_arity_rejected(self):
        with pytest.raises(DimensionError):
            forward_eval(worked_network(), (F(0), F(0)))

    @given(st.fractions(min_value=0, max_value=1, max_denominator=64))
    def test_trace_is_exact_relu_graph(self, x):
        net = worked_network()
        t = forward_eval(net, (x,))
        for s, z in zip(t.pre[0], t.post[0]):
            assert z == max(F(0), s)
        assert t.outputs[0] == t.post[0][0] - t.post[0][1]

    def test_random_networks_piecewise_linear_locally(self):
        rng = random.Random(7)
        for _ in range(20):
            net, region, prop = random_instance(rng)
            x = tuple((lo + hi) / 2 for lo, hi in zip(region.lower, region.upper))
            t = forward_eval(net, x)
            for li, layer in enumerate(net.layers):
                if layer.activation == RELU:
                    for s, z in zip(t.pre[li], t.post[li]):
                        assert z == max(F(0), s)
                else:
                    assert t.pre[li] == t.post[li]

    def test_trace_vector_assigns_every_variable(self):
        net, prop = worked_network(), worked_prop()
        layout = layout_of(net, prop)
        v = trace_vector(net, layout, (F(3, 4),), prop)
        assert v[layout.input_index(0)] == F(3, 4)
        assert v[layout.pre_index((1, 0))] == F(1, 2)
        assert v[layout.post_index((1, 1))] == F(0)
        assert v[layout.margin_index] == F(1, 2)


class TestWitnessValidation:
    def test_accepts_true_counterexample(self):
        net = worked_network()
        prop = worked_prop("1/2")  # violation at margin >= 3/5
        verdict = validate_witness(net, worked_region(), prop, (F(4, 5),))
        assert verdict.accepted

    def test_rejects_point_outside_region(self):
        verdict = validate_witness(worked_network(), worked_region(), worked_prop(), (F(2),))
        assert not verdict.accepted and verdict.reason == "region"

    def test_rejects_insufficient_margin(self):
        verdict = validate_witness(worked_network(), worked_region(), worked_prop(), (F(1),))
        assert not verdict.accepted and "margin" in verdict.reason


class TestProblemParsing:
    def test_worked_problem_file(self):
        net, region, prop = parse_problem("problems/worked.json")
        assert net.input_dim == 1 and net.output_dim == 1
        assert region == worked_region()
        assert prop == worked_prop()
        assert forward_eval(net, (F(1),)).outputs == (F(1),)

    def test_missing_field(self):
        with pytest.raises(ParseError):
            problem_from_dict({"weights": []})

    def test_margin_index_out_of_range(self):
        with open("problems/worked.json") as fh:
            doc = json.load(fh)
        doc["margin"] = {"3": "1"}
        with pytest.raises(DimensionError):
            problem_from_dict(doc)

    def test_region_dimension_mismatch(self):
        with open("problems/worked.json") as fh:
            doc = json.load(fh)
        doc["input_lower"] = ["0", "0"]
        doc["input_upper"] = ["1", "1"]
        with pytest.raises(DimensionError):
            problem_from_dict(doc)

    def test_invalid_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{nope")
        with pytest.raises(ParseError):
            parse_problem(p)
