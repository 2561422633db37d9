"""Network representation, variable layout, exact forward evaluation, parsing.

All numbers are `fractions.Fraction`: arbitrary precision, always in lowest
terms, positive denominator.  Nothing in this package ever rounds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable

RELU = "relu"
IDENTITY = "identity"

#: (layer, neuron) pair identifying a hidden ReLU unit.  Layers are 1-based
#: to match the layer list of the network (layer 0 is the input).
Unit = tuple[int, int]

ACTIVE = "active"
INACTIVE = "inactive"


class ParseError(Exception):
    """Malformed problem file."""


class DimensionError(Exception):
    """Inconsistent matrix/vector shapes."""


def parse_rational(text) -> Fraction:
    """Parse "p/q" or an integer string into an exact rational."""
    if isinstance(text, bool) or isinstance(text, float):
        raise ParseError(f"rationals must be strings, got {text!r}")
    if isinstance(text, int):
        return Fraction(text)
    if not isinstance(text, str):
        raise ParseError(f"rationals must be strings, got {text!r}")
    try:
        q = Fraction(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise ValueError(f"bad rational {text!r}: {exc}") from None
    return q


def format_rational(q: Fraction) -> str:
    return str(q)


@dataclass(frozen=True)
class Layer:
    weights: tuple[tuple[Fraction, ...], ...]  # rows = neurons of this layer
    bias: tuple[Fraction, ...]
    activation: str


@dataclass(frozen=True)
class Network:
    layers: tuple[Layer, ...]
    input_dim: int
    output_dim: int

    def __post_init__(self):
        prev = self.input_dim
        for i, layer in enumerate(self.layers):
            if layer.activation not in (RELU, IDENTITY):
                raise DimensionError(f"unknown activation {layer.activation!r}")
            if layer.activation == IDENTITY and i != len(self.layers) - 1:
                raise DimensionError("identity activation only allowed on the final layer")
            if len(layer.weights) != len(layer.bias):
                raise DimensionError(f"layer {i}: {len(layer.weights)} rows vs {len(layer.bias)} biases")
            for row in layer.weights:
                if len(row) != prev:
                    raise DimensionError(f"layer {i}: expected {prev} columns, got {len(row)}")
            prev = len(layer.weights)
        if prev != self.output_dim:
            raise DimensionError(f"output_dim {self.output_dim} != final width {prev}")

    @property
    def hidden_units(self) -> list[Unit]:
        units = []
        for i, layer in enumerate(self.layers, start=1):
            if layer.activation == RELU:
                units.extend((i, j) for j in range(len(layer.weights)))
        return units


@dataclass(frozen=True)
class Region:
    lower: tuple[Fraction, ...]
    upper: tuple[Fraction, ...]

    def __post_init__(self):
        if len(self.lower) != len(self.upper):
            raise DimensionError("region bound vectors differ in length")
        for lo, hi in zip(self.lower, self.upper):
            if lo > hi:
                raise ValueError(f"empty box: lower {lo} > upper {hi}")

    def contains(self, x: Iterable[Fraction]) -> bool:
        x = tuple(x)
        return len(x) == len(self.lower) and all(
            lo <= v <= hi for lo, v, hi in zip(self.lower, x, self.upper)
        )


@dataclass(frozen=True)
class SafetyProperty:
    """Safety holds iff margin(v) <= threshold.

    The negated query asserted in the store is margin(v) >= threshold + epsilon
    (non-strict; the epsilon slack stands in for strictness).
    """

    margin: tuple[tuple[int, Fraction], ...]  # sparse row over output indices
    threshold: Fraction
    epsilon: Fraction

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        seen = set()
        for idx, _ in self.margin:
            if idx in seen:
                raise ValueError(f"duplicate margin index {idx}")
            seen.add(idx)

    @property
    def violation_threshold(self) -> Fraction:
        return self.threshold + self.epsilon

    def margin_value(self, outputs) -> Fraction:
        return sum((coeff * outputs[idx] for idx, coeff in self.margin), Fraction(0))


class VariableLayout:
    """Deterministic index assignment for the global variable vector.

    Inputs first, then per layer the pre-activations s followed by the
    post-activations z (hidden ReLU layers only; an identity output layer
    aliases z onto s), then the margin auxiliary.  When the margin is a single
    output coordinate with coefficient 1 the auxiliary aliases that output
    variable instead of allocating a fresh one.
    """

    def __init__(self, net: Network, prop: SafetyProperty | None = None):
        self.net = net
        self._input = list(range(net.input_dim))
        self._pre: dict[Unit, int] = {}
        self._post: dict[Unit, int] = {}
        idx = net.input_dim
        for i, layer in enumerate(net.layers, start=1):
            width = len(layer.weights)
            for j in range(width):
                self._pre[(i, j)] = idx + j
            idx += width
            if layer.activation == RELU:
                for j in range(width):
                    self._post[(i, j)] = idx + j
                idx += width
            else:  # identity output: z aliases s
                for j in range(width):
                    self._post[(i, j)] = self._pre[(i, j)]
        self.margin_index: int | None = None
        if prop is not None:
            if len(prop.margin) == 1 and prop.margin[0][1] == 1:
                self.margin_index = self.output_index(prop.margin[0][0])
            else:
                self.margin_index = idx
                idx += 1
        self.n_vars = idx

    def input_index(self, k: int) -> int:
        return self._input[k]

    def pre_index(self, unit: Unit) -> int:
        return self._pre[unit]

    def post_index(self, unit: Unit) -> int:
        return self._post[unit]

    def output_index(self, j: int) -> int:
        return self._post[(len(self.net.layers), j)]

    @property
    def margin_is_aliased(self) -> bool:
        last = len(self.net.layers)
        return self.margin_index in {self._post[(last, j)] for j in range(self.net.output_dim)}


def build_layout(net: Network, prop: SafetyProperty | None = None) -> VariableLayout:
    return VariableLayout(net, prop)


@dataclass(frozen=True)
class Trace:
    pre: tuple[tuple[Fraction, ...], ...]
    post: tuple[tuple[Fraction, ...], ...]

    @property
    def outputs(self) -> tuple[Fraction, ...]:
        return self.post[-1]


def forward_eval(net: Network, x) -> Trace:
    """Exact forward pass; z = max(0, s) componentwise on ReLU layers."""
    x = tuple(Fraction(v) for v in x)
    if len(x) != net.input_dim:
        raise DimensionError(f"expected {net.input_dim} inputs, got {len(x)}")
    pre, post = [], []
    cur = x
    for layer in net.layers:
        s = tuple(
            sum((w * c for w, c in zip(row, cur)), b)
            for row, b in zip(layer.weights, layer.bias)
        )
        if layer.activation == RELU:
            z = tuple(max(Fraction(0), v) for v in s)
        else:
            z = s
        pre.append(s)
        post.append(z)
        cur = z
    return Trace(tuple(pre), tuple(post))


def trace_vector(net: Network, layout: VariableLayout, x, prop: SafetyProperty | None = None) -> dict[int, Fraction]:
    """Full assignment of the layout variables induced by an exact trace."""
    trace = forward_eval(net, x)
    v = {layout.input_index(k): Fraction(q) for k, q in enumerate(x)}
    for i in range(1, len(net.layers) + 1):
        for j in range(len(net.layers[i - 1].weights)):
            v[layout.pre_index((i, j))] = trace.pre[i - 1][j]
            v[layout.post_index((i, j))] = trace.post[i - 1][j]
    if prop is not None and layout.margin_index is not None and not layout.margin_is_aliased:
        v[layout.margin_index] = prop.margin_value(trace.outputs)
    return v


@dataclass(frozen=True)
class WitnessVerdict:
    accepted: bool
    reason: str = ""


def validate_witness(net: Network, region: Region, prop: SafetyProperty, x) -> WitnessVerdict:
    """Exact check that x is a counterexample: in the region and margin >= threshold + epsilon."""
    x = tuple(Fraction(v) for v in x)
    if len(x) != net.input_dim:
        raise DimensionError(f"expected {net.input_dim} inputs, got {len(x)}")
    if not region.contains(x):
        return WitnessVerdict(False, "region")
    m = prop.margin_value(forward_eval(net, x).outputs)
    if m >= prop.violation_threshold:
        return WitnessVerdict(True)
    return WitnessVerdict(False, f"margin {m} < {prop.violation_threshold}")


def _parse_matrix(obj, what: str):
    if not isinstance(obj, list) or not all(isinstance(r, list) for r in obj):
        raise ParseError(f"{what} must be a list of lists")
    return tuple(tuple(parse_rational(v) for v in row) for row in obj)


def problem_from_dict(doc: dict) -> tuple[Network, Region, SafetyProperty]:
    try:
        weights = doc["weights"]
        biases = doc["biases"]
        activations = doc["activations"]
        lower = doc["input_lower"]
        upper = doc["input_upper"]
        margin = doc["margin"]
        threshold = doc["threshold"]
        epsilon = doc["epsilon"]
    except (KeyError, TypeError) as exc:
        raise ParseError(f"missing field: {exc}") from None
    if not (isinstance(weights, list) and isinstance(biases, list) and isinstance(activations, list)):
        raise ParseError("weights, biases, activations must be lists")
    if not len(weights) == len(biases) == len(activations):
        raise ParseError("weights, biases, activations must have equal length")
    if not weights:
        raise ParseError("network needs at least one layer")
    layers = []
    for w, b, act in zip(weights, biases, activations):
        if not isinstance(b, list):
            raise ParseError("each bias must be a list")
        layers.append(Layer(_parse_matrix(w, "weights"), tuple(parse_rational(v) for v in b), act))
    input_dim = len(layers[0].weights[0]) if layers[0].weights else 0
    net = Network(tuple(layers), input_dim, len(layers[-1].weights))
    region = Region(
        tuple(parse_rational(v) for v in lower),
        tuple(parse_rational(v) for v in upper),
    )
    if len(region.lower) != net.input_dim:
        raise DimensionError("region dimension != input dimension")
    if not isinstance(margin, dict) or not margin:
        raise ParseError("margin must be a non-empty map output-index -> coefficient")
    row = []
    for key, coeff in sorted(margin.items(), key=lambda kv: int(kv[0])):
        idx = int(key)
        if not 0 <= idx < net.output_dim:
            raise DimensionError(f"margin index {idx} out of range")
        row.append((idx, parse_rational(coeff)))
    prop = SafetyProperty(tuple(row), parse_rational(threshold), parse_rational(epsilon))
    return net, region, prop


def parse_problem(path) -> tuple[Network, Region, SafetyProperty]:
    """Load and validate a problem file (JSON; rationals as "p/q" strings)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}") from None
    return problem_from_dict(doc)
