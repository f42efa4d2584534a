"""Circuit model: generation, per-unit conversion, validation, serialization."""

import json
import math

import numpy as np
import pytest

from voltvar import (
    Circuit,
    LinkImpedance,
    NodeLoad,
    ParameterError,
    ScenarioParams,
    capacity_bound,
    generate_circuit,
    validate,
)

PROTO = ScenarioParams()  # rural prototype defaults


def test_prototype_counts_and_power_factors():
    params = ScenarioParams(penetration_r=0.5, p_g_value=1.0, seed=7)
    circuit = generate_circuit(params)
    assert circuit.n == 100
    assert len(circuit.links) == 100
    assert int(circuit.pv_mask.sum()) == 50
    loaded = circuit.p_c > 0
    pf = circuit.p_c[loaded] / np.sqrt(circuit.p_c[loaded] ** 2 + circuit.q_c[loaded] ** 2)
    # q_c/p_c in [0.2, 0.3] forces power factors into this band
    assert np.all(pf >= 1.0 / math.sqrt(1.09) - 1e-12)
    assert np.all(pf <= 1.0 / math.sqrt(1.04) + 1e-12)


def test_zero_penetration_has_no_pv():
    circuit = generate_circuit(ScenarioParams(penetration_r=0.0, seed=3))
    assert not circuit.pv_mask.any()
    assert np.all(circuit.p_g == 0.0)
    assert np.all(circuit.s_cap == 0.0)


def test_zero_load_range_gives_zero_loads():
    circuit = generate_circuit(ScenarioParams(p_c_range=(0.0, 0.0), seed=3))
    assert np.all(circuit.p_c == 0.0)
    assert np.all(circuit.q_c == 0.0)  # factor times zero


def test_same_seed_regenerates_identical_circuit():
    params = ScenarioParams(seed=12345)
    assert generate_circuit(params) == generate_circuit(params)


def test_different_seed_changes_circuit():
    assert generate_circuit(ScenarioParams(seed=1)) != generate_circuit(ScenarioParams(seed=2))


@pytest.mark.parametrize(
    "r,n,expected",
    [
        (0.5, 100, 50),
        (0.45, 10, 4),  # 4.5 rounds to the even neighbor
        (0.55, 10, 6),  # 5.5 rounds to the even neighbor
        (0.333, 100, 33),
        (1.0, 7, 7),
        (0.0, 7, 0),
    ],
)
def test_pv_count_rounds_half_to_even(r, n, expected):
    params = ScenarioParams(n=n, penetration_r=r)
    assert params.pv_count() == expected
    assert int(generate_circuit(params).pv_mask.sum()) == expected


def test_per_unit_round_trip_recovers_physical_values():
    params = ScenarioParams(seed=11)
    circuit = generate_circuit(params)
    kw = circuit.s_base / 1e3
    p_c_kw = circuit.p_c * kw
    assert np.all(p_c_kw <= params.p_c_range[1] + 1e-12)
    pv = circuit.pv_mask
    assert np.allclose(circuit.p_g[pv] * kw, params.p_g_value, rtol=1e-12)
    assert np.allclose(circuit.s_cap[pv] * kw, params.s_value, rtol=1e-12)
    z_base = circuit.v_base**2 / circuit.s_base
    lengths = np.array([lk.length for lk in circuit.links])
    assert np.allclose(
        circuit.r * z_base, lengths / 1e3 * params.impedance_per_km[0], rtol=1e-12
    )
    assert np.allclose(
        circuit.x * z_base, lengths / 1e3 * params.impedance_per_km[1], rtol=1e-12
    )


def test_spacings_respect_range():
    params = ScenarioParams(spacing_range=(250.0, 260.0), seed=5)
    circuit = generate_circuit(params)
    lengths = np.array([lk.length for lk in circuit.links])
    assert np.all((lengths >= 250.0) & (lengths <= 260.0))


# -- capacity bound ---------------------------------------------------------


def test_capacity_bound_value():
    load = NodeLoad(p_c=0.0, q_c=0.0, p_g=1.0, s=1.1, has_pv=True)
    assert capacity_bound(load) == pytest.approx(math.sqrt(0.21), abs=1e-12)
    assert capacity_bound(load) == pytest.approx(0.45826, abs=1e-5)


def test_capacity_bound_vanishes_at_full_output():
    load = NodeLoad(p_c=0.0, q_c=0.0, p_g=1.0, s=1.0, has_pv=True)
    assert capacity_bound(load) == 0.0


def test_capacity_bound_full_at_zero_output():
    load = NodeLoad(p_c=0.0, q_c=0.0, p_g=0.0, s=1.1, has_pv=True)
    assert capacity_bound(load) == pytest.approx(1.1, abs=1e-15)


def test_capacity_bound_zero_without_pv():
    assert capacity_bound(NodeLoad(p_c=1.0, q_c=0.2)) == 0.0


def test_capacity_bound_rejects_undersized_inverter():
    load = NodeLoad(p_c=0.0, q_c=0.0, p_g=1.2, s=1.0, has_pv=True)
    with pytest.raises(ValueError):
        capacity_bound(load)


# -- validation -------------------------------------------------------------


def test_validate_clean_circuit():
    assert validate(generate_circuit(ScenarioParams(seed=2))) == []


def test_validate_reports_capacity_below_output():
    circuit = generate_circuit(ScenarioParams(n=5, penetration_r=0.0, seed=2))
    nodes = list(circuit.nodes)
    nodes[2] = NodeLoad(p_c=0.01, q_c=0.002, p_g=0.012, s=0.010, has_pv=True)
    broken = Circuit(nodes=tuple(nodes), links=circuit.links)
    problems = validate(broken)
    assert len(problems) == 1
    assert "node 3" in problems[0]
    assert "capacity" in problems[0]


def test_validate_reports_negative_resistance():
    circuit = generate_circuit(ScenarioParams(n=5, seed=2))
    links = list(circuit.links)
    links[3] = LinkImpedance(r=-1e-4, x=1e-4, length=100.0)
    broken = Circuit(nodes=circuit.nodes, links=tuple(links))
    problems = validate(broken)
    assert any("link 3" in msg and "resistance" in msg for msg in problems)


def test_validate_substation_band():
    circuit = generate_circuit(ScenarioParams(n=3, seed=2))
    shifted = Circuit(nodes=circuit.nodes, links=circuit.links, v0_squared=1.2)
    assert validate(shifted, epsilon=0.05) != []
    assert validate(shifted) == []  # without a band the value is just positive


@pytest.mark.parametrize(
    "field,kwargs",
    [
        ("n", {"n": 0}),
        ("spacing_range", {"spacing_range": (0.0, 100.0)}),
        ("spacing_range", {"spacing_range": (300.0, 200.0)}),
        ("p_c_range", {"p_c_range": (-1.0, 4.0)}),
        ("q_c_factor_range", {"q_c_factor_range": (0.3, 0.2)}),
        ("p_g_value", {"p_g_value": -1.0}),
        ("s_value", {"s_value": -0.5}),
        ("s_value", {"s_value": 0.5, "p_g_value": 1.0, "penetration_r": 0.5}),
        ("penetration_r", {"penetration_r": 1.5}),
        ("epsilon", {"epsilon": 0.0}),
        ("epsilon", {"epsilon": 1.0}),
        ("impedance_per_km", {"impedance_per_km": (0.0, 0.38)}),
        ("v_base", {"v_base": 0.0}),
        ("s_base", {"s_base": -100.0}),
    ],
)
def test_parameter_errors_name_the_field(field, kwargs):
    params = ScenarioParams(**kwargs)
    with pytest.raises(ParameterError) as err:
        generate_circuit(params)
    assert err.value.field == field


# -- serialization ----------------------------------------------------------


def test_json_round_trip_is_exact(tmp_path):
    circuit = generate_circuit(ScenarioParams(seed=99))
    path = tmp_path / "circuit.json"
    circuit.save_json(path)
    assert Circuit.load_json(path) == circuit


def test_json_document_fields():
    circuit = generate_circuit(ScenarioParams(n=2, seed=1))
    doc = circuit.to_dict()
    assert set(doc) == {"v0_squared", "bases", "nodes", "links"}
    assert set(doc["bases"]) == {"v_base", "s_base"}
    assert set(doc["nodes"][0]) == {"p_c", "q_c", "p_g", "s", "has_pv"}
    assert set(doc["links"][0]) == {"r", "x", "length"}
    json.dumps(doc)  # must be serializable as-is
