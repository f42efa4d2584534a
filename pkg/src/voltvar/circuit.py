"""Domain model of a single-branch radial distribution feeder.

The feeder is a chain: the substation (node 0, fixed voltage) feeds node 1
through link 0, node 1 feeds node 2 through link 1, and so on.  A circuit
with ``n`` load nodes therefore has exactly ``n`` links; link ``j`` carries
the power flowing from node ``j`` to node ``j+1``.

All electrical quantities on :class:`Circuit` are stored per-unit on the
circuit's voltage/power bases (``z_base = v_base**2 / s_base``).  Physical
units appear only in :class:`ScenarioParams`, which describes how to draw a
random feeder realization: spacings in meters, powers in kW/kVA, impedance
in ohm/km.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path

import numpy as np

__all__ = [
    "ParameterError",
    "LinkImpedance",
    "NodeLoad",
    "Circuit",
    "ScenarioParams",
    "generate_circuit",
    "capacity_bound",
    "validate",
]


class ParameterError(ValueError):
    """Invalid scenario parameter; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class LinkImpedance:
    """Series impedance of one feeder segment (per-unit) plus its length in meters."""

    r: float
    x: float
    length: float


@dataclass(frozen=True)
class NodeLoad:
    """Consumption and PV data of one load node, per-unit.

    ``p_c``/``q_c`` are the real/reactive power consumed, ``p_g`` the real
    PV output and ``s`` the inverter apparent-power rating.  Nodes without
    PV carry ``p_g = s = 0``.
    """

    p_c: float
    q_c: float
    p_g: float = 0.0
    s: float = 0.0
    has_pv: bool = False


@dataclass(frozen=True)
class Circuit:
    """Immutable description of one feeder realization.

    ``nodes[i]`` is load node ``i+1`` and ``links[i]`` is the segment
    feeding it, so ``len(nodes) == len(links)``.  The substation is node 0
    and holds the squared voltage ``v0_squared``.
    """

    nodes: tuple[NodeLoad, ...]
    links: tuple[LinkImpedance, ...]
    v0_squared: float = 1.0
    v_base: float = 7200.0
    s_base: float = 100_000.0

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def z_base(self) -> float:
        return self.v_base**2 / self.s_base

    def _array(self, values) -> np.ndarray:
        arr = np.array(values, dtype=float)
        arr.setflags(write=False)
        return arr

    @cached_property
    def p_c(self) -> np.ndarray:
        return self._array([nd.p_c for nd in self.nodes])

    @cached_property
    def q_c(self) -> np.ndarray:
        return self._array([nd.q_c for nd in self.nodes])

    @cached_property
    def p_g(self) -> np.ndarray:
        return self._array([nd.p_g for nd in self.nodes])

    @cached_property
    def s_cap(self) -> np.ndarray:
        return self._array([nd.s for nd in self.nodes])

    @cached_property
    def pv_mask(self) -> np.ndarray:
        arr = np.array([nd.has_pv for nd in self.nodes], dtype=bool)
        arr.setflags(write=False)
        return arr

    @cached_property
    def r(self) -> np.ndarray:
        return self._array([lk.r for lk in self.links])

    @cached_property
    def x(self) -> np.ndarray:
        return self._array([lk.x for lk in self.links])

    @cached_property
    def q_bound(self) -> np.ndarray:
        """Per-node inverter reactive limit, zero at nodes without PV."""
        arr = np.array([capacity_bound(nd) for nd in self.nodes])
        arr.setflags(write=False)
        return arr

    # -- JSON document (used by the CLI for reproducible re-runs) ----------
    #
    # Schema: {"v0_squared": float,
    #          "bases": {"v_base": float, "s_base": float},
    #          "nodes": [{"p_c","q_c","p_g","s","has_pv"}, ...],   # per-unit
    #          "links": [{"r","x","length"}, ...]}                 # pu, pu, m

    def to_dict(self) -> dict:
        return {
            "v0_squared": self.v0_squared,
            "bases": {"v_base": self.v_base, "s_base": self.s_base},
            "nodes": [
                {"p_c": nd.p_c, "q_c": nd.q_c, "p_g": nd.p_g, "s": nd.s, "has_pv": nd.has_pv}
                for nd in self.nodes
            ],
            "links": [{"r": lk.r, "x": lk.x, "length": lk.length} for lk in self.links],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> Circuit:
        nodes = tuple(
            NodeLoad(
                p_c=float(nd["p_c"]),
                q_c=float(nd["q_c"]),
                p_g=float(nd["p_g"]),
                s=float(nd["s"]),
                has_pv=bool(nd["has_pv"]),
            )
            for nd in doc["nodes"]
        )
        links = tuple(
            LinkImpedance(r=float(lk["r"]), x=float(lk["x"]), length=float(lk["length"]))
            for lk in doc["links"]
        )
        bases = doc["bases"]
        return cls(
            nodes=nodes,
            links=links,
            v0_squared=float(doc["v0_squared"]),
            v_base=float(bases["v_base"]),
            s_base=float(bases["s_base"]),
        )

    def save_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load_json(cls, path: str | Path) -> Circuit:
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class ScenarioParams:
    """Knobs for drawing one random feeder realization (physical units).

    Defaults reproduce the sparsely-loaded rural prototype: 100 load nodes
    spaced 200-300 m apart on 0.33+0.38j ohm/km conductor at 7.2 kV
    line-to-neutral, loads uniform in 0-4 kW with reactive fraction
    0.2-0.3 (power factors roughly 0.96-0.98), and 1 kW PV behind a
    1.1 kVA inverter at the chosen penetration of nodes.
    """

    n: int = 100
    spacing_range: tuple[float, float] = (200.0, 300.0)  # meters
    p_c_range: tuple[float, float] = (0.0, 4.0)  # kW
    q_c_factor_range: tuple[float, float] = (0.2, 0.3)  # q_c = factor * p_c
    p_g_value: float = 1.0  # kW at every PV node
    s_value: float = 1.1  # kVA inverter rating at every PV node
    penetration_r: float = 0.5  # fraction of nodes with PV
    epsilon: float = 0.05  # voltage half-band on squared pu voltage
    seed: int = 0
    impedance_per_km: tuple[float, float] = (0.33, 0.38)  # ohm/km (r, x)
    v_base: float = 7200.0  # volts
    s_base: float = 100_000.0  # volt-amperes

    def pv_count(self) -> int:
        # round-half-to-even, e.g. r*n = 50.5 with n=100 gives 50
        return round(self.penetration_r * self.n)

    def validate(self) -> None:
        """Raise :class:`ParameterError` naming the first invalid field."""
        if not isinstance(self.n, int) or self.n < 1:
            raise ParameterError("n", f"node count must be a positive integer, got {self.n!r}")
        lo, hi = self.spacing_range
        if not (0.0 < lo <= hi):
            raise ParameterError("spacing_range", f"need 0 < min <= max, got ({lo}, {hi})")
        lo, hi = self.p_c_range
        if not (0.0 <= lo <= hi):
            raise ParameterError("p_c_range", f"need 0 <= min <= max, got ({lo}, {hi})")
        lo, hi = self.q_c_factor_range
        if not (0.0 <= lo <= hi):
            raise ParameterError("q_c_factor_range", f"need 0 <= min <= max, got ({lo}, {hi})")
        if self.p_g_value < 0.0:
            raise ParameterError("p_g_value", f"must be >= 0, got {self.p_g_value}")
        if self.s_value < 0.0:
            raise ParameterError("s_value", f"must be >= 0, got {self.s_value}")
        if not (0.0 <= self.penetration_r <= 1.0):
            raise ParameterError("penetration_r", f"must be in [0, 1], got {self.penetration_r}")
        if self.pv_count() > 0 and self.s_value < self.p_g_value:
            raise ParameterError(
                "s_value",
                f"inverter rating {self.s_value} kVA below PV output {self.p_g_value} kW",
            )
        if not (0.0 < self.epsilon < 1.0):
            raise ParameterError("epsilon", f"must be in (0, 1), got {self.epsilon}")
        if not isinstance(self.seed, int):
            raise ParameterError("seed", f"must be an integer, got {self.seed!r}")
        r_km, x_km = self.impedance_per_km
        if r_km <= 0.0 or x_km <= 0.0:
            raise ParameterError("impedance_per_km", f"need r, x > 0, got ({r_km}, {x_km})")
        if self.v_base <= 0.0:
            raise ParameterError("v_base", f"must be > 0, got {self.v_base}")
        if self.s_base <= 0.0:
            raise ParameterError("s_base", f"must be > 0, got {self.s_base}")

    def with_overrides(self, **kwargs) -> ScenarioParams:
        return replace(self, **kwargs)


def capacity_bound(load: NodeLoad) -> float:
    """Reactive-power limit of a node's inverter, per-unit.

    The inverter can move sqrt(s^2 - p_g^2) of reactive power in either
    direction; the margin shrinks to zero as the PV output approaches the
    apparent-power rating.  Nodes without PV have no margin at all.
    """
    if not load.has_pv:
        return 0.0
    if load.s < load.p_g:
        raise ValueError(
            f"apparent-power capacity {load.s} below real output {load.p_g}: "
            "reactive limit undefined"
        )
    return math.sqrt(load.s**2 - load.p_g**2)


def generate_circuit(params: ScenarioParams) -> Circuit:
    """Draw one feeder realization; deterministic for a given seed.

    Sampling order is fixed so seeds stay reproducible: link spacings first
    (head to tail), then per node in order one consumption draw followed by
    one reactive-fraction draw, then the PV node subset (uniform, without
    replacement, ``round(r * n)`` nodes).
    """
    params.validate()
    n = params.n
    rng = np.random.default_rng(params.seed)

    spacings = rng.uniform(params.spacing_range[0], params.spacing_range[1], size=n)
    u = rng.random((n, 2))
    p_lo, p_hi = params.p_c_range
    f_lo, f_hi = params.q_c_factor_range
    p_c_kw = p_lo + (p_hi - p_lo) * u[:, 0]
    q_factor = f_lo + (f_hi - f_lo) * u[:, 1]
    q_c_kvar = q_factor * p_c_kw

    pv_positions = rng.choice(n, size=params.pv_count(), replace=False)
    has_pv = np.zeros(n, dtype=bool)
    has_pv[pv_positions] = True

    kw_to_pu = 1e3 / params.s_base
    z_base = params.v_base**2 / params.s_base
    r_km, x_km = params.impedance_per_km

    nodes = tuple(
        NodeLoad(
            p_c=p_c_kw[i] * kw_to_pu,
            q_c=q_c_kvar[i] * kw_to_pu,
            p_g=params.p_g_value * kw_to_pu if has_pv[i] else 0.0,
            s=params.s_value * kw_to_pu if has_pv[i] else 0.0,
            has_pv=bool(has_pv[i]),
        )
        for i in range(n)
    )
    links = tuple(
        LinkImpedance(
            r=spacings[i] / 1e3 * r_km / z_base,
            x=spacings[i] / 1e3 * x_km / z_base,
            length=float(spacings[i]),
        )
        for i in range(n)
    )
    return Circuit(
        nodes=nodes, links=links, v0_squared=1.0, v_base=params.v_base, s_base=params.s_base
    )


def validate(circuit: Circuit, epsilon: float | None = None) -> list[str]:
    """Check every type invariant; return one message per violation.

    Messages use the feeder numbering (load nodes 1..n, links 0..n-1).
    Passing ``epsilon`` also checks the substation voltage against the
    regulation band.
    """
    violations: list[str] = []
    if len(circuit.links) != len(circuit.nodes):
        violations.append(
            f"circuit: {len(circuit.links)} links for {len(circuit.nodes)} nodes "
            "(a chain needs one link per load node)"
        )
    for i, nd in enumerate(circuit.nodes):
        node = i + 1
        if nd.p_c < 0:
            violations.append(f"node {node}: negative real consumption {nd.p_c}")
        if nd.q_c < 0:
            violations.append(f"node {node}: negative reactive consumption {nd.q_c}")
        if nd.p_g < 0:
            violations.append(f"node {node}: negative PV output {nd.p_g}")
        if nd.s < 0:
            violations.append(f"node {node}: negative inverter capacity {nd.s}")
        if nd.has_pv and nd.s < nd.p_g:
            violations.append(
                f"node {node}: inverter capacity {nd.s} below real output {nd.p_g}"
            )
        if not nd.has_pv and (nd.p_g != 0.0 or nd.s != 0.0):
            violations.append(f"node {node}: PV fields set but has_pv is false")
    for j, lk in enumerate(circuit.links):
        if lk.r <= 0:
            violations.append(f"link {j}: resistance must be positive, got {lk.r}")
        if lk.x <= 0:
            violations.append(f"link {j}: reactance must be positive, got {lk.x}")
        if lk.length <= 0:
            violations.append(f"link {j}: length must be positive, got {lk.length}")
    if circuit.v0_squared <= 0:
        violations.append(f"substation: squared voltage must be positive, got {circuit.v0_squared}")
    elif epsilon is not None and not (
        1.0 - epsilon <= circuit.v0_squared <= 1.0 + epsilon
    ):
        violations.append(
            f"substation: squared voltage {circuit.v0_squared} outside "
            f"[{1 - epsilon}, {1 + epsilon}]"
        )
    if circuit.v_base <= 0:
        violations.append(f"circuit: v_base must be positive, got {circuit.v_base}")
    if circuit.s_base <= 0:
        violations.append(f"circuit: s_base must be positive, got {circuit.s_base}")
    return violations
