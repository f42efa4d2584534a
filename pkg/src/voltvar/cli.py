"""Command-line interface: generate circuits, solve flows, dispatch, sweep.

Configuration precedence is flags > environment > config file > defaults.
Environment variables use the ``VOLTVAR_`` prefix with the flag name
uppercased (``VOLTVAR_SEED=7``); the config file is a JSON object with the
same keys as the flags (``{"seed": 7, "s": "1.1"}``).  Unknown config keys
are rejected.

Exit codes: 0 success, 1 usage/parameter error, 2 numerical failure
(non-convergence, voltage collapse, infeasible voltage band).  Errors are
reported as one JSON object per line on stderr.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .circuit import Circuit, ParameterError, ScenarioParams, generate_circuit
from .dispatch import (
    STATUS_OPTIMAL,
    InfeasibleError,
    SavingsUndefinedError,
    local_dispatch,
    optimal_dispatch,
    zero_dispatch,
)
from .experiments import (
    ALL_POLICIES,
    SweepSpec,
    run_sweep,
    summarize,
    voltage_profile_case,
    write_manifest,
)
from .powerflow import (
    ConvergenceError,
    VoltageCollapseError,
    losses,
    solve_ac,
    solve_lin,
)

ENV_PREFIX = "VOLTVAR_"

# rural prototype defaults, duplicated in help strings below
DEFAULTS: dict[str, str] = {
    "n": "100",
    "spacing": "200:300",
    "p_c": "0:4",
    "q_c_factor": "0.2:0.3",
    "p_g": "1.0",
    "s": "1.1",
    "r": "0.5",
    "epsilon": "0.05",
    "seed": "0",
    "impedance": "0.33:0.38",
    "v_base": "7200",
    "s_base": "100000",
    "ac_tol": "1e-10",
    "qp_tol": "1e-8",
    "realizations": "20",
    "workers": "1",
    "policies": "ZERO,LOCAL,OPTIMAL",
    "policy": "zero",
    "model": "ac",
}

_CONFIG_KEYS = set(DEFAULTS) | {"out", "raw_out", "circuit", "no_manifest"}


class CliUsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); we map usage errors to 1
        raise CliUsageError(message)


def _parse_pair(text: str, name: str) -> tuple[float, float]:
    parts = text.split(":")
    if len(parts) != 2:
        raise CliUsageError(f"{name}: expected MIN:MAX, got {text!r}")
    try:
        return float(parts[0]), float(parts[1])
    except ValueError:
        raise CliUsageError(f"{name}: expected numbers, got {text!r}") from None


def _parse_grid(text: str, name: str) -> list[float]:
    """A sweep grid: scalar, comma list, or START:STOP:STEP (inclusive stop)."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise CliUsageError(f"{name}: expected START:STOP:STEP, got {text!r}")
        try:
            start, stop, step = (float(p) for p in parts)
        except ValueError:
            raise CliUsageError(f"{name}: expected numbers, got {text!r}") from None
        if step <= 0:
            raise CliUsageError(f"{name}: step must be positive, got {step}")
        if stop < start - 1e-12:
            raise CliUsageError(f"{name}: stop below start in {text!r}")
        count = int(math.floor((stop - start) / step + 1e-12))
        return [start + i * step for i in range(count + 1)]
    try:
        return [float(p) for p in text.split(",") if p.strip() != ""]
    except ValueError:
        raise CliUsageError(f"{name}: expected numbers, got {text!r}") from None


def _parse_policies(text: str) -> tuple[str, ...]:
    out = []
    for part in text.split(","):
        name = part.strip().upper()
        if name not in ALL_POLICIES:
            raise CliUsageError(f"unknown policy {part!r}; choose from zero, local, optimal")
        out.append(name)
    if not out:
        raise CliUsageError("policies: at least one required")
    return tuple(out)


def _merged_settings(
    args: argparse.Namespace, command_defaults: dict[str, str] | None = None
) -> dict[str, str]:
    """Apply precedence flags > env > config file > defaults; values as text."""
    settings = dict(DEFAULTS)
    if command_defaults:
        settings.update(command_defaults)
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            doc = json.loads(Path(config_path).read_text())
        except FileNotFoundError:
            raise CliUsageError(f"config file not found: {config_path}") from None
        except json.JSONDecodeError as exc:
            raise CliUsageError(f"config file is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise CliUsageError("config file must hold a JSON object")
        for key, value in doc.items():
            if key not in _CONFIG_KEYS:
                raise CliUsageError(f"unknown config key {key!r}")
            if isinstance(value, (list, tuple)):
                settings[key] = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                settings[key] = "1" if value else "0"
            else:
                settings[key] = str(value)
    for key in _CONFIG_KEYS:
        env_val = os.environ.get(ENV_PREFIX + key.upper())
        if env_val is not None:
            settings[key] = env_val
    for key, value in vars(args).items():
        if key in ("command", "config"):
            continue
        if value is not None:
            settings[key] = str(value)
    return settings


def _scenario_params(settings: dict[str, str]) -> ScenarioParams:
    try:
        spacing = _parse_pair(settings["spacing"], "spacing")
        p_c = _parse_pair(settings["p_c"], "p_c")
        q_c_factor = _parse_pair(settings["q_c_factor"], "q_c_factor")
        impedance = _parse_pair(settings["impedance"], "impedance")
        r_vals = _parse_grid(settings["r"], "r")
        s_vals = _parse_grid(settings["s"], "s")
        if len(r_vals) != 1 or len(s_vals) != 1:
            raise CliUsageError("r and s must be single values here; ranges only in sweeps")
        return ScenarioParams(
            n=int(settings["n"]),
            spacing_range=spacing,
            p_c_range=p_c,
            q_c_factor_range=q_c_factor,
            p_g_value=float(settings["p_g"]),
            s_value=s_vals[0],
            penetration_r=r_vals[0],
            epsilon=float(settings["epsilon"]),
            seed=int(settings["seed"]),
            impedance_per_km=impedance,
            v_base=float(settings["v_base"]),
            s_base=float(settings["s_base"]),
        )
    except ValueError as exc:
        raise CliUsageError(str(exc)) from None


def _write_out(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _load_circuit(settings: dict[str, str]) -> Circuit:
    path = settings.get("circuit")
    if not path:
        raise CliUsageError("--circuit is required")
    try:
        return Circuit.load_json(path)
    except FileNotFoundError:
        raise CliUsageError(f"circuit file not found: {path}") from None
    except (KeyError, json.JSONDecodeError) as exc:
        raise CliUsageError(f"circuit file malformed: {exc}") from None


def _dispatch_for(circuit: Circuit, policy: str, settings: dict[str, str]):
    policy = policy.strip().lower()
    if policy == "zero":
        return zero_dispatch(circuit), None
    if policy == "local":
        return local_dispatch(circuit), None
    if policy == "optimal":
        solution = optimal_dispatch(
            circuit,
            epsilon=float(settings["epsilon"]),
            qp_tol=float(settings["qp_tol"]),
        )
        if solution.status != STATUS_OPTIMAL:
            raise InfeasibleError(
                f"optimal dispatch failed with status {solution.status}",
                node=solution.certificate_node,
            )
        return solution.dispatch, solution
    raise CliUsageError(f"unknown policy {policy!r}; choose zero, local or optimal")


# ---------------------------------------------------------------------------
# subcommand handlers


def _cmd_generate(settings: dict[str, str]) -> int:
    params = _scenario_params(settings)
    circuit = generate_circuit(params)
    _write_out(json.dumps(circuit.to_dict(), indent=2) + "\n", settings.get("out"))
    return 0


def _cmd_solve(settings: dict[str, str]) -> int:
    circuit = _load_circuit(settings)
    dispatch, _ = _dispatch_for(circuit, settings["policy"], settings)
    model = settings["model"].strip().lower()
    if model == "ac":
        state = solve_ac(circuit, dispatch, tol=float(settings["ac_tol"]))
    elif model == "lin":
        state = solve_lin(circuit, dispatch)
    else:
        raise CliUsageError(f"unknown model {settings['model']!r}; choose ac or lin")
    loss_pu = losses(circuit, state)
    lines = [
        f"# losses_pu={loss_pu!r} losses_kw={loss_pu * circuit.s_base / 1e3!r} "
        f"model={state.model_tag} policy={dispatch.policy_tag}",
        "node,v_squared,v,P_out,Q_out",
    ]
    n = circuit.n
    for j in range(n + 1):
        p_out = float(state.P[j]) if j < n else 0.0
        q_out = float(state.Q[j]) if j < n else 0.0
        v2 = float(state.v_squared[j])
        lines.append(f"{j},{v2!r},{float(np.sqrt(v2))!r},{p_out!r},{q_out!r}")
    _write_out("\n".join(lines) + "\n", settings.get("out"))
    return 0


def _cmd_dispatch(settings: dict[str, str]) -> int:
    circuit = _load_circuit(settings)
    dispatch, solution = _dispatch_for(circuit, settings["policy"], settings)
    kvar = circuit.s_base / 1e3
    doc = {
        "policy": dispatch.policy_tag,
        "q_g_kvar": [float(q) * kvar for q in dispatch.q_g],
        "objective_kw": (
            solution.objective_value * kvar if solution is not None else None
        ),
        "kkt_residual": solution.kkt_residual if solution is not None else None,
        "status": solution.status if solution is not None else "OK",
    }
    _write_out(json.dumps(doc, indent=2) + "\n", settings.get("out"))
    return 0


def _sweep(settings: dict[str, str], s_grid: list[float], r_grid: list[float], argv_text: str) -> int:
    base = _scenario_params(
        settings | {"s": repr(s_grid[0]), "r": repr(r_grid[0])}
    )
    spec = SweepSpec(
        base_params=base,
        s_values=tuple(s_grid),
        r_values=tuple(r_grid),
        n_realizations=int(settings["realizations"]),
        policies=_parse_policies(settings["policies"]),
        ac_tol=float(settings["ac_tol"]),
        qp_tol=float(settings["qp_tol"]),
    )
    result = run_sweep(spec, workers=int(settings["workers"]))
    out = settings.get("out")
    _write_out(summarize(result), out)
    raw_out = settings.get("raw_out")
    if raw_out:
        Path(raw_out).write_text(result.to_csv())
    if out and out != "-" and settings.get("no_manifest") not in ("1", "True", "true"):
        write_manifest(spec, Path(out).with_suffix(".manifest.json"), command=argv_text)
    return 0


def _cmd_sweep_s(settings: dict[str, str], argv_text: str) -> int:
    s_grid = _parse_grid(settings["s"], "s")
    r_grid = _parse_grid(settings["r"], "r")
    if len(r_grid) != 1:
        raise CliUsageError("sweep-s holds r fixed; give a single --r")
    return _sweep(settings, s_grid, r_grid, argv_text)


def _cmd_sweep_r(settings: dict[str, str], argv_text: str) -> int:
    s_grid = _parse_grid(settings["s"], "s")
    r_grid = _parse_grid(settings["r"], "r")
    if len(s_grid) != 1:
        raise CliUsageError("sweep-r holds s fixed; give a single --s")
    return _sweep(settings, s_grid, r_grid, argv_text)


def _cmd_profile(settings: dict[str, str], argv_text: str) -> int:
    params = _scenario_params(settings)
    case = voltage_profile_case(params)
    out = settings.get("out")
    _write_out(case.to_csv(), out)
    if out and out != "-" and settings.get("no_manifest") not in ("1", "True", "true"):
        spec = SweepSpec(
            base_params=params,
            s_values=(params.s_value,),
            r_values=(params.penetration_r,),
            n_realizations=1,
            policies=("ZERO", "OPTIMAL"),
        )
        write_manifest(spec, Path(out).with_suffix(".manifest.json"), command=argv_text)
    return 0


# ---------------------------------------------------------------------------
# parser assembly


def _add_scenario_flags(sub: argparse.ArgumentParser) -> None:
    g = sub.add_argument_group("scenario (rural prototype defaults)")
    g.add_argument("--n", type=int, help="load node count [default: 100]")
    g.add_argument("--spacing", help="node spacing range in meters, MIN:MAX [default: 200:300]")
    g.add_argument("--p-c", dest="p_c", help="real load range in kW, MIN:MAX [default: 0:4]")
    g.add_argument(
        "--q-c-factor",
        dest="q_c_factor",
        help="reactive-to-real load ratio range, MIN:MAX [default: 0.2:0.3]",
    )
    g.add_argument("--p-g", dest="p_g", type=float, help="PV output per PV node in kW [default: 1.0]")
    g.add_argument(
        "--impedance", help="line impedance in ohm/km, R:X [default: 0.33:0.38]"
    )
    g.add_argument("--v-base", dest="v_base", type=float, help="voltage base in volts [default: 7200]")
    g.add_argument(
        "--s-base", dest="s_base", type=float, help="power base in volt-amperes [default: 100000]"
    )
    g.add_argument("--epsilon", type=float, help="voltage half-band on squared pu voltage [default: 0.05]")
    g.add_argument("--seed", type=int, help="realization seed [default: 0]")
    g.add_argument("--config", help="JSON config file; flags and environment override it")


def build_parser() -> _Parser:
    parser = _Parser(
        prog="voltvar",
        description=(
            "Radial feeder power flow and PV inverter reactive dispatch. "
            "Defaults describe the rural prototype circuit: 100 nodes, "
            "200-300 m spacing, 0-4 kW loads at power factor 0.96-0.98, "
            "1 kW PV behind 1.1 kVA inverters, 0.33+0.38j ohm/km at 7.2 kV."
        ),
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("generate", help="draw a circuit realization and write it as JSON")
    _add_scenario_flags(p)
    p.add_argument("--s", help="inverter rating in kVA [default: 1.1]")
    p.add_argument("--r", help="PV penetration fraction [default: 0.5]")
    p.add_argument("--out", help="output path or - for stdout [default: -]")

    p = subs.add_parser("solve", help="solve one operating point of a saved circuit")
    _add_scenario_flags(p)
    p.add_argument("--circuit", help="circuit JSON produced by generate")
    p.add_argument("--policy", help="zero, local or optimal [default: zero]")
    p.add_argument("--model", help="ac (exact sweep) or lin (closed form) [default: ac]")
    p.add_argument("--ac-tol", dest="ac_tol", type=float, help="AC residual tolerance [default: 1e-10]")
    p.add_argument("--qp-tol", dest="qp_tol", type=float, help="KKT residual tolerance [default: 1e-8]")
    p.add_argument("--out", help="output path or - for stdout [default: -]")

    p = subs.add_parser("dispatch", help="compute setpoints for a saved circuit")
    _add_scenario_flags(p)
    p.add_argument("--circuit", help="circuit JSON produced by generate")
    p.add_argument("--policy", help="zero, local or optimal [default: optimal]")
    p.add_argument("--qp-tol", dest="qp_tol", type=float, help="KKT residual tolerance [default: 1e-8]")
    p.add_argument("--out", help="output path or - for stdout [default: -]")

    for name, fixed, swept in (("sweep-s", "r", "s"), ("sweep-r", "s", "r")):
        p = subs.add_parser(
            name,
            help=f"Monte Carlo sweep over {swept} at fixed {fixed}; writes per-cell statistics CSV",
        )
        _add_scenario_flags(p)
        p.add_argument("--s", help="inverter rating grid in kVA: value, list or START:STOP:STEP [default: 1.1]")
        p.add_argument("--r", help="penetration grid: value, list or START:STOP:STEP [default: 0.5]")
        p.add_argument("--realizations", type=int, help="realizations per cell [default: 20]")
        p.add_argument("--policies", help="comma list of zero,local,optimal [default: all]")
        p.add_argument("--workers", type=int, help="parallel cell evaluators [default: 1]")
        p.add_argument("--raw-out", dest="raw_out", help="also write per-realization rows here")
        p.add_argument("--no-manifest", dest="no_manifest", action="store_const", const="1",
                       help="skip the .manifest.json beside --out")
        p.add_argument("--ac-tol", dest="ac_tol", type=float, help="AC residual tolerance [default: 1e-10]")
        p.add_argument("--qp-tol", dest="qp_tol", type=float, help="KKT residual tolerance [default: 1e-8]")
        p.add_argument("--out", help="output path or - for stdout [default: -]")

    p = subs.add_parser("profile", help="voltage profile with and without optimal dispatch")
    _add_scenario_flags(p)
    p.add_argument("--s", help="inverter rating in kVA [default: 1.1]")
    p.add_argument("--r", help="PV penetration fraction [default: 0.5]")
    p.add_argument("--no-manifest", dest="no_manifest", action="store_const", const="1",
                   help="skip the .manifest.json beside --out")
    p.add_argument("--out", help="output path or - for stdout [default: -]")

    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        command_defaults = {"policy": "optimal"} if args.command == "dispatch" else None
        settings = _merged_settings(args, command_defaults)
        argv_text = "voltvar " + " ".join(argv)
        if args.command == "generate":
            return _cmd_generate(settings)
        if args.command == "solve":
            return _cmd_solve(settings)
        if args.command == "dispatch":
            return _cmd_dispatch(settings)
        if args.command == "sweep-s":
            return _cmd_sweep_s(settings, argv_text)
        if args.command == "sweep-r":
            return _cmd_sweep_r(settings, argv_text)
        if args.command == "profile":
            return _cmd_profile(settings, argv_text)
        raise CliUsageError(f"unknown command {args.command!r}")
    except (CliUsageError, ParameterError) as exc:
        _emit_error(exc)
        return 1
    except (ConvergenceError, VoltageCollapseError, InfeasibleError, SavingsUndefinedError) as exc:
        _emit_error(exc)
        return 2


def _emit_error(exc: Exception) -> None:
    doc = {"error": type(exc).__name__, "message": str(exc)}
    node = getattr(exc, "node", None)
    if node is not None:
        doc["node"] = node
    print(json.dumps(doc), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
