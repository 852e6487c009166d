"""Experiment orchestration: config parsing, seeded runs, artifact persistence.

Every subcommand builds an :class:`ExperimentConfig`, dispatches through
:func:`run`, and persists its outputs (CSV tables, JSON reports, value grids)
together with a :class:`RunManifest` recording the config hash, code version,
wall time, fitted constants and tolerances.  Writes are atomic
(write-then-rename), so a failed run leaves no partial artifact; identical
configs (seed included) reproduce artifact bytes exactly.

Exit codes: 0 ok, 2 config error, 3 invariant violation (with a witness
dump in the message), 4 numeric failure.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import math
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__, dyadic, gauge, mfc, nplayer, transport
from .coefficients import get_coefficients, validate_coefficients
from .measures import (
    EmpiricalMeasure,
    MeasureError,
    from_points,
    load_measure,
    measure_from_json,
    measure_to_json,
)

__all__ = ["ConfigError", "InvariantViolation", "ExperimentConfig", "RunManifest", "run", "emit_plot_data", "main"]

KINDS = (
    "w2",
    "bound",
    "rate",
    "gauge-check",
    "bp",
    "simulate",
    "value",
    "eps-gap",
    "dpp-check",
    "lip-check",
    "ito-check",
    "hjb-solve",
    "chaos",
    "residual",
    "calibrate",
)

STOCHASTIC_KINDS = {
    "rate",
    "gauge-check",
    "simulate",
    "value",
    "eps-gap",
    "dpp-check",
    "lip-check",
    "ito-check",
    "chaos",
}


class ConfigError(MeasureError):
    pass


class InvariantViolation(MeasureError):
    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


_NUMERIC_ERRORS = (
    nplayer.CFLViolation,
    nplayer.DimensionCap,
    nplayer.SupportOutsideGrid,
    mfc.NonFiniteState,
    mfc.QuadratureBudgetExceeded,
)
_INVARIANT_ERRORS = (
    gauge.AxiomViolation,
    gauge.PostconditionFailed,
    InvariantViolation,
)


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    params: Dict[str, str]
    seed: Optional[int]
    outdir: Path

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        if self.kind in STOCHASTIC_KINDS and self.seed is None:
            raise ConfigError(f"kind {self.kind!r} requires a seed")

    def hash(self) -> str:
        payload = json.dumps(
            {"kind": self.kind, "params": self.params, "seed": self.seed},
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass
class RunManifest:
    config_hash: str
    version: str
    kind: str
    wall_time_s: float
    constants: Dict[str, float] = field(default_factory=dict)
    tolerances: Dict[str, float] = field(default_factory=dict)
    artifacts: List[str] = field(default_factory=list)


# ---------------------------------------------------------------------------
# helpers


def _fmt(x) -> str:
    if isinstance(x, float):
        return format(x, ".15g")
    return str(x)


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_json(path: Path, payload) -> None:
    _atomic_write(path, (json.dumps(payload, sort_keys=True, indent=1) + "\n").encode())


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    _atomic_write(path, ("\n".join(lines) + "\n").encode())


def _parse_measure(token: str) -> EmpiricalMeasure:
    if token.startswith("delta:"):
        coords = [float(v) for v in token.split(":", 1)[1].split(",")]
        return from_points([coords])
    return load_measure(token)


def _parse_floats(token: str) -> List[float]:
    return [float(v) for v in token.split(",") if v.strip()]


def _parse_ints(token: str) -> List[int]:
    return [int(v) for v in token.split(",") if v.strip()]


def _need(params: Dict[str, str], *names: str) -> None:
    missing = [n for n in names if n not in params or params[n] == ""]
    if missing:
        raise ConfigError(f"missing required parameter(s): {', '.join(missing)}")


def _gauge_spec(params: Dict[str, str]) -> gauge.GaugeSpec:
    if "spec" in params:
        payload = json.loads(Path(params["spec"]).read_text())
    else:
        payload = {}
    return gauge.GaugeSpec(
        bandwidth=float(params.get("rho", payload.get("bandwidth", 1.0))),
        c_d=float(params.get("cd", payload.get("c_d", 1.0))),
        n_max=int(params.get("nmax", payload.get("n_max", 4))),
        l_max=int(params.get("lmax", payload.get("l_max", 8))),
        horizon=float(params.get("horizon", payload.get("horizon", 1.0))),
    )


def _policies(coeffs, params: Dict[str, str]):
    family = params.get("policy_family", "constant")
    if family == "constant":
        return mfc.constant_policies(coeffs)
    if family == "bangbang":
        thresholds = _parse_floats(params.get("thresholds", "0"))
        return mfc.bang_bang_policies(coeffs, thresholds)
    raise ConfigError(f"unknown policy family {family!r}")


def _sim_params(params: Dict[str, str], seed: int) -> mfc.SimParams:
    return mfc.SimParams(
        n_particles=int(params.get("particles", 2000)),
        steps=int(params.get("steps", 100)),
        reps=int(params.get("reps", 4)),
        seed=seed,
    )


def _grid_params(token: str) -> nplayer.GridParams:
    parts = token.split(",")
    if len(parts) != 3:
        raise ConfigError("grid must be radius,points,steps (steps may be 'auto')")
    steps = parts[2] if parts[2] == "auto" else int(parts[2])
    return nplayer.GridParams(float(parts[0]), int(parts[1]), steps)


# ---------------------------------------------------------------------------
# handlers: build artifacts as (relative name, kind, payload) triples


def _run_w2(cfg, out):
    p = cfg.params
    _need(p, "mu", "nu")
    mu = _parse_measure(p["mu"])
    nu = _parse_measure(p["nu"])
    dist, plan = transport.w2_exact(mu, nu)
    result = {"w2": dist, "cost": plan.cost}
    if "rho" in p:
        budget = transport.SamplingBudget(
            int(p.get("samples", 512)), int(p.get("reps", 16)), cfg.seed or 0
        )
        est, se = transport.w2_smoothed(mu, nu, float(p["rho"]), budget)
        result.update({"rho": float(p["rho"]), "w2_smoothed": est, "stderr": se})
        result["w2_upper_debiased"] = transport.debias_smoothed(est, float(p["rho"]), mu.d)
    out.json("w2.json", result)
    if "plan" in p:
        out.csv(p["plan"], ["source", "target", "mass"], [list(t) for t in plan.pairs])
    return {}


def _run_bound(cfg, out):
    p = cfg.params
    _need(p, "mu", "nu")
    mu = _parse_measure(p["mu"])
    nu = _parse_measure(p["nu"])
    cd_token = p.get("cd", "default")
    if cd_token == "auto":
        c_d = dyadic.calibrate_cd(mu.d)
    elif cd_token == "default":
        c_d = dyadic.DEFAULT_C_D[mu.d]
    else:
        c_d = float(cd_token)
    if "nmax" in p and "lmax" in p:
        spec = dyadic.BoundSpec(c_d, int(p["nmax"]), int(p["lmax"]))
    else:
        spec = dyadic.default_spec(mu, nu, c_d)
    report = dyadic.multiscale_bound(mu, nu, spec)
    out.json(
        "bound.json",
        {
            "partial_sum": report.partial_sum,
            "tail_bound": report.tail_bound,
            "total": report.total,
            "c_d": report.c_d,
            "c_d_origin": "calibrated, not proven",
            "n_max": report.n_max,
            "l_max": report.l_max,
        },
    )
    return {"c_d": c_d}


def _run_rate(cfg, out):
    p = cfg.params
    _need(p, "mu", "sizes")
    mu = _parse_measure(p["mu"])
    if "rho" in p:
        from .measures import SmoothedMeasure

        mu = SmoothedMeasure(mu, float(p["rho"]))
    rows = dyadic.empirical_rate(
        mu, _parse_ints(p["sizes"]), int(p.get("reps", 50)), cfg.seed
    )
    out.csv("rate.csv", ["n", "mean_w2", "stderr"], rows)
    return {}


def _run_gauge_check(cfg, out):
    p = cfg.params
    _need(p, "pairs", "eps")
    spec = _gauge_spec(p)
    payload = json.loads(Path(p["pairs"]).read_text())
    pairs = [
        (
            gauge.GaugePoint(a["t"], measure_from_json(json.dumps(a["mu"]))),
            gauge.GaugePoint(b["t"], measure_from_json(json.dumps(b["mu"]))),
        )
        for a, b in payload
    ]
    report = gauge.check_gauge_axioms(spec, pairs, _parse_floats(p["eps"]))
    out.json(
        "gauge_check.json",
        {
            "n_pairs": report.n_pairs,
            "identity_max": report.identity_max,
            "triggered": {str(k): v for k, v in report.triggered.items()},
            "checked": {str(k): v for k, v in report.checked.items()},
            "violations": report.violations,
            "ok": report.ok(),
        },
    )
    return {"c_d": spec.c_d}


def _run_bp(cfg, out):
    p = cfg.params
    _need(p, "g", "candidates", "lambda", "delta", "start")
    g_values = [float(v) for v in Path(p["g"]).read_text().split()]
    payload = json.loads(Path(p["candidates"]).read_text())
    candidates = [
        gauge.GaugePoint(item["t"], measure_from_json(json.dumps(item["mu"])))
        for item in payload
    ]
    spec = _gauge_spec(p)
    res = gauge.borwein_preiss(
        g_values, candidates, float(p["lambda"]), float(p["delta"]), int(p["start"]), spec
    )
    out.json(
        "bp.json",
        {
            "tilde_index": res.tilde_index,
            "anchor_indices": res.anchor_indices,
            "iterations": res.iterations,
            "perturbation_weights": [w for w, _ in res.perturbation.terms],
        },
    )
    return {}


def _run_simulate(cfg, out):
    p = cfg.params
    _need(p, "coeffs", "mu", "horizon")
    coeffs = get_coefficients(p["coeffs"])
    mu0 = _parse_measure(p["mu"])
    pol = _policies(coeffs, p)[int(p.get("policy_index", 0))]
    path = mfc.simulate(
        coeffs,
        pol,
        float(p.get("t", 0.0)),
        mu0,
        horizon=float(p["horizon"]),
        n_particles=int(p.get("particles", 2000)),
        steps=int(p.get("steps", 100)),
        eps=float(p.get("eps", 0.0)),
        seed=cfg.seed,
    )
    val = mfc.reward(coeffs, path)
    out.json(
        "simulate.json",
        {
            "reward": val,
            "terminal_mean": [float(v) for v in path.states[-1].mean(axis=0)],
            "terminal_var": float(path.states[-1].var()),
            "particles": path.states.shape[1],
            "steps": path.states.shape[0] - 1,
        },
    )
    return {}


def _run_value(cfg, out):
    p = cfg.params
    _need(p, "coeffs", "mu", "horizon")
    coeffs = get_coefficients(p["coeffs"])
    mu0 = _parse_measure(p["mu"])
    pols = _policies(coeffs, p)
    pv = mfc.value_policy_search(
        coeffs,
        float(p.get("t", 0.0)),
        mu0,
        pols,
        horizon=float(p["horizon"]),
        eps=float(p.get("eps", 0.0)),
        params=_sim_params(p, cfg.seed),
    )
    out.json(
        "value.json",
        {
            "value": pv.value,
            "stderr": pv.stderr,
            "best_policy": pv.best_index,
            "per_policy": list(pv.per_policy),
            "note": "lower bound for the control value up to Monte Carlo error",
        },
    )
    return {}


def _run_eps_gap(cfg, out):
    p = cfg.params
    _need(p, "coeffs", "mu", "horizon", "eps_list")
    coeffs = get_coefficients(p["coeffs"])
    rep = mfc.eps_gap_experiment(
        coeffs,
        float(p.get("t", 0.0)),
        _parse_measure(p["mu"]),
        _parse_floats(p["eps_list"]),
        horizon=float(p["horizon"]),
        params=_sim_params(p, cfg.seed),
        policies=_policies(coeffs, p),
    )
    out.csv("eps_gap.csv", ["eps", "value", "stderr", "gap"], rep.rows)
    out.json("eps_gap.json", {"c_fit": rep.c_fit, "slope_lsq": rep.slope_lsq})
    return {"C_eps": rep.c_fit}


def _run_dpp(cfg, out):
    p = cfg.params
    _need(p, "coeffs", "mu", "horizon", "s")
    coeffs = get_coefficients(p["coeffs"])
    rep = mfc.dpp_check(
        coeffs,
        float(p.get("t", 0.0)),
        float(p["s"]),
        _parse_measure(p["mu"]),
        _policies(coeffs, p),
        horizon=float(p["horizon"]),
        eps=float(p.get("eps", 0.0)),
        params=_sim_params(p, cfg.seed),
    )
    singleton = len(coeffs.controls) == 1
    ok = rep.equality_ok() if singleton else rep.lower_bound_ok()
    out.json(
        "dpp.json",
        {
            "lhs": rep.lhs,
            "rhs": rep.rhs,
            "gap": rep.gap,
            "tol": rep.tol,
            "singleton": singleton,
            "ok": ok,
        },
    )
    if not ok:
        raise InvariantViolation("dynamic programming check failed", witness=rep)
    return {}


def _run_lip(cfg, out):
    p = cfg.params
    _need(p, "coeffs", "pairs", "horizon")
    coeffs = get_coefficients(p["coeffs"])
    payload = json.loads(Path(p["pairs"]).read_text())
    pairs = [
        (
            measure_from_json(json.dumps(a)),
            measure_from_json(json.dumps(b)),
        )
        for a, b in payload
    ]
    rep = mfc.lipschitz_check(
        coeffs,
        float(p.get("t", 0.0)),
        pairs,
        _policies(coeffs, p),
        horizon=float(p["horizon"]),
        eps=float(p.get("eps", 0.0)),
        params=_sim_params(p, cfg.seed),
    )
    out.csv("lipschitz.csv", ["w2", "value_gap", "ratio"], rep.rows)
    out.json("lipschitz.json", {"max_ratio": rep.max_ratio})
    return {"L_fit": rep.max_ratio}


def _run_ito(cfg, out):
    p = cfg.params
    _need(p, "u", "mu", "s")
    mu0 = _parse_measure(p["mu"])
    d = mu0.d
    kind = p["u"]
    if kind == "mean":
        u = mfc.candidate_mean(d)
    elif kind == "second":
        u = mfc.candidate_second_moment(d)
    elif kind == "gauge":
        _need(p, "anchor")
        item = json.loads(Path(p["anchor"]).read_text())
        anchor = gauge.GaugePoint(item["t"], measure_from_json(json.dumps(item["mu"])))
        u = mfc.candidate_from_gauge(anchor, _gauge_spec(p))
    else:
        raise ConfigError(f"unknown candidate kind {kind!r}")
    beta = _parse_floats(p.get("beta", "0")) or [0.0] * d
    theta_flat = _parse_floats(p.get("theta", "0"))
    m = max(1, len(theta_flat) // d)
    theta = np.asarray(theta_flat, dtype=float).reshape(d, m) if theta_flat else np.zeros((d, 1))
    res = mfc.ito_check(
        u,
        beta,
        theta,
        float(p.get("t", 0.0)),
        float(p["s"]),
        mu0,
        particles=int(p.get("particles", 2000)),
        steps=int(p.get("steps", 200)),
        seed=cfg.seed,
    )
    out.json("ito.json", {"residual": res, "candidate": u.name})
    return {}


def _run_hjb(cfg, out):
    p = cfg.params
    _need(p, "coeffs", "n", "m", "eps", "grid", "horizon")
    coeffs = get_coefficients(p["coeffs"])
    moll = mfc.mollify(
        coeffs, int(p["n"]), int(p["m"]), order=int(p.get("order", 8)),
        horizon=float(p["horizon"]),
    )
    vg = nplayer.solve_hjb(
        moll, float(p["eps"]), horizon=float(p["horizon"]), grid=_grid_params(p["grid"])
    )
    out.grid(p.get("out", "grid.npz"), vg)
    db = nplayer.derivative_bounds_check(vg)
    out.json(
        "hjb.json",
        {
            "steps": vg.provenance["steps"],
            "value_at_origin": float(vg.values[0][(vg.axis.size // 2,) * vg.n_axes]),
            "first_derivative_max": list(db.first_max),
            "c_k_fit": db.c_k_fit,
            "second_min": db.second_min,
            "second_max": db.second_max,
        },
    )
    return {"C_K": db.c_k_fit}


def _run_chaos(cfg, out):
    p = cfg.params
    _need(p, "coeffs", "n_list", "m_list", "eps", "horizon", "mu")
    coeffs = get_coefficients(p["coeffs"])
    grids = {}
    for part in p.get("grids", "1:8,201,auto;2:6,101,auto;3:6,61,auto").split(";"):
        key, token = part.split(":")
        grids[int(key)] = _grid_params(token)
    rep = nplayer.chaos_experiment(
        coeffs,
        float(p.get("t", 0.0)),
        _parse_measure(p["mu"]),
        float(p["eps"]),
        _parse_ints(p["n_list"]),
        _parse_ints(p["m_list"]),
        horizon=float(p["horizon"]),
        grid_for=lambda n: grids[n],
        sim_params=_sim_params(p, cfg.seed),
        order=int(p.get("order", 8)),
    )
    out.csv("chaos.csv", ["n", "m", "value"], rep.rows)
    out.json(
        "chaos.json",
        {
            "reference": rep.reference,
            "reference_stderr": rep.reference_stderr,
            "final_gap": abs(rep.rows[-1][2] - rep.reference),
        },
    )
    return {}


def _run_residual(cfg, out):
    p = cfg.params
    _need(p, "grid", "mu", "t")
    vg = nplayer.load_value_grid(p["grid"])
    coeffs = get_coefficients(p.get("coeffs", vg.coeffs_name))
    res = nplayer.master_residual(vg, coeffs, float(p["t"]), _parse_measure(p["mu"]))
    out.json(
        "residual.json", {"residual": res.residual, "terminal_gap": res.terminal_gap}
    )
    return {}


def _run_calibrate(cfg, out):
    p = cfg.params
    d = int(p.get("d", 1))
    c_d = dyadic.calibrate_cd(d, n_instances=int(p.get("instances", 500)))
    big_cd = gauge.calibrate_gauge_cd(d)
    out.json("calibration.json", {"d": d, "c_d": c_d, "gauge_C_d": big_cd})
    return {"c_d": c_d, "gauge_C_d": big_cd}


_HANDLERS: Dict[str, Callable] = {
    "w2": _run_w2,
    "bound": _run_bound,
    "rate": _run_rate,
    "gauge-check": _run_gauge_check,
    "bp": _run_bp,
    "simulate": _run_simulate,
    "value": _run_value,
    "eps-gap": _run_eps_gap,
    "dpp-check": _run_dpp,
    "lip-check": _run_lip,
    "ito-check": _run_ito,
    "hjb-solve": _run_hjb,
    "chaos": _run_chaos,
    "residual": _run_residual,
    "calibrate": _run_calibrate,
}


class _Artifacts:
    """Collects payloads during a run; everything is written only on success."""

    def __init__(self, outdir: Path):
        self.outdir = outdir
        self._jobs: List[Tuple[str, str, object]] = []

    def json(self, name, payload):
        self._jobs.append((name, "json", payload))

    def csv(self, name, header, rows):
        self._jobs.append((name, "csv", (header, rows)))

    def grid(self, name, vg):
        self._jobs.append((name, "grid", vg))

    def flush(self) -> List[str]:
        written = []
        for name, kind, payload in self._jobs:
            path = self.outdir / name
            if kind == "json":
                _write_json(path, payload)
            elif kind == "csv":
                _write_csv(path, payload[0], payload[1])
            else:
                path.parent.mkdir(parents=True, exist_ok=True)
                # numpy appends .npz unless the name already carries it
                fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp.npz")
                os.close(fd)
                try:
                    nplayer.save_value_grid(payload, tmp)
                    os.replace(tmp, path)
                except BaseException:
                    if os.path.exists(tmp):
                        os.unlink(tmp)
                    raise
            written.append(name)
        return written


def run(config: ExperimentConfig) -> RunManifest:
    """Dispatch one experiment; returns the manifest (also written to disk)."""
    start = time.time()
    out = _Artifacts(config.outdir)
    constants = _HANDLERS[config.kind](config, out) or {}
    names = out.flush()
    manifest = RunManifest(
        config_hash=config.hash(),
        version=__version__,
        kind=config.kind,
        wall_time_s=time.time() - start,
        constants={k: float(v) for k, v in constants.items()},
        tolerances={},
        artifacts=names,
    )
    _write_json(
        config.outdir / "manifest.json",
        {
            "config_hash": manifest.config_hash,
            "version": manifest.version,
            "kind": manifest.kind,
            "wall_time_s": manifest.wall_time_s,
            "constants": manifest.constants,
            "tolerances": manifest.tolerances,
            "artifacts": manifest.artifacts,
        },
    )
    return manifest


# ---------------------------------------------------------------------------
# plot-data emission


def emit_plot_data(table_path, kind: str, out_prefix) -> List[str]:
    """Gnuplot-ready data plus a script stub from a CSV artifact."""
    text = Path(table_path).read_text().strip().splitlines()
    if not text:
        raise ConfigError("MissingColumn: empty table")
    header = text[0].split(",")
    rows = [line.split(",") for line in text[1:]]
    out_prefix = Path(out_prefix)
    if kind == "loglog":
        xcol = next((c for c in ("n", "size", "eps") if c in header), None)
        ycol = next((c for c in ("mean_w2", "mean", "value", "gap") if c in header), None)
        if xcol is None or ycol is None or not rows:
            raise ConfigError("MissingColumn: loglog needs an x and a mean column")
        xi, yi = header.index(xcol), header.index(ycol)
        data = "\n".join(f"{_fmt(float(r[xi]))} {_fmt(float(r[yi]))}" for r in rows)
        _atomic_write(out_prefix.with_suffix(".dat"), (data + "\n").encode())
        stub = (
            "set logscale xy\n"
            f"plot '{out_prefix.with_suffix('.dat').name}' using 1:2 with linespoints\n"
        )
        _atomic_write(out_prefix.with_suffix(".gp"), stub.encode())
        return [str(out_prefix.with_suffix(".dat")), str(out_prefix.with_suffix(".gp"))]
    if kind == "series":
        if not {"n", "m", "value"}.issubset(header) or not rows:
            raise ConfigError("MissingColumn: series needs n, m, value columns")
        ni, mi, vi = header.index("n"), header.index("m"), header.index("value")
        groups: Dict[str, List[str]] = {}
        for r in rows:
            groups.setdefault(r[ni], []).append(f"{_fmt(float(r[mi]))} {_fmt(float(r[vi]))}")
        blocks = []
        for key in sorted(groups, key=float):
            blocks.append(f"# n = {key}\n" + "\n".join(groups[key]))
        _atomic_write(out_prefix.with_suffix(".dat"), ("\n\n\n".join(blocks) + "\n").encode())
        stub = (
            f"plot for [i=0:{len(groups) - 1}] '{out_prefix.with_suffix('.dat').name}' "
            "index i using 1:2 with linespoints title sprintf('n=%d', i+1)\n"
        )
        _atomic_write(out_prefix.with_suffix(".gp"), stub.encode())
        return [str(out_prefix.with_suffix(".dat")), str(out_prefix.with_suffix(".gp"))]
    raise ConfigError(f"unknown plot kind {kind!r}")


# ---------------------------------------------------------------------------
# argument parsing


def _config_from_file(path: str) -> ExperimentConfig:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read or "experiment" not in parser:
        raise ConfigError(f"config file {path!r} missing an [experiment] section")
    exp = dict(parser["experiment"])
    kind = exp.pop("kind", None)
    if kind is None:
        raise ConfigError("config file must set kind in [experiment]")
    params = dict(parser["params"]) if "params" in parser else {}
    params.update(exp)
    seed = params.pop("seed", None)
    outdir = Path(params.pop("outdir", os.environ.get("MFGAUGE_OUT", ".")))
    return ExperimentConfig(
        kind=kind,
        params=params,
        seed=None if seed is None else int(seed),
        outdir=outdir,
    )


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="mfgauge",
        description="Wasserstein gauge and mean-field control experiments",
    )
    sub = ap.add_subparsers(dest="command", required=True)
    runp = sub.add_parser("run", help="run an experiment from a config file")
    runp.add_argument("--config", required=True)

    plot = sub.add_parser("plot", help="emit gnuplot data from a CSV artifact")
    plot.add_argument("--table", required=True)
    plot.add_argument("--kind", required=True, choices=["loglog", "series"])
    plot.add_argument("--out", required=True)

    for kind in KINDS:
        p = sub.add_parser(kind, help=f"run the {kind} experiment")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--outdir", default=None)
        p.add_argument("--param", action="append", default=[], metavar="KEY=VALUE")
        # common conveniences as explicit flags
        for flag in (
            "mu", "nu", "coeffs", "grid", "grids", "out", "horizon", "t", "s",
            "eps", "eps-list", "rho", "cd", "nmax", "lmax", "sizes", "reps",
            "samples", "particles", "steps", "n", "m", "n-list", "m-list",
            "pairs", "g", "candidates", "lambda", "delta", "start", "u",
            "beta", "theta", "anchor", "spec", "plan", "d", "instances",
            "policy-family", "thresholds", "order", "policy-index",
        ):
            p.add_argument(f"--{flag}", default=None)
    return ap


def _config_from_args(args) -> ExperimentConfig:
    params = {}
    for key, value in vars(args).items():
        if key in ("command", "seed", "outdir", "param") or value is None:
            continue
        params[key.replace("-", "_")] = str(value)
    for token in args.param:
        if "=" not in token:
            raise ConfigError(f"--param expects KEY=VALUE, got {token!r}")
        k, v = token.split("=", 1)
        params[k.replace("-", "_")] = v
    outdir = Path(args.outdir or os.environ.get("MFGAUGE_OUT", "."))
    return ExperimentConfig(args.command, params, args.seed, outdir)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "plot":
            emit_plot_data(args.table, args.kind, args.out)
            return 0
        if args.command == "run":
            config = _config_from_file(args.config)
        else:
            config = _config_from_args(args)
        manifest = run(config)
        print(f"{config.kind}: ok ({manifest.wall_time_s:.2f}s) -> {config.outdir}")
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except _INVARIANT_ERRORS as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        witness = getattr(exc, "witness", None)
        if witness is not None:
            print(f"witness: {witness}", file=sys.stderr)
        return 3
    except _NUMERIC_ERRORS as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
