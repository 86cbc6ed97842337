"""Experiment dispatch and result persistence.

Each run produces one JSON record and one CSV file with a row per
estimate. Wall-clock time goes to a separate ``.timing.json`` file so that
reruns of the same configuration produce identical record bytes.
"""
from __future__ import annotations

import csv
import io
import json
import math
import re
import time
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .. import __version__
from ..extremes import (
    borell_envelope,
    check_level_set_inequality,
    estimate_sup_stats,
    expected_sup_upper_bound,
    simulate_suprema,
)
from ..fields import GaussianField, as_explicit
from ..free_energy import check_fe_contribution, estimate_fe_curve, estimate_peak_event_fe, solve_beta
from ..geometry import check_nazarov_bounds, check_var_exp, estimate_surface_profile
from ..martingale import (
    DEFAULT_ETA,
    DEFAULT_INNER,
    DEFAULT_NODES,
    check_events,
    default_grid,
    quadratic_variation,
    simulate_doob_paths,
    tail_experiment,
)
from ..parallel import workers
from ..peaks import PeakQuery, check_corollary25, check_lemma22_bound, estimate_peak_event
from .config import ConfigError, ExperimentConfig

CSV_COLUMNS = ("config", "experiment", "estimate", "value", "ci_low", "ci_high", "stderr")


@dataclass
class ResultRecord:
    config: dict
    field: dict
    estimates: list[dict]
    checks: dict[str, bool]
    details: dict
    provenance: dict
    wall_clock: float = dc_field(default=0.0, compare=False)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "field": self.field,
            "estimates": self.estimates,
            "checks": self.checks,
            "details": self.details,
            "provenance": self.provenance,
        }

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


# -- serialisation -----------------------------------------------------------


def snake_key(key) -> str:
    """``"L_hat"`` to ``"l_hat"``, ``"log N / (delta m)"`` to ``"log_n_delta_m"``."""
    return re.sub(r"[^0-9a-z]+", "_", str(key).lower()).strip("_") or "_"


def _plain(value):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings, lower_snake keys."""
    if isinstance(value, dict):
        out = {}
        for k, v in value.items():
            key = snake_key(k)
            if key in out:
                raise ValueError(f"keys collide after normalisation: {key!r}")
            out[key] = _plain(v)
        return out
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else repr(value)
    return value


def record_json(record: ResultRecord) -> str:
    return json.dumps(_plain(record.to_dict()), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def record_csv(record: ResultRecord) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(CSV_COLUMNS)
    for row in _plain(record.estimates):
        writer.writerow([_cell(row.get(c)) for c in CSV_COLUMNS])
    return buf.getvalue()


def parse_csv(text: str) -> list[dict]:
    """Inverse of :func:`record_csv`: numeric columns back to floats, empty cells to ``None``."""
    rows = []
    for row in csv.DictReader(io.StringIO(text)):
        out = {}
        for key, value in row.items():
            if key in ("value", "ci_low", "ci_high", "stderr"):
                out[key] = None if value == "" else float(value)
            else:
                out[key] = value
        rows.append(out)
    return rows


def write_record(record: ResultRecord, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = record.config["name"]
    paths = {
        "json": out / f"{stem}.json",
        "csv": out / f"{stem}.csv",
        "timing": out / f"{stem}.timing.json",
    }
    paths["json"].write_text(record_json(record), encoding="utf-8")
    paths["csv"].write_text(record_csv(record), encoding="utf-8", newline="")
    paths["timing"].write_text(json.dumps({"wall_clock_seconds": record.wall_clock}) + "\n", encoding="utf-8")
    return paths


# -- experiments -------------------------------------------------------------


class _Rows:
    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.rows: list[dict] = []

    def add(self, name, value, ci=None, stderr=None):
        self.rows.append(
            {
                "config": self.cfg.label(),
                "experiment": self.cfg.experiment,
                "estimate": name,
                "value": float(value) if value is not None else None,
                "ci_low": float(ci[0]) if ci is not None else None,
                "ci_high": float(ci[1]) if ci is not None else None,
                "stderr": float(stderr) if stderr is not None else None,
            }
        )


def _param(cfg: ExperimentConfig, key: str, default=None, required: bool = False):
    if key in cfg.params:
        return cfg.params[key]
    if required:
        raise ConfigError(f"params.{key}", "required for experiment " + cfg.experiment)
    return default


def _query(cfg: ExperimentConfig) -> PeakQuery:
    try:
        return PeakQuery(
            delta=float(_param(cfg, "delta", required=True)),
            eps=float(_param(cfg, "eps", required=True)),
            m_ref=_param(cfg, "m_ref"),
            zeta=float(_param(cfg, "zeta", 1.0)),
            normalized=bool(_param(cfg, "normalized", False)),
        )
    except ValueError as exc:
        raise ConfigError("params", str(exc)) from exc


def _sup_stats(cfg, field, rows):
    stats = estimate_sup_stats(field, cfg.trials, cfg.seed)
    rows.add("m_hat", stats.m_hat, stats.m_ci, stats.m_stderr)
    rows.add("var_hat", stats.var_hat, stats.var_ci, stats.var_stderr)
    upper = expected_sup_upper_bound(field) if field.size > 1 else 0.0
    checks = {
        "mean_below_entropy_bound": stats.m_hat <= upper + 4 * stats.m_stderr,
        "var_below_max_variance": stats.var_hat <= field.max_variance + 4 * stats.var_stderr,
    }
    details = {"entropy_bound": upper, "max_variance": field.max_variance}
    z = _param(cfg, "z_multiples")
    if z is not None:
        sigma = math.sqrt(field.max_variance)
        env = borell_envelope(stats, sigma, [float(k) * sigma for k in z])
        for r in env:
            rows.add(f"tail_frequency_z_{r['z']:g}", r["frequency"], stderr=r["stderr"])
        checks["borell_envelope"] = all(r["pass"] for r in env)
        details["borell"] = env
    return checks, details


def _lemma23(cfg, field, rows):
    res = check_level_set_inequality(
        field,
        _param(cfg, "ts", [0.3, 0.5, 0.7]),
        _param(cfg, "lambda_multiples", [0.5, 1.0, 2.0]),
        cfg.trials,
        cfg.seed,
    )
    for r in res:
        rows.add(f"frequency_t_{r['t']:g}_lambda_{r['lambda']:.6g}", r["frequency"], stderr=r["stderr"])
    return {"level_set_inequality": all(r["pass"] for r in res)}, {"rows": res}


def _peaks(cfg, field, rows):
    q = _query(cfg)
    ell = int(_param(cfg, "ell", 1))
    st = estimate_peak_event(field, q, ell, cfg.trials, cfg.seed, int(_param(cfg, "pilot_trials", 10_000)))
    rows.add("frequency", st.frequency, st.ci, st.stderr)
    rows.add("mean_size", st.mean_size)
    rows.add("c1_fit", st.c1_fit)
    rows.add("c2_fit", st.c2_fit)
    return {}, st.summary()


def _cor25(cfg, field, rows):
    res = check_corollary25(
        field, float(_param(cfg, "delta", required=True)), cfg.trials, cfg.seed, int(_param(cfg, "pilot_trials", 10_000))
    )
    rows.add("frequency", res["frequency"], res["ci"], res["stderr"])
    rows.add("c_fit", res["c_fit"])
    return {}, res


def _lemma22(cfg, field, rows):
    sup, _ = simulate_suprema(field, cfg.trials, cfg.seed, "lemma22")
    interval = _param(cfg, "interval")
    res = check_lemma22_bound(field, sup, float(_param(cfg, "eps", required=True)), tuple(interval) if interval else None)
    rows.add("width", res["width"])
    rows.add("outside_frequency", res["outside_frequency"])
    if "size" in res:
        rows.add("size", res["size"])
        rows.add("bound", res["bound"])
    checks = {} if res["status"] == "not applicable" else {"lemma22": res["status"] == "pass"}
    return checks, res


def _fe_curve(cfg, field, rows):
    curve = estimate_fe_curve(field, _param(cfg, "betas", required=True), cfg.trials, cfg.seed, _param(cfg, "sigma_tilde"))
    for s in curve.stats:
        rows.add(f"f_hat_beta_{s.beta:g}", s.f_hat, s.f_ci)
        rows.add(f"var_hat_beta_{s.beta:g}", s.var_hat, s.var_ci)
    rows.add("sup_var", curve.sup_var)
    F, M = curve.free_energies, curve.suprema
    slack = np.log(field.size) / curve.betas
    sandwich = bool(np.all(F >= M[:, None]) and np.all(F <= M[:, None] + slack[None, :] * (1 + 1e-12) + 1e-12))
    return {"sandwich": sandwich}, {"curve": curve.rows(), "sup_mean": curve.sup_mean, "sup_var": curve.sup_var}


def _fe_contribution(cfg, field, rows):
    res = check_fe_contribution(
        field,
        float(_param(cfg, "delta", required=True)),
        float(_param(cfg, "beta", required=True)),
        cfg.trials,
        cfg.seed,
        float(_param(cfg, "c", 1.0)),
        int(_param(cfg, "pilot_trials", 10_000)),
    )
    rows.add("right_frequency", res["right_frequency"], res["right_ci"], res["right_stderr"])
    rows.add("left_failures", res["left_failures"])
    rows.add("empty_u", res["empty_u"])
    rows.add("c_fit", res["c_fit"])
    return {"left_inequality": res["left_pass"]}, res


def _peaks_fe(cfg, field, rows):
    q = _query(cfg)
    beta = _param(cfg, "beta", "auto")
    pilot = int(_param(cfg, "pilot_trials", 10_000))
    c1 = float(_param(cfg, "c1", 1.0))
    details = {}
    if beta == "auto":
        grid = _param(cfg, "beta_grid", [0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0])
        curve = estimate_fe_curve(field, grid, pilot, cfg.seed, _param(cfg, "sigma_tilde"), tag="peaks-fe/beta")
        m = curve.sup_mean if q.m_ref is None else q.m_ref
        beta, iters = solve_beta(
            curve.sigma_tilde_at, field.size, q.delta, q.eps_for(field), m, c1, max_variance=field.max_variance
        )
        beta *= float(_param(cfg, "beta_margin", 1.05))
        details["beta_iterations"] = iters
    st = estimate_peak_event_fe(
        field, q, int(_param(cfg, "ell", 1)), float(beta), cfg.trials, cfg.seed, _param(cfg, "sigma_tilde"), c1, pilot
    )
    rows.add("beta", st.beta)
    rows.add("frequency", st.frequency, st.ci, st.stderr)
    rows.add("mean_size", st.mean_size)
    rows.add("c2_fit", st.c2_fit)
    details.update(st.summary())
    return {}, details


def _martingale(cfg, field, rows):
    efield = as_explicit(field)
    eta = float(_param(cfg, "eta", DEFAULT_ETA))
    grid = default_grid(int(_param(cfg, "nodes", DEFAULT_NODES)), eta)
    paths = simulate_doob_paths(efield, cfg.trials, grid, int(_param(cfg, "inner_samples", DEFAULT_INNER)), cfg.seed, eta)
    totals = np.array([sum(quadratic_variation(p)) for p in paths])
    v0 = np.array([p.V_hat[0] for p in paths])
    s0 = np.array([p.S_hat[0] for p in paths])
    n = len(paths)
    rows.add("qv_plus_remainder", totals.mean(), stderr=totals.std(ddof=1) / math.sqrt(n) if n > 1 else None)
    rows.add("v_hat_0", v0.mean(), stderr=float(np.mean([p.V_stderr[0] for p in paths])) / math.sqrt(n))
    rows.add("s_hat_0", s0.mean())
    v_ok = all(np.all(p.V_hat <= 1 + 3 * p.V_stderr) and np.all(p.V_hat >= -3 * p.V_stderr) for p in paths)
    checks = {"v_within_unit_interval": bool(v_ok)}
    details = {"grid": grid, "paths": n}
    ev = _param(cfg, "events")
    if ev:
        try:
            res = check_events(
                paths, efield, float(ev["eps"]), float(ev["delta"]), float(ev["alpha"]), require_alpha=bool(ev.get("require_alpha", True))
            )
        except KeyError as exc:
            raise ConfigError(f"params.events.{exc.args[0]}", "missing") from exc
        rows.add("e1_frequency", res["e1_frequency"])
        rows.add("e2_minus_e1_frequency", res["e2_minus_e1_frequency"], stderr=res["e2_minus_e1_stderr"])
        details["events"] = res
    return checks, details


def _tail(cfg, field, rows):
    exact = _param(cfg, "exact")
    report = tail_experiment(field, _param(cfg, "betas", required=True), None if exact else cfg.trials, cfg.seed, exact)
    for r in report.rows():
        rows.add(f"probability_beta_{r['beta']:g}", r["probability"], stderr=r["stderr"])
        rows.add(f"exponent_beta_{r['beta']:g}", r["exponent"])
    return {}, {"method": report.method, "m": report.m, "rows": report.rows()}


def _surface(cfg, field, rows):
    profile = estimate_surface_profile(field, cfg.trials, _param(cfg, "bins", "fd"), cfg.seed, _param(cfg, "t_max"))
    rows.add("l_hat", profile.L_hat, profile.L_ci)
    rows.add("total_mass", profile.total_mass())
    checks = {"mass_conserved": abs(profile.total_mass() - 1.0) <= 1e-9}
    details = {"profile": profile.rows(), "negative_mass": profile.negative_mass, "overflow_mass": profile.overflow_mass}
    if field.size >= 2:
        ve = check_var_exp(field, cfg.trials, cfg.seed, profile=profile)
        rows.add("product_sd_mean", ve["product"])
        rows.add("coarea_bound", ve["coarea_bound"])
        rows.add("c_fit", ve["c_fit"])
        checks["coarea"] = ve["coarea_pass"]
        details["var_exp"] = ve
    details["nazarov"] = check_nazarov_bounds(profile)
    return checks, details


DISPATCH = {
    "sup-stats": _sup_stats,
    "lemma23": _lemma23,
    "peaks": _peaks,
    "cor25": _cor25,
    "lemma22": _lemma22,
    "fe-curve": _fe_curve,
    "fe-contribution": _fe_contribution,
    "peaks-fe": _peaks_fe,
    "martingale": _martingale,
    "tail": _tail,
    "surface": _surface,
}


def run(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> ResultRecord:
    """Dispatch ``cfg`` and return its record; persist it when ``out_dir`` is given.

    Invalid parameters surface as :class:`ConfigError` naming the key.
    """
    if cfg.experiment not in DISPATCH:
        raise ConfigError("experiment", f"unknown experiment {cfg.experiment!r}")
    field: GaussianField = cfg.build_field()
    rows = _Rows(cfg)
    start = time.perf_counter()
    with workers(cfg.workers):
        try:
            checks, details = DISPATCH[cfg.experiment](cfg, field, rows)
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"experiment {cfg.experiment}", str(exc)) from exc
    elapsed = time.perf_counter() - start
    record = ResultRecord(
        config=cfg.echo(),
        field=field.describe(),
        estimates=rows.rows,
        checks={k: bool(v) for k, v in checks.items()},
        details=details,
        provenance={"seed": cfg.seed, "workers": cfg.workers, "version": __version__, "rng": "philox-4x64"},
        wall_clock=elapsed,
    )
    if out_dir is not None:
        write_record(record, out_dir)
    return record
