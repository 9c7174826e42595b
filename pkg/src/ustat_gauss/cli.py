"""Batch experiment runner.

A plan file is JSON with ``schema_version``, a ``config`` (ScenarioConfig
fields), an optional ``grid`` of lists over ``n``, ``p`` and ``regime`` and
command-specific ``options``.  Each grid point writes one CSV or JSON file;
``manifest.json`` records the resolved plan, package versions, per-point
status and wall time.  A manifest can be passed back as ``--config`` to
replay the run.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import math
import platform
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import scipy

from . import __version__
from .errors import ConfigurationError, NumericalError, UsageError
from .marginals import ScenarioConfig

SCHEMA_VERSION = 1
COMMANDS = ("simulate", "bounds", "audit", "mmd", "jive2", "plm", "glue")
FORMATS = ("csv", "json")
GRID_KEYS = ("n", "p", "regime")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3


@dataclass(frozen=True)
class ExperimentPlan:
    command: str
    config: ScenarioConfig
    grid: dict[str, list] | None = None
    output_dir: Path = Path("out")
    format: str = "csv"
    options: dict[str, Any] = field(default_factory=dict)
    threads: int = 1

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigurationError(f"unknown command {self.command!r}; expected one of {COMMANDS}")
        if self.format not in FORMATS:
            raise ConfigurationError(f"unknown format {self.format!r}")
        if self.threads < 1:
            raise ConfigurationError("threads must be >= 1")
        if self.grid is not None:
            extra = set(self.grid) - set(GRID_KEYS)
            if extra:
                raise ConfigurationError(f"unknown grid keys {sorted(extra)}; allowed {GRID_KEYS}")
            for k, v in self.grid.items():
                if not isinstance(v, list):
                    raise ConfigurationError(f"grid entry {k!r} must be a list")

    def points(self) -> list[ScenarioConfig]:
        """Grid points in lexicographic order of ``(n, p, regime)``; validated eagerly."""
        if self.grid is None:
            return [self.config]
        keys = [k for k in GRID_KEYS if k in self.grid]
        out = []
        for combo in itertools.product(*(self.grid[k] for k in keys)):
            d = self.config.to_dict()
            for k, v in zip(keys, combo):
                if k == "regime":
                    d["params"] = {**d["params"], "regime": v}
                else:
                    d[k] = v
            out.append(ScenarioConfig.from_dict(d))
        return out

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "command": self.command,
            "config": self.config.to_dict(),
            "grid": self.grid,
            "format": self.format,
            "options": self.options,
        }


def plan_from_dict(d: dict, command: str, out: str | Path, fmt: str | None = None, seed: int | None = None, threads: int = 1) -> ExperimentPlan:
    if "plan" in d:  # a manifest from an earlier run
        d = d["plan"]
    version = d.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigurationError(f"schema_version must be {SCHEMA_VERSION}, got {version!r}")
    if d.get("command") not in (None, command):
        raise ConfigurationError(f"plan was written for {d['command']!r}, not {command!r}")
    extra = set(d) - {"schema_version", "command", "config", "grid", "format", "options"}
    if extra:
        raise ConfigurationError(f"unknown plan fields {sorted(extra)}")
    if "config" not in d:
        raise ConfigurationError("plan needs a 'config' object")
    cfg = ScenarioConfig.from_dict(d["config"])
    if seed is not None:
        cfg = cfg.with_(seed=int(seed))
    return ExperimentPlan(
        command=command,
        config=cfg,
        grid=d.get("grid"),
        output_dir=Path(out),
        format=fmt or d.get("format", "csv"),
        options=dict(d.get("options") or {}),
        threads=int(threads),
    )


# ---------------------------------------------------------------- point runners
def _opt(options: dict, key: str, default):
    return options.get(key, default)


def _simulate(cfg: ScenarioConfig, options: dict):
    from .gauss import covariance_from_oracle, rectangle_distance, sample_gaussian
    from .scenarios import build_scenario
    from .statistics import compute_w, hoeffding_sigma

    sc = build_scenario(cfg)
    oracle = sc.oracle(_opt(options, "mode", "exact"))
    sigma = hoeffding_sigma(oracle, sc.form)
    ws = np.stack([compute_w(sc.sample(r), sc.kernels, oracle, sc.form, sigma).w for r in range(cfg.replications)])
    header = ["rep_id", "j", "w", "studentized"]
    rows = [(r, j, float(ws[r, j]), float(ws[r, j] / sigma[j])) for r in range(len(ws)) for j in range(cfg.p)]
    summary: dict = {"sigma": sigma.tolist()}
    gd = int(_opt(options, "gaussian_draws", 0))
    if gd > 0:
        cov = covariance_from_oracle(oracle, sc.form)
        z = sample_gaussian(cov, gd, seed=cfg.seed) / sigma
        est = rectangle_distance(ws / sigma, z, grid=int(_opt(options, "grid", 50)), random_rects=int(_opt(options, "random_rects", 200)), seed=cfg.seed)
        summary.update(distance=est.value, distance_se=est.se, argmax=est.argmax)
    return header, rows, {"rows": [dict(zip(header, r)) for r in rows], "summary": summary}, summary


def _bounds(cfg: ScenarioConfig, options: dict):
    from .bounds import delta_report
    from .scenarios import build_scenario

    sc = build_scenario(cfg)
    rep = delta_report(
        sc.kernels,
        sc.oracle(_opt(options, "mode", "exact")),
        q=float(_opt(options, "q", 4.0)),
        form=_opt(options, "form", sc.form),
        mc_draws=int(_opt(options, "mc_draws", 200)),
        seed=cfg.seed,
    )
    header = ["n", "p", "q", "term_name", "value", "se"]
    return header, rep.csv_rows(), rep.to_dict(), {"composite_bound": rep.composite_bound}


def _audit(cfg: ScenarioConfig, options: dict):
    from . import audits

    n, p = int(cfg.n), int(cfg.p)
    marg = audits.audit_marginals(n, cfg.seed)
    kind = _opt(options, "inequality", "max-U")
    r = int(_opt(options, "r", 2))
    reps = int(cfg.replications)
    if kind in ("max-U", "max-nonneg"):
        variant = "degenerate" if kind == "max-U" else "nonneg"
        builders = {
            ("degenerate", 1): audits.degenerate_first_order,
            ("degenerate", 2): audits.degenerate_second_order,
            ("nonneg", 1): audits.nonneg_first_order,
            ("nonneg", 2): audits.nonneg_second_order,
        }
        if (variant, r) not in builders:
            raise ConfigurationError(f"audits support r in {{1, 2}}, got r={r}")
        fam = builders[(variant, r)](marg, p, cfg.seed)
        scale = float(_opt(options, "scale", 1.0))
        if scale != 1.0:
            fam = fam.scaled(scale)
        rep = audits.audit_max_inequality(fam, marg, q=float(_opt(options, "q", 2.0)), reps=reps, seed=cfg.seed, variant=variant)
    elif kind.startswith("rosenthal"):
        fam = audits.degenerate_second_order(marg, p, cfg.seed)
        rep = audits.audit_rosenthal(fam, marg, reps=reps, seed=cfg.seed, variant=kind.split("-", 1)[1] if "-" in kind else "upper")
    else:
        raise ConfigurationError(f"unknown inequality {kind!r}")
    header = ["inequality_id", "n", "p", "q", "r", "lhs", "lhs_se", "rhs", "rhs_se", "ratio"]
    row = (rep.inequality_id, rep.n, rep.p, rep.q, rep.r, rep.lhs, rep.lhs_se, rep.rhs, rep.rhs_se, rep.ratio)
    return header, [row], rep.to_dict(), {"ratio": rep.ratio}


def _mmd(cfg: ScenarioConfig, options: dict):
    from .apps import mmd_adaptive_test
    from .rng import stream

    n = int(cfg.n)
    m = int(cfg.params.get("m", n))
    d = int(cfg.params.get("d", 1))
    shift = float(cfg.params.get("shift", 0.0))
    B = int(_opt(options, "B", 499))
    alpha = float(_opt(options, "alpha", 0.05))
    grid = _opt(options, "bandwidths", None)
    header = ["rep_id", "h", "stat", "studentized", "perm_quantile", "p_value", "decision"]
    rows, results = [], []
    for r in range(cfg.replications):
        g = stream(cfg.seed, r, "mmd_data")
        xs = g.standard_normal((n, d))
        ys = g.standard_normal((m, d)) + shift
        res = mmd_adaptive_test(xs, ys, grid=grid, B=B, alpha=alpha, seed=cfg.seed, rep_id=r)
        results.append(res.to_dict())
        for row in res.csv_rows():
            rows.append((r, row["h"], row["stat"], row["studentized"], row["perm_quantile"], res.p_value, res.decision))
    rate = float(np.mean([x["decision"] == "reject" for x in results]))
    return header, rows, {"results": results, "rejection_rate": rate}, {"rejection_rate": rate}


def _jive2(cfg: ScenarioConfig, options: dict):
    from .apps import jive2
    from .scenarios import build_scenario

    sc = build_scenario(cfg.with_(scenario_kind="weak-iv"))
    des = sc.design
    z, pi = des["Z"][0], des["pi"][0]
    rho = des["rho"]
    lin = z @ pi
    c = math.sqrt(des["mu2"]) / float(np.linalg.norm(lin))
    theta = float(_opt(options, "theta", 1.0))
    header = ["rep_id", "coef", "component", "value"]
    rows, out = [], []
    for r in range(cfg.replications):
        v = sc.sample(r).values
        eps = v[:, 0]
        u = rho * v[:, 0] + math.sqrt(1.0 - rho * rho) * v[:, 1]
        x = c * lin + eps
        y = theta * x + u
        res = jive2(y, x, z, theta=[theta], pi=c * pi)
        out.append(res.to_dict())
        rows.extend((r, row["coef"], row["component"], row["value"]) for row in res.csv_rows())
    return header, rows, {"results": out}, {"regime_tag": out[0]["regime_tag"] if out else None}


def _plm(cfg: ScenarioConfig, options: dict):
    from .apps import plm
    from .scenarios import build_scenario

    sc = build_scenario(cfg.with_(scenario_kind="plm"))
    z = sc.design["z"][0]
    K = int(sc.design["K"])
    beta = float(_opt(options, "beta", 1.0))
    basis = _opt(options, "basis", "legendre")
    h = np.sin(2.0 * math.pi * z)
    g = np.cos(2.0 * math.pi * z)
    header = ["rep_id", "coef", "component", "value"]
    rows, out = [], []
    for r in range(cfg.replications):
        v = sc.sample(r).values
        x = h + v[:, 0]
        y = beta * x + g + v[:, 1]
        res = plm(y, x, z, K, basis, beta=[beta], g=g, h=h)
        out.append(res.to_dict())
        rows.extend((r, row["coef"], row["component"], row["value"]) for row in res.csv_rows())
    return header, rows, {"results": out}, {"K": K}


def _glue(cfg: ScenarioConfig, options: dict):
    from .apps import sep_exchangeable_pipeline

    rep = sep_exchangeable_pipeline(
        n=int(cfg.n),
        m=int(cfg.params.get("m", cfg.n)),
        p=int(cfg.p),
        coef=cfg.params.get("coef"),
        reps=int(cfg.replications),
        seed=cfg.seed,
        f_draws=int(_opt(options, "f_draws", 20)),
        gaussian_draws=int(_opt(options, "gaussian_draws", 20000)),
        latent=cfg.params.get("latent", "normal"),
    )
    d = rep.to_dict()
    header = ["quantity", "value"]
    keys = ("total", "delta1", "delta2", "delta3", "glued", "combined_se", "component_I", "component_II")
    rows = [(k, d[k]) for k in keys] + [("holds", int(rep.holds))]
    return header, rows, d, {"holds": rep.holds}


RUNNERS = {"simulate": _simulate, "bounds": _bounds, "audit": _audit, "mmd": _mmd, "jive2": _jive2, "plm": _plm, "glue": _glue}


# ------------------------------------------------------------------ writing
def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def render_csv(header: list[str], rows: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n", quoting=csv.QUOTE_MINIMAL)
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def render_json(obj) -> str:
    from .bounds import _jsonable

    return json.dumps(_jsonable(obj), sort_keys=True, indent=1) + "\n"


def point_name(command: str, k: int, cfg: ScenarioConfig, fmt: str) -> str:
    tag = f"{command}_{k:03d}_n{cfg.n}_p{cfg.p}"
    if "regime" in cfg.params:
        tag += f"_{cfg.params['regime']}"
    return f"{tag}.{fmt}"


def _run_point(plan: ExperimentPlan, k: int, cfg: ScenarioConfig) -> dict:
    name = point_name(plan.command, k, cfg, plan.format)
    rec: dict[str, Any] = {"index": k, "file": name, "config": cfg.to_dict()}
    t0 = time.perf_counter()
    try:
        header, rows, obj, summary = RUNNERS[plan.command](cfg, plan.options)
        text = render_csv(header, rows) if plan.format == "csv" else render_json(obj)
        (plan.output_dir / name).write_text(text, encoding="utf-8", newline="")
        rec.update(status="ok", summary=summary)
    except NumericalError as exc:
        rec.update(status="numerical_error", error=f"{type(exc).__name__}: {exc}")
    except (ConfigurationError, UsageError) as exc:
        rec.update(status="validation_error", error=f"{type(exc).__name__}: {exc}")
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        rec.update(status="numerical_error", error=f"{type(exc).__name__}: {exc}")
    rec["wall_time_s"] = time.perf_counter() - t0
    return rec


def run(plan: ExperimentPlan) -> int:
    """Execute every grid point, write its file and the manifest; return the exit status."""
    points = plan.points()
    plan.output_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    with ThreadPoolExecutor(max_workers=plan.threads) as pool:
        records = list(pool.map(lambda kc: _run_point(plan, *kc), enumerate(points)))
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "plan": plan.to_dict(),
        "seed": int(plan.config.seed),
        "versions": {"ustat_gauss": __version__, "numpy": np.__version__, "scipy": scipy.__version__, "python": platform.python_version()},
        "threads": plan.threads,
        "points": records,
        "wall_time_s": time.perf_counter() - t0,
    }
    (plan.output_dir / "manifest.json").write_text(render_json(manifest), encoding="utf-8", newline="")
    statuses = {r["status"] for r in records}
    if "numerical_error" in statuses:
        return EXIT_NUMERICAL
    if "validation_error" in statuses:
        return EXIT_VALIDATION
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ustat-gauss", description="Run U-statistic Gaussian-approximation experiments.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="plan JSON file (or a manifest.json to replay)")
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--seed", type=int, default=None, help="override the config seed")
    ap.add_argument("--format", choices=FORMATS, default=None)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_VALIDATION if exc.code else EXIT_OK
    try:
        d = json.loads(Path(args.config).read_text(encoding="utf-8"))
        if not isinstance(d, dict):
            raise ConfigurationError("plan file must hold a JSON object")
        plan = plan_from_dict(d, args.command, args.out, args.format, args.seed, args.threads)
        plan.points()
    except (OSError, json.JSONDecodeError, ConfigurationError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return run(plan)


if __name__ == "__main__":
    sys.exit(main())
