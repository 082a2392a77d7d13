"""``dfm run --config <path.json> [--seed N] [--out <dir>]``."""
import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import tempfile
from importlib import resources

import numpy as np

from . import __version__
from .drift import ExactDrift, PerturbedDrift, epsilon2_of, fit_drift
from .errors import ConfigError, NumericalError
from .grid import TimeGrid
from .interpolant import InterpolantLaw, marginal_moments, sample_at
from .metrics import audit_h1_h2, gaussian_fit_kl, girsanov_bound, smoothed_target_audit, w2_1d
from .model import Coupling
from .reports import MetricReport
from .rng import RngStream
from .sampler import em_generate, reference_markov

EXPERIMENTS = ("audit", "verify-marginals", "sweep-h", "sweep-epsilon", "sweep-delta", "fit-drift", "girsanov")
CONFIG_KEYS = ("experiment", "coupling", "grid", "n", "seed", "delta", "epsilon", "features", "ridge_lambda", "sub_nodes", "out")
REQUIRED = ("experiment", "coupling", "n", "seed")
DEFAULTS = {
    "grid": None,
    "delta": None,
    "epsilon": None,
    "features": "exact",
    "ridge_lambda": 1e-6,
    "sub_nodes": 4,
    "out": "results",
}
CSV_COLUMNS = ("experiment", "metric", "value", "stderr", "n", "h", "delta", "epsilon", "seed", "extra_json")


def load_windows():
    with resources.files("dfm").joinpath("windows.json").open("r", encoding="utf-8") as fh:
        return json.load(fh)


def fit_slope(points):
    """Weighted least-squares slope of ``log value`` against ``log h``.

    ``points`` is a list of ``(h, value, stderr)``. Weights are
    ``(value / stderr)^2`` when every stderr is positive, uniform otherwise.
    The half-width is 1.96 times the residual-scaled standard error.
    """
    pts = [(float(h), float(v), float(s)) for h, v, s in points]
    if len(pts) < 4:
        raise ValueError("slope needs at least 4 points")
    if any(v <= 0 or h <= 0 for h, v, _ in pts):
        raise ValueError("slope fit needs positive h and values")
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    se = np.array([p[2] / p[1] for p in pts])
    w = 1.0 / se**2 if np.all(se > 0) else np.ones_like(x)
    design = np.stack([np.ones_like(x), x], axis=1)
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(design * sw[:, None], y * sw, rcond=None)
    resid = (y - design @ coef) * sw
    dof = len(pts) - 2
    s2 = float(resid @ resid) / dof
    cov = s2 * np.linalg.inv((design * w[:, None]).T @ design)
    return {"slope": float(coef[1]), "intercept": float(coef[0]), "half_width": 1.96 * math.sqrt(max(cov[1, 1], 0.0))}


# ----------------------------------------------------------------------
# config


def resolve_config(raw, seed=None, out=None):
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - set(CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    missing = [k for k in REQUIRED if k not in raw]
    if missing:
        raise ConfigError(f"missing config keys: {missing}")
    cfg = dict(DEFAULTS)
    cfg.update(raw)
    if seed is not None:
        cfg["seed"] = int(seed)
    if out is not None:
        cfg["out"] = out
    if cfg["experiment"] not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {cfg['experiment']!r}; expected one of {EXPERIMENTS}")
    if not isinstance(cfg["n"], int) or cfg["n"] < 1:
        raise ConfigError("n must be a positive integer")
    if not isinstance(cfg["seed"], int) or not 0 <= cfg["seed"] < 2**64:
        raise ConfigError("seed must be a 64-bit nonnegative integer")
    if cfg["features"] not in ("exact", "affine", "quadratic"):
        raise ConfigError("features must be 'exact', 'affine' or 'quadratic'")
    if not isinstance(cfg["sub_nodes"], int) or cfg["sub_nodes"] < 1:
        raise ConfigError("sub_nodes must be a positive integer")
    if not cfg["ridge_lambda"] > 0:
        raise ConfigError("ridge_lambda must be > 0")
    # validate specs before any computation
    Coupling.from_spec(cfg["coupling"])
    _grid_steps(cfg)
    return cfg


def _as_list(value):
    if value is None:
        return []
    return list(value) if isinstance(value, (list, tuple)) else [value]


def _grid_steps(cfg):
    grid = cfg["grid"]
    if grid is None:
        return [1000] if cfg["experiment"] == "verify-marginals" else [16]
    if not isinstance(grid, dict) or set(grid) - {"n_steps"} or "n_steps" not in grid:
        raise ConfigError("grid must be an object with a single 'n_steps' key (integer or list)")
    steps = _as_list(grid["n_steps"])
    if not steps or not all(isinstance(s, int) and s >= 1 for s in steps):
        raise ConfigError("grid.n_steps must be positive integers")
    return steps


def config_hash(cfg):
    """Hash of the experiment definition; the output location is not part of it."""
    cfg = {k: v for k, v in cfg.items() if k != "out"}
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


# ----------------------------------------------------------------------
# experiments


class Runner:
    def __init__(self, cfg):
        self.cfg = cfg
        self.coupling = Coupling.from_spec(cfg["coupling"])
        self.exp = cfg["experiment"]
        self.master = RngStream(cfg["seed"]).child(self.exp)
        self.windows = load_windows()
        self.rows = []
        self.seeds = {}
        self.hash = config_hash(cfg)

    def stream(self, point, label=""):
        s = self.master.child(point)
        if label:
            s = s.child(label)
        self.seeds[f"{point}/{label}" if label else str(point)] = s.derived_seed()
        return s

    def add(self, report, h=None, delta=None, epsilon=None, **extra):
        meta = {k: v for k, v in report.meta.items() if k not in ("n", "h", "delta")}
        meta.update(extra)
        meta["config_hash"] = self.hash
        self.rows.append(
            {
                "experiment": self.exp,
                "metric": report.name,
                "value": report.value,
                "stderr": report.stderr,
                "n": report.meta.get("n", self.cfg["n"]),
                "h": h if h is not None else report.meta.get("h"),
                "delta": delta if delta is not None else report.meta.get("delta"),
                "epsilon": epsilon,
                "seed": self.cfg["seed"],
                "extra_json": meta,
            }
        )

    def model_for(self, grid, point):
        kind = self.cfg["features"]
        if kind == "exact":
            return ExactDrift(self.coupling)
        return fit_drift(self.coupling, grid, kind, self.cfg["ridge_lambda"], self.cfg["n"], self.stream(point, "fit"))

    def _offset(self, eps):
        e = np.zeros(self.coupling.dim)
        e[0] = eps
        return e

    def _slope_row(self, name, points, window_key, x_label):
        if len(points) < 4:
            return
        fit = fit_slope(points)
        lo, hi = self.windows[window_key]
        report = MetricReport(f"slope_{name}", fit["slope"], fit["half_width"] / 1.96, {"n": self.cfg["n"]})
        self.add(report, half_width=fit["half_width"], window=[lo, hi], against=x_label,
                 status="PASS" if lo <= fit["slope"] <= hi else "FAIL")

    # experiments ------------------------------------------------------
    def run_audit(self):
        for rep in audit_h1_h2(self.coupling.mu, self.coupling.nu, self.coupling, self.cfg["n"], self.stream(0)):
            self.add(rep)

    def run_verify_marginals(self):
        n_steps = _grid_steps(self.cfg)[0]
        grid = TimeGrid(n_steps)
        stride = max(1, n_steps // 4)
        traj = reference_markov(self.coupling, grid, self.cfg["n"], self.stream(0, "markov"), record_every=stride)
        law = InterpolantLaw(self.coupling)
        n_se = self.windows["n_se"]
        for i, t in enumerate(traj.times):
            if t <= 0 or t >= 1:
                continue
            xm = traj.at(t)
            xi = sample_at(law, t, self.cfg["n"], self.stream(i + 1, "interpolant"))
            exact_mean, exact_cov = marginal_moments(law, t)
            for name, a, sa, b, sb, ref in _moment_rows(xm, xi, exact_mean, exact_cov):
                comb = math.hypot(sa, sb)
                ok = abs(a - b) <= n_se * comb
                self.add(MetricReport(name, a - b, comb, {"n": self.cfg["n"]}), h=grid.h,
                         t=float(t), markov=a, interpolant=b, closed_form=ref, status="PASS" if ok else "FAIL")

    def run_sweep_h(self):
        points = []
        eps = _as_list(self.cfg["epsilon"])
        eps = eps[0] if eps else None
        gaussian_terminal = (
            self.coupling.independent and self.coupling.nu.n_components == 1 and self.coupling.mu.n_components == 1
        )
        for i, n_steps in enumerate(_grid_steps(self.cfg)):
            grid = TimeGrid(n_steps)
            model = self.model_for(grid, i)
            if eps is not None:
                model = PerturbedDrift(model, offset=self._offset(eps))
            rep = girsanov_bound(model, self.coupling, grid, self.cfg["sub_nodes"], self.cfg["n"], self.stream(i, "girsanov"))
            self.add(rep, h=grid.h, epsilon=eps, cost=n_steps * self.cfg["n"])
            points.append((grid.h, rep.value, rep.stderr))
            if gaussian_terminal:
                x = em_generate(model, self.coupling.mu, grid, self.cfg["n"], self.stream(i, "sampler"))
                self.add(gaussian_fit_kl(self.coupling.nu, x, "kl_terminal"), h=grid.h, epsilon=eps,
                         cost=n_steps * self.cfg["n"])
        self._slope_row("girsanov_vs_h", points, "sweep-h", "h")

    def run_sweep_epsilon(self):
        n_steps = _grid_steps(self.cfg)[0]
        grid = TimeGrid(n_steps)
        base = self.model_for(grid, 0)
        baseline = girsanov_bound(base, self.coupling, grid, self.cfg["sub_nodes"], self.cfg["n"], self.stream(0, "girsanov"))
        self.add(baseline, h=grid.h, epsilon=0.0, role="baseline")
        points = []
        for i, eps in enumerate(_as_list(self.cfg["epsilon"]) or [0.1, 0.2, 0.4, 0.8]):
            model = PerturbedDrift(base, offset=self._offset(eps))
            e2 = epsilon2_of(model, self.coupling, grid, self.cfg["n"], self.stream(i + 1, "epsilon2"))
            self.add(e2, h=grid.h, epsilon=eps, offset_norm2=eps * eps)
            # common random numbers with the baseline
            rep = girsanov_bound(model, self.coupling, grid, self.cfg["sub_nodes"], self.cfg["n"], self.stream(0, "girsanov"))
            excess = MetricReport("girsanov_excess", rep.value - baseline.value, math.hypot(rep.stderr, baseline.stderr),
                                  {"n": self.cfg["n"]})
            self.add(rep, h=grid.h, epsilon=eps)
            self.add(excess, h=grid.h, epsilon=eps, offset_norm2=eps * eps,
                     ratio=excess.value / (eps * eps) if eps else None)
            if eps > 0 and excess.value > 0:
                points.append((eps * eps, excess.value, excess.stderr))
        self._slope_row("girsanov_excess_vs_eps2", points, "sweep-epsilon", "epsilon^2")

    def run_sweep_delta(self):
        deltas = _as_list(self.cfg["delta"]) or [0.02, 0.05, 0.1, 0.2]
        law = InterpolantLaw(self.coupling)
        d = self.coupling.dim
        n = self.cfg["n"]
        w2_pts, score_pts = [], []
        target = self.coupling.nu.sample(n, self.stream(0, "target"))
        for i, delta in enumerate(deltas):
            audit = smoothed_target_audit(self.coupling, delta, n, self.stream(i + 1, "audit"))
            for rep in audit:
                self.add(rep, delta=delta)
                if rep.name == "score_L8_smoothed":
                    score_pts.append((delta, rep.value, rep.stderr))
            if d == 1:
                smoothed = sample_at(law, 1.0 - delta, n, self.stream(i + 1, "smoothed"))
                w2 = w2_1d(target, smoothed)
                self.add(MetricReport("w2", w2, 0.0, {"n": n}), delta=delta)
                self.add(MetricReport("w2_squared", w2 * w2, 0.0, {"n": n}), delta=delta)
                w2_pts.append((delta, w2 * w2, 0.0))
        self._slope_row("w2_squared_vs_delta", w2_pts, "w2_squared", "delta")
        self._slope_row("score_L8_smoothed_vs_delta", score_pts, "score_L8_smoothed", "delta")

    def run_fit_drift(self):
        n_steps = _grid_steps(self.cfg)[0]
        grid = TimeGrid(n_steps)
        kind = self.cfg["features"]
        if kind == "exact":
            raise ConfigError("fit-drift needs features 'affine' or 'quadratic'")
        model = fit_drift(self.coupling, grid, kind, self.cfg["ridge_lambda"], self.cfg["n"], self.stream(0, "fit"))
        for k in range(grid.n_steps):
            self.add(MetricReport("coefficients", float(np.abs(model.coeffs[k]).max()), 0.0, {"n": self.cfg["n"]}),
                     h=grid.h, knot=k, t=grid.t(k), coeffs=model.coeffs[k].tolist())
        self.add(epsilon2_of(model, self.coupling, grid, self.cfg["n"], self.stream(1, "epsilon2")), h=grid.h)
        self.artifacts = {"model.json": model.to_json()}

    def run_girsanov(self):
        grid = TimeGrid(_grid_steps(self.cfg)[0])
        model = self.model_for(grid, 0)
        eps = _as_list(self.cfg["epsilon"])
        eps = eps[0] if eps else None
        if eps is not None:
            model = PerturbedDrift(model, offset=self._offset(eps))
        self.add(girsanov_bound(model, self.coupling, grid, self.cfg["sub_nodes"], self.cfg["n"], self.stream(0, "girsanov")),
                 h=grid.h, epsilon=eps)
        self.add(epsilon2_of(model, self.coupling, grid, self.cfg["n"], self.stream(0, "epsilon2")), h=grid.h, epsilon=eps)

    def run(self):
        self.artifacts = {}
        getattr(self, "run_" + self.exp.replace("-", "_"))()
        return self.rows


def _moment_rows(xm, xi, exact_mean, exact_cov):
    d = xm.shape[1]
    n = xm.shape[0]
    out = []
    for i in range(d):
        out.append((f"mean_{i}", xm[:, i].mean(), xm[:, i].std(ddof=1) / math.sqrt(n),
                    xi[:, i].mean(), xi[:, i].std(ddof=1) / math.sqrt(n), float(exact_mean[i])))
    cm, ci = xm - xm.mean(0), xi - xi.mean(0)
    for i in range(d):
        for j in range(i, d):
            a, b = cm[:, i] * cm[:, j], ci[:, i] * ci[:, j]
            out.append((f"cov_{i}{j}", a.mean(), a.std(ddof=1) / math.sqrt(n),
                        b.mean(), b.std(ddof=1) / math.sqrt(n), float(exact_cov[i, j])))
    return out


# ----------------------------------------------------------------------
# output


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def rows_to_csv(rows):
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for row in rows:
        extra = json.dumps(_jsonable(row["extra_json"]), sort_keys=True, separators=(",", ":"))
        w.writerow([_fmt(row[c]) for c in CSV_COLUMNS[:-1]] + [extra])
    return buf.getvalue()


def atomic_write(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _numerical_failure(exc, out_dir, experiment, seed, chash):
    diag = exc.diagnostic() if isinstance(exc, NumericalError) else {
        "error": str(exc), "module": "unknown", "operation": type(exc).__name__, "params": {}}
    diag.update({"experiment": experiment, "seed": seed, "config_hash": chash})
    text = json.dumps(_jsonable(diag), indent=2, sort_keys=True)
    atomic_write(os.path.join(out_dir, f"{experiment}.error.json"), text + "\n")
    print(text, file=sys.stderr)
    return 2


def run(config, seed=None, out=None):
    """Run one experiment; returns the process exit code."""
    try:
        cfg = resolve_config(config, seed=seed, out=out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        # a spec that parses but is numerically invalid (e.g. non-PD covariance)
        raw = dict(config)
        out_dir = out if out is not None else raw.get("out", DEFAULTS["out"])
        return _numerical_failure(exc, out_dir, raw.get("experiment", "run"), seed if seed is not None else raw.get("seed"),
                                  config_hash(raw))
    out_dir = cfg["out"]
    runner = Runner(cfg)
    try:
        rows = runner.run()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        return _numerical_failure(exc, out_dir, cfg["experiment"], cfg["seed"], runner.hash)
    base = os.path.join(out_dir, cfg["experiment"])
    atomic_write(base + ".csv", rows_to_csv(rows))
    for name, payload in runner.artifacts.items():
        atomic_write(os.path.join(out_dir, name), json.dumps(_jsonable(payload), sort_keys=True) + "\n")
    sidecar = {
        "config": cfg,
        "config_hash": runner.hash,
        "version": __version__,
        "derived_seeds": runner.seeds,
        "rows": len(rows),
    }
    atomic_write(base + ".json", json.dumps(_jsonable(sidecar), indent=2, sort_keys=True) + "\n")
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(prog="dfm", description="Diffusion flow matching experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment from a JSON config")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--out", default=None)
    args = parser.parse_args(argv)
    try:
        with open(args.config, encoding="utf-8") as fh:
            config = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    return run(config, seed=args.seed, out=args.out)


if __name__ == "__main__":
    sys.exit(main())
