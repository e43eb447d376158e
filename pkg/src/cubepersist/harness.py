"""Declarative simulation runner: convergence, concentration, lower-bound KL
sweeps, timing, sandwich and N_h tail experiments."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .estimator import Bandwidth, block_average, calibrate_bandwidth
from .grid import GridSpec, PersistenceDiagram, ScalarField, SeedStream
from .metrics import (bottleneck, bottleneck_all_degrees, kl_product_gaussians, nh_tail_bound,
                      noise_statistic, sandwich_check, sup_norm_error)
from .persistence import build_filtration, compute_persistence
from .signals import (LowerBoundBase, LowerBoundBump, NoiseModel, Signal, add_noise,
                      default_disc_bumps, has_closed_form, sample_on_grid,
                      signal_from_dict, true_diagram_closed_form, true_diagram_oracle)

KINDS = ("convergence", "concentration", "lower_bound_kl", "sandwich", "timing", "noise_tail")
RAW_HEADER = ["kind", "alpha", "N", "rep", "seed", "bottleneck", "supnorm", "time_s"]


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass
class ExperimentConfig:
    kind: str = "convergence"
    signal: dict | str = "default_disc_bumps"
    alphas: list[float] = field(default_factory=lambda: [1.0])
    resolutions: list[int] = field(default_factory=lambda: [10, 60, 110, 160, 210, 260])
    sigma: float = 0.1
    prefactor: float = 0.1
    repetitions: int = 20
    seed: int = 0
    oracle_N: int = 800
    eval_N: int = 800
    output_dir: str | None = None
    workers: int = 1
    # kind-specific knobs
    t_grid: list[float] | None = None
    lambdas: list[float] = field(default_factory=lambda: [-0.5, 0.0, 0.5])
    block: int | None = None
    dim: int = 2  # noise-tail grids only; signal experiments take d from the signal
    blocks: list[int] = field(default_factory=lambda: [1, 2, 3, 5])
    lower_bound: dict = field(default_factory=lambda: {"M": 1.0, "L": 1.0, "dim": 1})

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        if int(self.repetitions) != self.repetitions or self.repetitions < 1:
            raise ConfigError("repetitions must be a positive integer")
        res = list(self.resolutions)
        if not res or any(int(n) != n or n < 2 for n in res):
            raise ConfigError("resolutions must be integers >= 2")
        if any(b <= a for a, b in zip(res, res[1:])):
            raise ConfigError("resolutions must be strictly increasing")
        if self.kind in ("convergence", "concentration", "sandwich") and self.oracle_N <= max(res):
            raise ConfigError("oracle_N must exceed the largest resolution")
        if self.sigma < 0 or not math.isfinite(self.sigma):
            raise ConfigError("sigma must be finite and non-negative")
        if self.prefactor <= 0:
            raise ConfigError("prefactor must be positive")
        if not self.alphas or any(not 0 < a <= 1 for a in self.alphas):
            raise ConfigError("alphas must lie in (0, 1]")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return asdict(self)

    def base_signal(self) -> Signal:
        if self.signal == "default_disc_bumps":
            return default_disc_bumps(self.alphas[0])
        if isinstance(self.signal, dict):
            try:
                return signal_from_dict(self.signal)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad signal spec: {exc}") from None
        raise ConfigError(f"bad signal spec {self.signal!r}")

    def signal_for(self, alpha: float) -> Signal:
        return self.base_signal().with_alpha(alpha)


@dataclass
class RawRow:
    kind: str
    alpha: float
    N: int
    rep: int
    seed: int
    bottleneck: float
    supnorm: float
    time_s: float


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    rows: list[RawRow] = field(default_factory=list)
    tables: dict[str, list[dict]] = field(default_factory=dict)

    def summary(self) -> list[dict]:
        groups: dict[tuple, list[RawRow]] = {}
        for r in self.rows:
            groups.setdefault((r.kind, r.alpha, r.N), []).append(r)
        out = []
        for (kind, alpha, N), rows in sorted(groups.items()):
            bn = np.array([r.bottleneck for r in rows])
            sn = np.array([r.supnorm for r in rows])
            tm = np.array([r.time_s for r in rows])
            out.append({
                "kind": kind, "alpha": alpha, "N": N, "count": len(rows),
                "mean_bottleneck": float(bn.mean()), "se_bottleneck": _stderr(bn),
                "mean_supnorm": float(sn.mean()), "se_supnorm": _stderr(sn),
                "mean_time_s": float(tm.mean()),
            })
        return out

    def config_hash(self) -> str:
        h = hashlib.sha256(json.dumps(self.config.to_dict(), sort_keys=True).encode())
        for src in sorted(Path(__file__).parent.glob("*.py")):
            h.update(src.read_bytes())
        return h.hexdigest()


def _stderr(x: np.ndarray) -> float:
    if len(x) < 2 or not np.all(np.isfinite(x)):
        return float("nan") if len(x) >= 2 else 0.0
    return float(x.std(ddof=1) / math.sqrt(len(x)))


# truth ------------------------------------------------------------------------

def cache_dir() -> Path:
    env = os.environ.get("CUBEPERSIST_CACHE_DIR")
    return Path(env) if env else Path.home() / ".cache" / "cubepersist"


def true_diagram(spec: Signal, oracle_N: int) -> PersistenceDiagram:
    """Closed form when known, otherwise the oracle diagram cached on disk by content hash."""
    if has_closed_form(spec):
        return true_diagram_closed_form(spec)
    key = hashlib.sha256(f"{spec.to_json()}|{oracle_N}".encode()).hexdigest()[:32]
    path = cache_dir() / f"oracle-{key}.csv"
    if path.exists():
        return PersistenceDiagram.from_csv(path)
    dgm = true_diagram_oracle(spec, oracle_N)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(f".{os.getpid()}.tmp")
    dgm.to_csv(tmp)
    tmp.replace(path)
    return dgm


# one repetition ----------------------------------------------------------------

@dataclass(frozen=True)
class _Task:
    kind: str
    spec_json: str
    alpha_index: int
    alpha: float
    N: int
    rep: int
    sigma: float
    prefactor: float
    block: int | None
    seed: int
    eval_N: int
    oracle_N: int
    lambdas: tuple = ()


def _observe(task: _Task, spec: Signal):
    stream = SeedStream(task.seed).child(task.alpha_index, task.N, task.rep)
    grid = GridSpec(spec.d, task.N)
    obs = add_noise(sample_on_grid(spec, grid), NoiseModel(task.sigma), stream.rng())
    bw = (Bandwidth(task.block, task.N) if task.block
          else calibrate_bandwidth(task.N, spec.d, task.alpha, task.prefactor))
    return obs, bw, stream.derived_seed()


def _run_one(task: _Task):
    from .signals import signal_from_json

    spec = signal_from_json(task.spec_json)
    obs, bw, seed = _observe(task, spec)
    if task.kind == "sandwich":
        reps = [sandwich_check(spec, obs, bw, lam, task.oracle_N, task.sigma) for lam in task.lambdas]
        return task, seed, bw, reps
    est = block_average(obs, bw)
    t0 = time.perf_counter()
    dgm = compute_persistence(build_filtration(est))
    elapsed = time.perf_counter() - t0
    if task.kind == "timing":
        return task, seed, bw, (math.nan, math.nan, elapsed)
    truth = true_diagram(spec, task.oracle_N)
    err = bottleneck_all_degrees(dgm, truth)
    sup = sup_norm_error(spec, est, max(task.eval_N, task.N))
    return task, seed, bw, (err, sup, elapsed)


def _tasks(cfg: ExperimentConfig) -> list[_Task]:
    out = []
    for ai, alpha in enumerate(cfg.alphas):
        spec = cfg.signal_for(alpha).to_json()
        for N in cfg.resolutions:
            for rep in range(cfg.repetitions):
                out.append(_Task(cfg.kind, spec, ai, float(alpha), int(N), rep, cfg.sigma,
                                 cfg.prefactor, cfg.block, cfg.seed, cfg.eval_N, cfg.oracle_N,
                                 tuple(cfg.lambdas)))
    return out


def _map(tasks, workers: int):
    if workers <= 1 or len(tasks) <= 1:
        return [_run_one(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        res = list(pool.map(_run_one, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    # merge order is fixed by (alpha, N, rep) regardless of completion order
    return sorted(res, key=lambda r: (r[0].alpha_index, r[0].N, r[0].rep))


def _prime_truth(cfg: ExperimentConfig) -> None:
    # compute oracle diagrams once up front so workers only read the cache
    for alpha in cfg.alphas:
        true_diagram(cfg.signal_for(alpha), cfg.oracle_N)


def _rows_from(results) -> list[RawRow]:
    return [RawRow(t.kind, t.alpha, t.N, t.rep, seed, err, sup, el)
            for t, seed, _, (err, sup, el) in results]


# experiments -----------------------------------------------------------------

def run_convergence(cfg: ExperimentConfig) -> ExperimentReport:
    _prime_truth(cfg)
    results = _map(_tasks(cfg), cfg.workers)
    report = ExperimentReport(cfg, _rows_from(results))
    report.tables["bandwidth"] = _bandwidth_table(results)
    return report


def _bandwidth_table(results) -> list[dict]:
    seen = {}
    for t, _, bw, _ in results:
        seen[(t.alpha, t.N)] = {"alpha": t.alpha, "N": t.N, "block": bw.block, "h": bw.h}
    return [seen[k] for k in sorted(seen)]


def tail_fit(T: np.ndarray, t_grid) -> tuple[list[dict], float, float]:
    """Empirical tail ``P(T >= t)`` and least-squares slope of ``log P`` against ``t**2``."""
    T = np.asarray(T, dtype=float)
    r = len(T)
    rows = []
    for t in t_grid:
        p = float(np.mean(T >= t))
        rows.append({"t": float(t), "tail": p, "stderr": math.sqrt(p * (1 - p) / r)})
    pts = [(row["t"] ** 2, math.log(row["tail"])) for row in rows if row["tail"] > 0]
    if len(pts) < 2:
        return rows, math.nan, math.nan
    x, y = np.array(pts).T
    slope, intercept = np.polyfit(x, y, 1)
    return rows, float(slope), float(intercept)


def run_concentration(cfg: ExperimentConfig) -> ExperimentReport:
    _prime_truth(cfg)
    results = _map(_tasks(cfg), cfg.workers)
    report = ExperimentReport(cfg, _rows_from(results))
    tail_rows, fit_rows = [], []
    by_key: dict[tuple, list] = {}
    for t, _, bw, (err, _, _) in results:
        by_key.setdefault((t.alpha, t.N), []).append(err / bw.h**t.alpha)
    for (alpha, N), T in sorted(by_key.items()):
        t_grid = cfg.t_grid if cfg.t_grid is not None else np.linspace(0, max(T), 11)
        rows, slope, icpt = tail_fit(np.array(T), t_grid)
        tail_rows += [{"alpha": alpha, "N": N, **row} for row in rows]
        fit_rows.append({"alpha": alpha, "N": N, "slope": slope, "intercept": icpt, "reps": len(T)})
    report.tables["tail"] = tail_rows
    report.tables["tail_fit"] = fit_rows
    return report


def run_timing(cfg: ExperimentConfig) -> ExperimentReport:
    results = _map(_tasks(cfg), 1)  # timings are taken serially
    return ExperimentReport(cfg, _rows_from(results))


def run_sandwich(cfg: ExperimentConfig) -> ExperimentReport:
    results = _map(_tasks(cfg), cfg.workers)
    rows = []
    for t, seed, bw, reps in results:
        for rp in reps:
            rows.append({"alpha": t.alpha, "N": t.N, "rep": t.rep, "seed": seed, "block": bw.block,
                         "lam": rp.lam, "inner_ok": int(rp.inner_ok), "outer_ok": int(rp.outer_ok),
                         "Nh": rp.Nh, "shift": rp.shift, "calibration_ok": int(rp.calibration_ok)})
    report = ExperimentReport(cfg)
    report.tables["sandwich"] = rows
    summ = {}
    for row in rows:
        key = (row["alpha"], row["N"], row["lam"])
        s = summ.setdefault(key, {"alpha": key[0], "N": key[1], "lam": key[2], "reps": 0, "both_ok": 0,
                                  "calibration_ok": row["calibration_ok"]})
        s["reps"] += 1
        s["both_ok"] += row["inner_ok"] & row["outer_ok"]
    report.tables["sandwich_summary"] = [summ[k] for k in sorted(summ)]
    return report


def kl_bound(spec: LowerBoundBump, grid: GridSpec, sigma: float) -> float:
    """Right-hand side ``min(M,L)^2 / (4 d sigma^2) * |H_m ∩ G_n| * h^(2 alpha)``."""
    pts = grid.points()
    inside = np.abs(pts - spec.center).max(axis=1) <= spec.h * (1 + 1e-12)
    return (min(spec.M, spec.L) ** 2 / (4 * spec.d * sigma**2)
            * int(inside.sum()) * spec.h ** (2 * spec.alpha))


def kl_brute(spec1: Signal, spec0: Signal, grid: GridSpec, sigma: float) -> float:
    """Point-by-point KL sum used to cross-check the vectorised version."""
    total = 0.0
    for x in grid.points():
        diff = float(spec1.evaluate(x[None])[0] - spec0.evaluate(x[None])[0])
        total += diff * diff / (2 * sigma * sigma)
    return total


def run_lower_bound_kl(cfg: ExperimentConfig) -> ExperimentReport:
    """Sweep (N, b, m): KL of each hypothesis, its bound, the averaged quantity and diagram separation.

    The bandwidth is ``h = b / N`` for each ``b`` in ``cfg.blocks``.
    """
    lb = dict(cfg.lower_bound)
    M, L, dim = float(lb.get("M", 1.0)), float(lb.get("L", 1.0)), int(lb.get("dim", 1))
    sigma = cfg.sigma if cfg.sigma > 0 else 1.0
    report = ExperimentReport(cfg)
    rows, avg_rows = [], []
    for alpha in cfg.alphas:
        base = LowerBoundBase(M, L, alpha, dim)
        d0 = true_diagram_closed_form(base)
        for N in cfg.resolutions:
            grid = GridSpec(dim, N)
            n = grid.n
            for b in cfg.blocks:
                h = b / N
                if not 0 < h < 1:
                    continue
                K = math.floor(1 / h + 1e-12)
                if K < 2:
                    continue
                kls = []
                for m in range(1, K):
                    spec = LowerBoundBump(M, L, alpha, dim, h, m)
                    kl = kl_product_gaussians(spec, base, grid, sigma)
                    bound = kl_bound(spec, grid, sigma)
                    sep = bottleneck(d0, true_diagram_closed_form(spec), 0)
                    need = min(M, L) * h**alpha / (2 * math.sqrt(dim))
                    rows.append({"alpha": alpha, "N": N, "block": b, "h": h, "m": m, "kl": kl,
                                 "kl_ratio": kl / (n * h ** (2 * alpha + dim)),
                                 "bound": bound, "bound_ok": int(kl <= bound * (1 + 1e-12)),
                                 "separation": sep, "separation_needed": need,
                                 "separation_ok": int(sep >= need)})
                    kls.append(kl)
                q = (sum(kls) / ((K - 2) * math.log(K - 2))) if K >= 4 else math.nan
                avg_rows.append({"alpha": alpha, "N": N, "block": b, "h": h, "K": K, "avg_quantity": q})
    report.tables["kl"] = rows
    report.tables["kl_average"] = avg_rows
    return report


def noise_tail_counts(N: int, block: int, d: int, reps: int, t_grid,
                      seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Monte Carlo draws of N_h; returns the statistic per draw and counts of ``N_h >= t``."""
    bw = Bandwidth(block, N)
    grid = GridSpec(d, N)
    vals = np.empty(reps)
    stream = SeedStream(seed)
    for i in range(reps):
        eps = stream.rng(i).standard_normal(grid.n)
        vals[i] = noise_statistic(ScalarField(grid, eps), bw).value
    counts = np.array([(vals >= t).sum() for t in t_grid])
    return vals, counts


def tail_within_bound(count: int, reps: int, bound: float, level: float = 0.99) -> bool:
    """Whether ``count`` successes out of ``reps`` are consistent with ``P <= bound`` at ``level``."""
    return count <= stats.binom.ppf(level, reps, min(bound, 1.0))


def run_noise_tail(cfg: ExperimentConfig) -> ExperimentReport:
    N = cfg.resolutions[0]
    d = cfg.dim
    block = cfg.block or 6
    t_grid = cfg.t_grid or [1.5, 2.0, 2.5]
    vals, counts = noise_tail_counts(N, block, d, cfg.repetitions, t_grid, cfg.seed)
    h = block / N
    rows = []
    for t, c in zip(t_grid, counts):
        bound = nh_tail_bound(t, h, d)
        rows.append({"N": N, "block": block, "d": d, "t": float(t), "reps": cfg.repetitions,
                     "count": int(c), "empirical": c / cfg.repetitions, "bound": bound,
                     "ok": int(tail_within_bound(int(c), cfg.repetitions, bound))})
    report = ExperimentReport(cfg)
    report.tables["noise_tail"] = rows
    report.tables["noise_draws"] = [{"draw": i, "Nh": float(v)} for i, v in enumerate(vals)]
    return report


RUNNERS = {
    "convergence": run_convergence,
    "concentration": run_concentration,
    "lower_bound_kl": run_lower_bound_kl,
    "sandwich": run_sandwich,
    "timing": run_timing,
    "noise_tail": run_noise_tail,
}


def run(cfg: ExperimentConfig) -> ExperimentReport:
    return RUNNERS[cfg.kind](cfg)


# output ------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return ""
        return "inf" if math.isinf(v) else repr(v)
    return str(v)


def _write_csv(path: Path, header: list[str], rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(row[k]) for k in header])
    path.write_text(buf.getvalue())


def raw_csv_text(report: ExperimentReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RAW_HEADER)
    for r in report.rows:
        # wall-clock time only belongs in raw rows of timing runs; elsewhere it
        # would break byte-for-byte reproducibility
        t = f"{r.time_s:.3g}" if r.kind == "timing" else ""
        w.writerow([r.kind, _fmt(r.alpha), r.N, r.rep, r.seed, _fmt(r.bottleneck), _fmt(r.supnorm), t])
    return buf.getvalue()


SUMMARY_HEADER = ["kind", "alpha", "N", "count", "mean_bottleneck", "se_bottleneck",
                  "mean_supnorm", "se_supnorm", "mean_time_s"]


def emit_report(report: ExperimentReport, out_dir) -> Path:
    out = Path(out_dir)
    try:
        (out / "plotdata").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    (out / "raw.csv").write_text(raw_csv_text(report))
    summary = report.summary()
    if report.config.kind != "timing":
        for s in summary:
            s["mean_time_s"] = math.nan
    _write_csv(out / "summary.csv", SUMMARY_HEADER, summary)
    echo = {"config": report.config.to_dict(), "hash": report.config_hash()}
    (out / "config.json").write_text(json.dumps(echo, indent=2, sort_keys=True) + "\n")
    _write_csv(out / "timing.csv", ["kind", "alpha", "N", "rep", "time_s"],
               [{"kind": r.kind, "alpha": r.alpha, "N": r.N, "rep": r.rep,
                 "time_s": float(f"{r.time_s:.3g}")} for r in report.rows])
    alphas = sorted({s["alpha"] for s in summary})
    for a in alphas:
        series = [s for s in summary if s["alpha"] == a]
        for metric in ("bottleneck", "supnorm"):
            _write_csv(out / "plotdata" / f"{metric}_alpha{a:g}.csv", ["N", "mean", "stderr"],
                       [{"N": s["N"], "mean": s[f"mean_{metric}"], "stderr": s[f"se_{metric}"]}
                        for s in series])
    for name, rows in report.tables.items():
        header = list(rows[0]) if rows else []
        _write_csv(out / f"{name}.csv", header, rows)
    return out
