"""Command-line workbench: ``smoothkomlos {gen,walk,moments,verify,discrepancy}``.

Each subcommand is a pure function of its configuration (a JSON file plus
flag overrides; flags win) and the mandatory seed. Outputs go to the ``--out``
directory as CSV (floats with 17 significant digits) and JSON.

Exit codes: 0 success, 1 a check failed, 2 configuration error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from smoothkomlos import diagnostics as dg
from smoothkomlos import gaussprob as gp
from smoothkomlos import moments as mm
from smoothkomlos.gswalk import sample_stacked
from smoothkomlos.instances import (
    InstanceError,
    KomlosMatrix,
    NoiseConfig,
    add_noise,
    exhaustive_min_discrepancy,
    make_instance,
    read_matrix,
    write_matrix,
)
from smoothkomlos.rng import derive_seed, make_rng
from smoothkomlos.truncation import (
    DEFAULT_CAP,
    TruncatedSample,
    TruncationFailure,
    build_window,
    sample_truncated_many,
)

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3

FAULTS = ("constant_coloring",)
VERIFY_EXTRA_THRESHOLDS = (5.0, 6.0)


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    seed: int | None = None
    kind: str = "random_unit_columns"
    d: int = 8
    n: int = 512
    n_list: list | None = None
    sigma: float = 1.0
    matrix: str | None = None  # optional matrix file, overrides kind/d/n
    samples: int = 200  # walk / discrepancy sample count K
    pairs: int | list = 1000
    window_samples: int = 1000
    width_fraction: float = 0.05  # annulus width in units of sqrt(d)
    scaled_halfwidth: float = 0.03  # delta * Delta
    Delta: float | None = None  # explicit acceptance half-width, overrides scaled_halfwidth
    tail_samples: int = 2000
    directions: int = 50
    mgf_samples: int = 2000
    max_tries: int = 10_000
    fault: str | None = None
    out: str = "results"
    workers: int | None = None
    json: bool = False

    def validate(self):
        if self.seed is None:
            raise ConfigError("a seed is mandatory (--seed or \"seed\" in the config file)")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")
        positive = ["d", "n", "sigma", "samples", "window_samples", "width_fraction", "scaled_halfwidth",
                    "tail_samples", "directions", "mgf_samples", "max_tries"]
        for name in positive:
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not v > 0:
                raise ConfigError(f"{name} must be positive, got {v!r}")
        if not 0 < self.sigma <= 1:
            raise ConfigError(f"sigma must lie in (0, 1], got {self.sigma}")
        counts = self.pairs if isinstance(self.pairs, list) else [self.pairs]
        if any(not isinstance(c, int) or c <= 0 for c in counts):
            raise ConfigError(f"pairs must be positive integers, got {self.pairs!r}")
        if self.n_list is not None and any(not isinstance(v, int) or v <= 0 for v in self.n_list):
            raise ConfigError(f"n_list must hold positive integers, got {self.n_list!r}")
        if self.Delta is not None and not self.Delta > 0:
            raise ConfigError("Delta must be positive")
        if self.workers is not None and self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.fault is not None and self.fault not in FAULTS:
            raise ConfigError(f"unknown fault {self.fault!r}; choose from {FAULTS}")

    def data_fields(self) -> dict:
        """Fields that determine results (output location and worker count excluded)."""
        out = asdict(self)
        for k in ("out", "workers", "json"):
            out.pop(k)
        return out


def load_config(args) -> ExperimentConfig:
    cfg = {}
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {args.config} is not valid JSON: {exc}") from None
        if not isinstance(cfg, dict):
            raise ConfigError("config file must hold a JSON object")
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(cfg) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    for name in known:
        v = getattr(args, name, None)
        if v is not None and v is not False:
            cfg[name] = v
    conf = ExperimentConfig(**cfg)
    conf.validate()
    return conf


def _workers(conf) -> int:
    return conf.workers if conf.workers is not None else (os.cpu_count() or 1)


def _instance(conf, n=None) -> KomlosMatrix:
    if conf.matrix:
        try:
            return KomlosMatrix(read_matrix(conf.matrix))
        except OSError as exc:
            raise OSError(f"cannot read matrix {conf.matrix}: {exc}") from exc
    return make_instance(conf.kind, conf.d, n or conf.n, derive_seed(conf.seed, 0))


def _params(conf, d, n) -> gp.KernelParams:
    if conf.Delta is not None:
        return gp.KernelParams(d, n, conf.sigma, conf.Delta)
    return gp.KernelParams.desk(d, n, conf.sigma, conf.scaled_halfwidth)


def _window(conf, M, key):
    width = conf.width_fraction * math.sqrt(M.d)
    return build_window(M, conf.window_samples, derive_seed(conf.seed, key), width=width, cap=DEFAULT_CAP)


def _out_dir(conf) -> Path:
    p = Path(conf.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write(path: Path, text: str):
    path.write_text(text)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=mm.json_default) + "\n"


def _f(v) -> str:
    return format(float(v), ".17g")


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(conf) -> int:
    M = _instance(conf)
    out = _out_dir(conf)
    write_matrix(M, out / "matrix.txt")
    _write(out / "gen.json", _dumps({"config": conf.data_fields(), "d": M.d, "n": M.n}))
    return EXIT_OK


def _walk_batch(args):
    a, seed, start, stop = args
    rows = []
    for i in range(start, stop):
        x, mx, iters = sample_stacked(a, derive_seed(seed, i), return_iterations=True)
        rows.append((i, float(np.linalg.norm(mx)), float(np.max(np.abs(mx))), iters))
    return rows


def _map_batches(fn, payload, seed, count, workers, batch=64):
    jobs = [(payload, seed, s, min(s + batch, count)) for s in range(0, count, batch)]
    if workers <= 1 or len(jobs) == 1:
        parts = [fn(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(fn, jobs))
    return [r for part in parts for r in part]


def cmd_walk(conf) -> int:
    M = _instance(conf)
    rows = _map_batches(_walk_batch, M.entries, derive_seed(conf.seed, 1), conf.samples, _workers(conf))
    out = _out_dir(conf)
    lines = ["index,norm2,norminf,iterations"]
    lines += [f"{i},{_f(n2)},{_f(ni)},{it}" for i, n2, ni, it in rows]
    _write(out / "walk.csv", "\n".join(lines) + "\n")
    n2 = np.array([r[1] for r in rows])
    summary = {
        "config": conf.data_fields(),
        "samples": len(rows),
        "norm2_mean": float(n2.mean()),
        "norm2_median": float(np.median(n2)),
        "norminf_max": float(max(r[2] for r in rows)),
        "iterations_max": int(max(r[3] for r in rows)),
        "overflow_beyond_cap": int(np.sum(n2 > DEFAULT_CAP * math.sqrt(M.d))),
    }
    _write(out / "walk_summary.json", _dumps(summary))
    if conf.json:
        print(_dumps(summary), end="")
    return EXIT_OK


def cmd_moments(conf) -> int:
    if conf.Delta is not None:
        raise ConfigError("moments uses scaled_halfwidth per n; an absolute Delta is not supported here")
    n_list = conf.n_list or [conf.n]

    def make(d, n):
        return _instance(conf, n)

    reports = mm.moment_ratio_sweep(
        make, conf.d, n_list, conf.sigma, conf.pairs, conf.seed,
        window_samples=conf.window_samples, width_fraction=conf.width_fraction,
        scaled_halfwidth=conf.scaled_halfwidth, workers=_workers(conf), max_tries=conf.max_tries,
    )  # fmt: skip
    out = _out_dir(conf)
    _write(out / "moments.csv", mm.reports_to_csv(reports))
    payload = {"config": conf.data_fields(), "reports": [asdict(r) for r in reports]}
    _write(out / "moments.json", _dumps(payload))
    if conf.json:
        print(_dumps(payload), end="")
    else:
        for r in reports:
            print(f"n={r.n:6d}  ratio-1={r.ratio - 1:+.3e} (se {r.ratio_se:.1e})  "
                  f"eventE={r.event_E_freq:.3g}  claim3_viol={r.claim3_violations}")
    return EXIT_CHECK if any(r.claim3_violations for r in reports) else EXIT_OK


def _constant_pool(M, count):
    x = np.ones(M.n)
    mx = M.entries @ x
    return [TruncatedSample(x, mx, float(np.linalg.norm(mx))) for _ in range(count)]


def run_verify(conf) -> dict:
    """The verification bundle; returns a JSON-able report with a ``passed`` flag."""
    M = _instance(conf)
    d, n = M.d, M.n
    params = _params(conf, d, n)
    window = _window(conf, M, 2)
    count = conf.tail_samples
    if conf.fault == "constant_coloring":
        pool = _constant_pool(M, count)
    else:
        pool = sample_truncated_many(M, window, count, derive_seed(conf.seed, 3), conf.max_tries)
    X = np.array([s.coloring for s in pool])
    D = np.array([s.disc_vector for s in pool])
    prefactor = 1.0 / window.mass
    checks = []

    # with prefactor 1/mass the bound only bites beyond t = 4, so extend the grid as far as resolution allows
    grid = dg.DEFAULT_THRESHOLDS + tuple(t for t in VERIFY_EXTRA_THRESHOLDS if math.exp(-t * t / 8) >= 10 / count)
    tx = dg.tail_test(X, conf.directions, grid, samples=count, prefactor=prefactor, seed=derive_seed(conf.seed, 4),
                      extra_directions=np.ones(n), label="tail_test_x")
    tm = dg.tail_test(D, conf.directions, grid, samples=count, prefactor=prefactor, seed=derive_seed(conf.seed, 5),
                      label="tail_test_Mx")
    checks.append({"name": "tail_test_x", "passed": tx.passed, "report": tx.to_dict()})
    checks.append({"name": "tail_test_Mx", "passed": tm.passed, "report": tm.to_dict()})

    norms_ok = all(window.contains(s.norm) for s in pool)
    checks.append({"name": "window_norms", "passed": norms_ok, "report": {"r": window.r, "width": window.width}})

    mg1 = dg.mgf_test(dg.walk_sum_sampler(M), conf.directions, alpha=1.0, samples=conf.mgf_samples,
                      seed=derive_seed(conf.seed, 6), label="mgf_walk_alpha1")
    mg2 = dg.mgf_test(dg.stacked_joint_sampler(M), conf.directions, lambdas=(0.5, 1.0), alpha=2.0,
                      samples=conf.mgf_samples, seed=derive_seed(conf.seed, 7), label="mgf_stacked_alpha2")
    checks.append({"name": "mgf_walk_alpha1", "passed": mg1.passed, "report": mg1.to_dict()})
    checks.append({"name": "mgf_stacked_alpha2", "passed": mg2.passed, "report": mg2.to_dict()})

    # disjoint pairs from the pool
    half = count // 2
    xs, ys = pool[:half], pool[half:2 * half]
    if half >= 1000:
        feats = np.array([dg.pair_features(a, b, window.r) for a, b in zip(xs, ys)])
    else:
        feats = dg.pool_pair_features(pool, window.r)
    lam = mm.lambda_min(d, n, conf.sigma)
    C1 = 2.0 * math.log(1.0 / window.mass) / math.log(d) if d > 1 else 0.0
    try:
        em = dg.exp_moment(feats, lam, C1=C1, d=d) if d > 1 else dg.exp_moment(feats, lam)
        em_report = asdict(em)
        em_ok = bool(em.passed) if em.passed is not None else True
    except (OverflowError, ValueError) as exc:
        em_report, em_ok = {"error": str(exc)}, False
    checks.append({"name": "exp_moment", "passed": em_ok, "report": em_report})

    recs = [mm.evaluate_pair(a, b, params) for a, b in zip(xs, ys)]
    viol = sum(r.claim3_violation for r in recs)
    small = sum(not r.event for r in recs)
    checks.append({"name": "claim3", "passed": viol == 0,
                   "report": {"pairs_checked": small, "violations": int(viol)}})

    lref = gp.log_p_ref(params, window.r)
    slack = gp.window_slack(params, window.r, window.width)
    worst = max(abs(gp.log_p_x_from_disc(s.disc_vector, params) - lref)
                / (gp.claim4_band(s.disc_vector, params) + slack) for s in pool)
    checks.append({"name": "claim4", "passed": worst <= 1.0, "report": {"worst_fraction_of_band": worst}})

    return {
        "config": conf.data_fields(),
        "window": {"r": window.r, "width": window.width, "mass": window.mass, "samples": window.histogram_samples},
        "checks": checks,
        "passed": all(c["passed"] for c in checks),
    }


def cmd_verify(conf) -> int:
    report = run_verify(conf)
    out = _out_dir(conf)
    _write(out / "verify.json", _dumps(report))
    if conf.json:
        print(_dumps(report), end="")
    else:
        print(f"{'check':<22} result")
        for c in report["checks"]:
            print(f"{c['name']:<22} {'PASS' if c['passed'] else 'FAIL'}")
    if not report["passed"]:
        failed = [c for c in report["checks"] if not c["passed"]]
        for c in failed:
            print(f"FAILED {c['name']}: {json.dumps(c['report'], default=mm.json_default)}", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def run_discrepancy(conf) -> dict:
    M = _instance(conf)
    A = add_noise(M, NoiseConfig(conf.sigma, derive_seed(conf.seed, 1)))
    window = _window(conf, M, 2)
    K = conf.samples
    pool = sample_truncated_many(M, window, K, derive_seed(conf.seed, 3), conf.max_tries)
    G = np.array([s.coloring for s in pool])
    gs_vals = np.max(np.abs(G @ A.entries.T), axis=1)
    U = make_rng(conf.seed, 4).choice([-1.0, 1.0], size=(K, M.n))
    un_vals = np.max(np.abs(U @ A.entries.T), axis=1)
    report = {
        "config": conf.data_fields(),
        "window": {"r": window.r, "width": window.width, "mass": window.mass},
        "gs_min": float(gs_vals.min()),
        "gs_median": float(np.median(gs_vals)),
        "uniform_min": float(un_vals.min()),
        "uniform_median": float(np.median(un_vals)),
        "gs_beats_uniform": bool(gs_vals.min() <= un_vals.min()),
        "samples": K,
    }
    if M.n <= 16:
        report["exhaustive_min"] = exhaustive_min_discrepancy(A)[0]
    return report


def cmd_discrepancy(conf) -> int:
    report = run_discrepancy(conf)
    out = _out_dir(conf)
    _write(out / "discrepancy.json", _dumps(report))
    if conf.json:
        print(_dumps(report), end="")
    else:
        print(f"G-sampled min {report['gs_min']:.6g}  median {report['gs_median']:.6g}")
        print(f"uniform   min {report['uniform_min']:.6g}  median {report['uniform_median']:.6g}")
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen,
    "walk": cmd_walk,
    "moments": cmd_moments,
    "verify": cmd_verify,
    "discrepancy": cmd_discrepancy,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smoothkomlos", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file; flags override its values")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--workers", type=int)
        p.add_argument("--json", action="store_true", help="print a machine-readable report")
        p.add_argument("--kind")
        p.add_argument("--matrix", help="matrix text file instead of a generator")
        p.add_argument("--d", type=int)
        p.add_argument("--n", type=int)
        p.add_argument("--n-list", dest="n_list", type=lambda s: [int(v) for v in s.split(",")])
        p.add_argument("--sigma", type=float)
        p.add_argument("--samples", type=int)
        p.add_argument("--pairs", type=lambda s: [int(v) for v in s.split(",")] if "," in s else int(s))
        p.add_argument("--window-samples", dest="window_samples", type=int)
        p.add_argument("--width-fraction", dest="width_fraction", type=float)
        p.add_argument("--scaled-halfwidth", dest="scaled_halfwidth", type=float)
        p.add_argument("--Delta", type=float)
        p.add_argument("--tail-samples", dest="tail_samples", type=int)
        p.add_argument("--directions", type=int)
        p.add_argument("--mgf-samples", dest="mgf_samples", type=int)
        p.add_argument("--max-tries", dest="max_tries", type=int)
        p.add_argument("--fault", choices=FAULTS)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        conf = load_config(args)
        return COMMANDS[args.command](conf)
    except (ConfigError, InstanceError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TruncationFailure as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
