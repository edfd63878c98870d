"""Command-line front end.

Exit codes: 0 success, 1 verification failure, 2 configuration/argument
error, 3 numeric error, 4 accuracy or regularization error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import mittag_leffler as mlf
from .config import PRESETS, ExperimentConfig, preset
from .elliptic import assemble, eigensystem
from .errors import ConfigError, FracSourceError
from .forward import FluxTrace, flux_trace, l1_solve, read_flux, spectral_solve, write_flux
from .fractional_calculus import TimeGrid, TimeSeries
from .inverse import (
    Regularization,
    compute_gset,
    hopf_certificate,
    joint_factor_test,
    reconstruct_space_source,
    reconstruct_time_source,
)

logger = logging.getLogger("fracsource")

UNCHECKED_ASSUMPTIONS = [
    "diffusion matrix is C^1 (only nodal samples are available)",
    "boundary is C^2 (rectangles are only Lipschitz)",
]


class Experiment:
    """Objects derived from a config, built once."""

    def __init__(self, cfg: ExperimentConfig, threads: int = 1):
        self.cfg = cfg
        self.threads = threads
        self.domain = cfg.domain()
        self.coeffs = cfg.coefficients(self.domain)
        self.op = assemble(self.domain, self.coeffs)
        n_modes = min(cfg.modes, self.op.n_interior - 1)
        self.eig = eigensystem(self.op, n_modes)
        self.src = cfg.source(self.eig)
        self.grid = TimeGrid.from_horizon(cfg.T_max, cfg.dt)

    def simulate(self) -> FluxTrace:
        cfg = self.cfg
        boundary = cfg.measured_subset(self.domain)
        if cfg.solver == "spectral":
            traj = spectral_solve(self.eig, cfg.alpha, self.src, self.grid, workers=self.threads)
        else:
            traj = l1_solve(self.op, cfg.alpha, self.src, self.grid)
        self.trajectory = traj
        return flux_trace(traj, self.coeffs, boundary)

    def metadata(self) -> dict:
        cfg = self.cfg
        return {
            "alpha": cfg.alpha, "T": cfg.T, "delta": cfg.delta, "epsilon": cfg.epsilon, "T_max": cfg.T_max,
            "solver": cfg.solver, "modes": int(self.eig.n_modes), "resolution": list(self.domain.resolution),
            "extents": [list(e) for e in self.domain.extents],
            "unchecked_assumptions": UNCHECKED_ASSUMPTIONS,
        }


def _load_config(args) -> ExperimentConfig:
    if args.config and args.preset:
        raise ConfigError("give either --config or --preset, not both")
    if args.config:
        cfg = ExperimentConfig.load(args.config)
    else:
        cfg = preset(args.preset or "paper-1d-a05")
    if args.modes is not None:
        cfg.modes = args.modes
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = args.out
    cfg.validate()
    return cfg


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, text: str) -> None:
    path.write_text(text if text.endswith("\n") else text + "\n")


# {{{ commands

def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    exp = Experiment(cfg, args.threads)
    flux = exp.simulate()
    out = _out_dir(cfg)
    write_flux(out / "flux.csv", flux, exp.metadata())
    (out / "config.ini").write_text(cfg.to_text())
    print(f"wrote {out / 'flux.csv'} ({flux.values.shape[0]} times x {flux.values.shape[1]} nodes)")
    return 0


def _noisy(values: np.ndarray, level: float, seed: int, multiplicative: bool) -> np.ndarray:
    if level == 0:
        return values
    rng = np.random.default_rng(seed)
    xi = rng.standard_normal(values.shape)
    if multiplicative:
        return values * (1.0 + level * xi)
    return values + level * np.abs(values).max() * xi


def cmd_reconstruct(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(cfg)
    problem = args.problem
    if problem == "ip2-test":
        grid = TimeGrid.from_horizon(cfg.T_max, cfg.dt)
        s1 = TimeSeries.sample(grid, cfg.profile())
        s2 = TimeSeries.sample(grid, cfg.second_profile())
        res = joint_factor_test(s1, s2, cfg.alpha, radius=cfg.radius)
        _write_json(out / "ip2.json", res.to_json())
        d = res.diagnostics
        print(f"C = {res.recovered.real:.12g}  defect = {d['defect']:.3e}  proportional = {d['proportional']}")
        return 0

    exp = Experiment(cfg, args.threads)
    data = Path(cfg.data) if cfg.data else out / "flux.csv"
    if not data.exists():
        raise ConfigError(f"flux data {data} not found; run 'simulate' first or set [reconstruction] data")
    if problem == "ip1":
        boundary = cfg.gamma_subset(exp.domain)
        flux = read_flux(data, boundary)
        flux = FluxTrace(boundary, flux.grid, _noisy(flux.values, cfg.noise_level, cfg.seed, True))
        sigma = TimeSeries.sample(flux.grid, lambda t: exp.src.sigma_at(t))
        reg = Regularization(param=cfg.reg_param)
        res = reconstruct_space_source(flux, sigma, exp.eig, cfg.alpha, cfg.n_active, reg, truth=exp.src.f)
        _write_json(out / "ip1.json", res.to_json())
        err = res.errors
        if err is None:
            print("recovered weights: " + " ".join(f"{w:.6e}" for w in res.weights[: cfg.n_active]))
            return 0
        print("mode  recovered          true               abs_error")
        for n, (w, t, e) in enumerate(zip(res.weights[: cfg.n_active], err["weights_true"], err["per_mode_abs_error"])):
            print(f"{n + 1:4d}  {w: .12e}  {t: .12e}  {e:.3e}")
        print(f"relative weight error {err['weights_rel_error']:.3e}")
        return 0

    # ip3
    x0 = cfg.x0_subset(exp.domain)
    flux = read_flux(data, x0)
    h = _noisy(flux.values[:, 0], cfg.noise_level, cfg.seed, False)
    reg = Regularization(param=cfg.reg_param, noise_level=cfg.noise_level or None)
    truth = TimeSeries.sample(flux.grid, lambda t: exp.src.sigma_at(t))
    res = reconstruct_time_source(TimeSeries(flux.grid, h), exp.src.f, exp.eig, cfg.alpha, x0, reg,
                                  T=cfg.T, delta=cfg.delta, truth=truth if np.any(truth.values) else None)
    _write_json(out / "ip3.json", res.to_json())
    with (out / "sigma_hat.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "sigma_hat", "sigma_true"])
        for t, s, st in zip(flux.grid.nodes, res.recovered.values, truth.values):
            w.writerow([repr(float(t)), repr(float(s)), repr(float(st))])
    msg = f"regularization weight {res.reg_param:.3e}"
    if res.errors:
        msg += f", relative L2 error {res.errors['rel_l2_error']:.3e}"
    print(msg)
    return 0


def cmd_gset(args) -> int:
    cfg = _load_config(args)
    exp = Experiment(cfg, args.threads)
    out = _out_dir(cfg)
    report = compute_gset(exp.src.f, exp.op, cfg.alpha, cfg.k_max, zero_tol=cfg.zero_tol)
    payload = json.loads(report.to_json())
    x = exp.domain.coordinates
    if cfg.hopf_g:
        sign = -1.0 if cfg.hopf_g.startswith("-") else 1.0
        shape = cfg.hopf_g.lstrip("+-")
        if shape == "sin":
            lo = np.array([e[0] for e in exp.domain.extents])
            hi = np.array([e[1] for e in exp.domain.extents])
            g = np.prod(np.sin(math.pi * (x - lo) / (hi - lo)), axis=1)
        elif shape == "bump":
            centre = x.mean(axis=0)
            r2 = ((x - centre) ** 2).sum(axis=1) / (0.25 * np.ptp(x, axis=0).min()) ** 2
            g = np.where(r2 < 1, np.exp(1.0 - 1.0 / np.maximum(1.0 - r2, 1e-300)), 0.0)
        else:
            raise ConfigError(f"unknown hopf_g {cfg.hopf_g!r}; use [+-]sin or [+-]bump")
        g = exp.op.to_full(exp.op.to_interior(sign * g))
        vals, ok = hopf_certificate(g, cfg.k1, cfg.k2, exp.op, cfg.alpha)
        payload["hopf"] = {"certificate": ok, "min": float(vals.min()), "max": float(vals.max())}
    _write_json(out / "gset.json", json.dumps(payload, indent=2, sort_keys=True))
    with (out / "gset.csv").open("w", newline="") as fh:
        rows = list(report.rows())
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    print(f"G-set coverage {report.coverage:.3f}; G/J agreement {bool(report.agree.all())}"
          + (f"; Hopf certificate {payload['hopf']['certificate']}" if "hopf" in payload else ""))
    return 0


def cmd_verify(args) -> int:
    from .verify import run_suite

    if args.inject_fault:
        mlf._FAULT_INJECTION = True
    try:
        results = run_suite()
    finally:
        mlf._FAULT_INJECTION = False
    failed = [r for r in results if not r["passed"]]
    for r in results:
        print(f"{'PASS' if r['passed'] else 'FAIL'}  {r['name']}: {r['detail']}")
    summary = {"passed": not failed, "failed": [r["name"] for r in failed], "checks": results}
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "verify.json", json.dumps(summary, indent=2, sort_keys=True))
    print(json.dumps({"passed": summary["passed"], "failed": summary["failed"]}))
    return 0 if not failed else 1


def cmd_ml_eval(args) -> int:
    z = complex(args.z.replace(" ", ""))
    val = mlf.ml(args.alpha, z if z.imag else z.real, args.beta)
    val = complex(val)
    print(repr(val.real) if val.imag == 0 else f"{val.real!r} {val.imag!r}")
    return 0

# }}}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fracsource", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI experiment config")
        p.add_argument("--preset", help=f"built-in config: {', '.join(sorted(PRESETS))}")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="noise seed")
        p.add_argument("--modes", type=int, help="retained eigenmodes")
        p.add_argument("--threads", type=int, default=1, help="worker threads for modal integrals")

    p = sub.add_parser("simulate", help="forward solve and write the boundary flux")
    common(p)
    p.set_defaults(func=cmd_simulate)
    p = sub.add_parser("reconstruct", help="recover f (ip1), sigma (ip3) or test proportionality (ip2-test)")
    common(p)
    p.add_argument("--problem", required=True, choices=["ip1", "ip3", "ip2-test"])
    p.set_defaults(func=cmd_reconstruct)
    p = sub.add_parser("gset", help="admissible measurement points and Hopf certificate")
    common(p)
    p.set_defaults(func=cmd_gset)
    p = sub.add_parser("verify", help="run the invariant suite")
    p.add_argument("--out", help="directory for verify.json")
    p.add_argument("--inject-fault", action="store_true",
                   help="test hook: flip the sign of one Mittag-Leffler series coefficient")
    p.set_defaults(func=cmd_verify)
    p = sub.add_parser("ml-eval", help="evaluate E_{alpha,beta}(z)")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--z", required=True, help="real or complex, e.g. -1.5 or 1+2j")
    p.set_defaults(func=cmd_ml_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    start = time.perf_counter()
    try:
        code = args.func(args)
    except FracSourceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    logger.info("finished in %.2f s", time.perf_counter() - start)
    return code


if __name__ == "__main__":
    sys.exit(main())
