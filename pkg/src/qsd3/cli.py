"""Command-line interface: experiment runs, figure presets, CSV export.

Subcommands: run, fig1, fig2, coeffs, noise-check, oracle-compare.
Exit codes: 0 success, 2 configuration error, 3 numerical divergence.
The CLI writes delimited output only; figures are rendered from the CSVs
by the separate plotting package.
"""

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from .config import (
    ExperimentConfig,
    apply_overrides,
    config_from_dict,
    config_from_file,
    default_workers,
)
from .ensemble import ObservableSeries, observables_from_densities, run_ensemble
from .exceptions import ConfigError, DivergenceError, QSDError
from .grid import TimeGrid
from .noise import lag_covariance, ou_correlation, sample_ou_path, trajectory_rng
from .oracles import lindblad_evolve, pseudomode_evolve

CSV_HEADER = (
    "t,Jx,Jx_se,Jy,Jy_se,Jz,Jz_se,purity,purity_se,"
    "rho00,rho11,rho22,re_rho01,im_rho01,re_rho02,im_rho02,re_rho12,im_rho12,n_traj"
)


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def export_csv(series: ObservableSeries, path) -> None:
    """Write the observable series with 17 significant digits per value."""
    rows = [CSV_HEADER]
    for k, t in enumerate(series.times):
        r = series.rho[k]
        cells = [
            t,
            series.jx[k], series.jx_se[k],
            series.jy[k], series.jy_se[k],
            series.jz[k], series.jz_se[k],
            series.purity[k], series.purity_se[k],
            r[0, 0].real, r[1, 1].real, r[2, 2].real,
            r[0, 1].real, r[0, 1].imag,
            r[0, 2].real, r[0, 2].imag,
            r[1, 2].real, r[1, 2].imag,
        ]
        rows.append(",".join(_fmt(c) for c in cells) + f",{series.n_traj}")
    try:
        with open(path, "w") as fh:
            fh.write("\n".join(rows) + "\n")
    except OSError as exc:
        raise QSDError(f"cannot write CSV to {path!r}: {exc}") from None


def read_series_csv(path) -> dict:
    """Parse a CSV written by :func:`export_csv` back into arrays."""
    with open(path) as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise QSDError(f"unexpected CSV header in {path!r}")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.size == 0:
        raise QSDError(f"CSV {path!r} has no data rows")
    cols = {name: data[:, k] for k, name in enumerate(CSV_HEADER.split(","))}
    rho = np.empty((data.shape[0], 3, 3), dtype=complex)
    rho[:, 0, 0] = cols["rho00"]
    rho[:, 1, 1] = cols["rho11"]
    rho[:, 2, 2] = cols["rho22"]
    rho[:, 0, 1] = cols["re_rho01"] + 1j * cols["im_rho01"]
    rho[:, 1, 0] = rho[:, 0, 1].conj()
    rho[:, 0, 2] = cols["re_rho02"] + 1j * cols["im_rho02"]
    rho[:, 2, 0] = rho[:, 0, 2].conj()
    rho[:, 1, 2] = cols["re_rho12"] + 1j * cols["im_rho12"]
    rho[:, 2, 1] = rho[:, 1, 2].conj()
    cols["rho"] = rho
    return cols


def oracle_series(config: ExperimentConfig) -> ObservableSeries:
    """Deterministic density-matrix evolution for the oracle modes."""
    grid = config.time_grid()
    rho0 = np.outer(config.normalized_psi0(), config.normalized_psi0().conj())
    times = grid.times()[grid.output_indices(config.output_stride)]
    if config.mode == "lindblad":
        rhos = lindblad_evolve(config.omega, rho0, grid, config.output_stride)
    elif config.mode == "pseudomode":
        rhos = pseudomode_evolve(config.gamma, config.omega, rho0, grid, config.output_stride)
    else:
        raise ConfigError(f"mode {config.mode!r} is not an oracle mode")
    return observables_from_densities(times, rhos, config.mode)


def run_experiment(config: ExperimentConfig) -> ObservableSeries:
    """Dispatch a validated config to the ensemble runner or an oracle."""
    if config.mode in ("lindblad", "pseudomode"):
        return oracle_series(config)
    return run_ensemble(config)


def matching_oracle_config(config: ExperimentConfig) -> ExperimentConfig:
    """The deterministic counterpart of a stochastic config."""
    if not config.uses_ou_kernel():
        raise ConfigError("no deterministic oracle is available for tabulated kernels")
    mode = "lindblad" if config.mode == "markov_white" else "pseudomode"
    return apply_overrides(config, mode=mode)


# ---------------------------------------------------------------------------
# presets

FIG1_GAMMAS = (0.2, 0.8, 2.0)
FIG2_TRAJ_COUNTS = (5, 1000)


def _preset_base(seed: int, workers: int | None) -> ExperimentConfig:
    return ExperimentConfig(
        mode="nonlinear", gamma=1.0, omega=1.0, dt=0.005, t_max=25.0,
        output_stride=10, n_traj=1000, master_seed=seed,
        workers=workers if workers else default_workers(),
    )


def preset_fig1(seed: int, out_dir, workers: int | None = None) -> list:
    """Angular-momentum relaxation panels: three gammas plus the white-noise run.

    Writes one CSV per panel and a deterministic oracle CSV alongside
    (pseudomode for the colored-noise panels, Lindblad for the white-noise
    panel).  Returns the list of written paths.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base = _preset_base(seed, workers)
    written = []
    for gamma in FIG1_GAMMAS:
        cfg = apply_overrides(base, gamma=gamma)
        path = out / f"fig1_gamma_{gamma}.csv"
        export_csv(run_ensemble(cfg), path)
        written.append(path)
        opath = out / f"fig1_gamma_{gamma}_oracle.csv"
        export_csv(oracle_series(apply_overrides(cfg, mode="pseudomode")), opath)
        written.append(opath)
    markov = apply_overrides(base, mode="markov_white")
    path = out / "fig1_markov.csv"
    export_csv(run_ensemble(markov), path)
    written.append(path)
    opath = out / "fig1_markov_oracle.csv"
    export_csv(oracle_series(apply_overrides(markov, mode="lindblad")), opath)
    written.append(opath)
    return written


def preset_fig2(seed: int, out_dir, workers: int | None = None) -> list:
    """Purity relaxation at 5 and 1000 realizations for each gamma."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base = _preset_base(seed, workers)
    written = []
    for gamma in FIG1_GAMMAS:
        for n in FIG2_TRAJ_COUNTS:
            cfg = apply_overrides(base, gamma=gamma, n_traj=n)
            path = out / f"fig2_n{n}_gamma_{gamma}.csv"
            export_csv(run_ensemble(cfg), path)
            written.append(path)
        opath = out / f"fig2_gamma_{gamma}_oracle.csv"
        export_csv(oracle_series(apply_overrides(base, gamma=gamma, mode="pseudomode")), opath)
        written.append(opath)
    return written


# ---------------------------------------------------------------------------
# subcommand implementations

def _cmd_run(args) -> int:
    config = _config_from_args(args)
    if config.out is None:
        raise ConfigError("an output path is required (--out or the 'out' config field)")
    t0 = time.perf_counter()
    series = run_experiment(config)
    export_csv(series, config.out)
    wall = time.perf_counter() - t0
    print(
        f"mode={config.mode} n_traj={series.n_traj} "
        f"final <Jz>={series.jz[-1]:+.4f} final purity={series.purity[-1]:.4f} "
        f"wall={wall:.1f}s -> {config.out}"
    )
    return 0


def _cmd_fig1(args) -> int:
    t0 = time.perf_counter()
    paths = preset_fig1(args.seed, args.out_dir, args.workers)
    print(f"wrote {len(paths)} files to {args.out_dir} in {time.perf_counter() - t0:.1f}s")
    return 0


def _cmd_fig2(args) -> int:
    t0 = time.perf_counter()
    paths = preset_fig2(args.seed, args.out_dir, args.workers)
    print(f"wrote {len(paths)} files to {args.out_dir} in {time.perf_counter() - t0:.1f}s")
    return 0


def _cmd_coeffs(args) -> int:
    from .coefficients import integrate_ou_coefficients

    grid = TimeGrid.from_horizon(args.dt, args.t_max)
    coeffs = integrate_ou_coefficients(args.gamma, args.omega, grid)
    coeffs.to_csv(args.out)
    print(f"wrote coefficient series to {args.out}")
    return 0


def _cmd_noise_check(args) -> int:
    gamma = args.gamma
    if not gamma > 0.0:
        raise ConfigError(f"gamma must be positive, got {gamma!r}")
    if args.paths < 2:
        raise ConfigError("need at least 2 paths")
    # quarter-memory-time sampling puts the test lags exactly on the grid
    grid = TimeGrid(dt=0.5 / gamma, n_steps=64)
    paths = [
        sample_ou_path(gamma, grid, trajectory_rng(args.seed, i)) for i in range(args.paths)
    ]
    lags_steps = (0, 4, 8)  # 0, 1/gamma, 2/gamma on the half-step grid
    rows = ["lag,re_emp,im_emp,se,re_exact,im_exact"]
    worst = 0.0
    for lag in lags_steps:
        est, se, _, _ = lag_covariance(paths, lag)
        exact = ou_correlation(gamma, lag * grid.half_dt, 0.0)
        dev = abs(est - exact) / se if se > 0 else 0.0
        worst = max(worst, dev)
        rows.append(
            f"{lag * grid.half_dt:.17g},{est.real:.17g},{est.imag:.17g},"
            f"{se:.17g},{exact:.17g},0"
        )
    with open(args.out, "w") as fh:
        fh.write("\n".join(rows) + "\n")
    if args.dump_path:
        paths[0].to_csv(args.dump_path)
    print(f"{args.paths} paths, worst covariance deviation {worst:.2f} sigma -> {args.out}")
    return 0


def _cmd_oracle_compare(args) -> int:
    config = config_from_file(args.config)
    if config.mode not in ("linear", "nonlinear", "markov_white"):
        raise ConfigError("oracle-compare needs a stochastic mode in the config")
    series = run_experiment(config)
    oracle = run_experiment(matching_oracle_config(config))
    rho_sto = series.rho if series.rho_tn is None else series.rho_tn
    dev_rho = float(np.max(np.abs(rho_sto - oracle.rho)))
    dev_jz = float(np.max(np.abs(series.jz - oracle.jz)))
    if args.out:
        export_csv(series, args.out)
        opath = str(Path(args.out).with_suffix("")) + "_oracle.csv"
        export_csv(oracle, opath)
    print(
        f"mode={config.mode} vs {'lindblad' if config.mode == 'markov_white' else 'pseudomode'}: "
        f"max elementwise |rho dev| = {dev_rho:.4f}, max |<Jz> dev| = {dev_jz:.4f}"
    )
    return 0


def _config_from_args(args) -> ExperimentConfig:
    overrides = dict(
        mode=args.mode, gamma=args.gamma, omega=args.omega, dt=args.dt,
        t_max=args.t_max, output_stride=args.output_stride, n_traj=args.n_traj,
        master_seed=args.seed, psi0=args.psi0, kernel=args.kernel,
        workers=args.workers, out=args.out,
    )
    if args.config:
        return apply_overrides(config_from_file(args.config), **overrides)
    present = {k: v for k, v in overrides.items() if v is not None}
    if "workers" not in present:
        present["workers"] = default_workers()
    return config_from_dict(present)


def _add_run_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON config file; flags override its fields")
    p.add_argument("--mode", choices=["linear", "nonlinear", "markov_white", "lindblad", "pseudomode"])
    p.add_argument("--gamma", type=float, help="environment memory rate")
    p.add_argument("--omega", type=float, help="level spacing (default 1)")
    p.add_argument("--dt", type=float, help="integration step (default 0.005)")
    p.add_argument("--t-max", dest="t_max", type=float, help="horizon (default 25)")
    p.add_argument("--output-stride", dest="output_stride", type=int)
    p.add_argument("--n-traj", dest="n_traj", type=int)
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--psi0", help="three comma-separated complex amplitudes, e.g. 1,1,1")
    p.add_argument("--kernel", help="'OU' or a lag,re_alpha,im_alpha CSV path")
    p.add_argument("--workers", type=int, help="parallel workers (default $QSD3_WORKERS or 1)")
    p.add_argument("--out", help="output CSV path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qsd3",
        description="Colored-noise diffusion trajectories for a dissipative three-level system",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment and write its CSV")
    _add_run_flags(p)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("fig1", help="angular-momentum relaxation preset (4 panels + oracles)")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out-dir", dest="out_dir", default="fig1")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=_cmd_fig1)

    p = sub.add_parser("fig2", help="purity preset (5 and 1000 realizations per gamma)")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out-dir", dest="out_dir", default="fig2")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=_cmd_fig2)

    p = sub.add_parser("coeffs", help="dump the coefficient series F, G, Pbar")
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--omega", type=float, default=1.0)
    p.add_argument("--t-max", dest="t_max", type=float, default=25.0)
    p.add_argument("--dt", type=float, default=0.005)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_coeffs)

    p = sub.add_parser("noise-check", help="covariance self-test of the noise sampler")
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--paths", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-path", dest="dump_path", help="also dump one raw path as CSV")
    p.set_defaults(func=_cmd_noise_check)

    p = sub.add_parser("oracle-compare", help="run a stochastic config and its oracle")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="also write both CSVs (oracle gets an _oracle suffix)")
    p.set_defaults(func=_cmd_oracle_compare)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return 3
    except QSDError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
