"""Command-line front end.

Subcommands: check-symmetry, estimate, construct, compare, report.
Exit codes: 0 success, 1 a declared symmetry or verification gate failed,
2 configuration error. Every command is deterministic given (config, seed,
threads); CSV payload rows are byte-identical across --threads values.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import greenkubo as gk
from . import homogenise as hg
from . import observables as ob
from . import symmetry as sm
from . import systems as sy
from .config import ExperimentConfig, PRESET_NAMES, load_config, preset
from .errors import ConfigError, LevyAreaError

INVOLUTION_TOL = 1e-12
RESIDUAL_TOL = 1e-8
ENSEMBLE_CHUNK = 250


def build_system(config):
    """Instantiate the fast system (or OU surrogate) named in the config."""
    def with_reversal(system):
        if config.r_matrix is None:
            return system
        return replace(system, reversal=np.asarray(config.r_matrix, float))

    if config.system == "nose-hoover":
        return with_reversal(sy.nose_hoover(temperature=config.temperature,
                                            burn_in_time=config.burn_in))
    if config.system == "nose-hoover-pair":
        return with_reversal(sy.nose_hoover_pair(temperature=config.temperature,
                                                 coupling=config.coupling,
                                                 burn_in_time=config.burn_in,
                                                 rate=config.rate))
    if config.system == "lorenz63":
        return sy.lorenz63()
    if config.system == "ou-oracle":
        if config.ou_gamma is None or config.ou_sigma is None:
            raise ConfigError("ou-oracle needs ou_gamma and ou_sigma")
        return sy.OUSurrogate(config.ou_gamma, config.ou_sigma)
    raise ConfigError(f"unknown system {config.system!r}")


def sample_trajectory(config, system, seed):
    if isinstance(system, sy.OUSurrogate):
        n_steps = int(round(config.duration / config.step))
        return sy.simulate_ou(system, n_steps, seed=seed, step=config.step)
    return sy.sample_measure(system, config.duration, config.step, seed=seed)


def _run_tasks(tasks, threads):
    """Run zero-arg callables, returning results in task order.

    The task list itself never depends on the thread count, so any
    reduction over the results is reproducible.
    """
    if threads <= 1:
        return [task() for task in tasks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(task) for task in tasks]
        return [f.result() for f in futures]


def _seed_schedule(base, count):
    return [int(base) + i for i in range(count)]


def _chunk_sizes(total, chunk=ENSEMBLE_CHUNK):
    sizes = [chunk] * (total // chunk)
    if total % chunk:
        sizes.append(total % chunk)
    return sizes


def ensemble_csv(path, law, seeds_per_row):
    rows = ["# seed,components..."]
    for seed, sample in zip(seeds_per_row, law.samples):
        rows.append(",".join([str(seed)] + [f"{x:.17g}" for x in sample]))
    Path(path).write_text("\n".join(rows) + "\n")


def _write_json(path, payload):
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _gnuplot_script(out_dir, csv_names):
    lines = ["set datafile separator ','", "set key top right"]
    for name in csv_names:
        lines.append(f"plot '{name}' every ::1 using 2 with points title '{name}'")
        lines.append("pause -1")
    (Path(out_dir) / "plot.gp").write_text("\n".join(lines) + "\n")


def cmd_check_symmetry(config, out_dir, threads):
    """Report residuals of every declared symmetry; exit 1 on violation."""
    system = build_system(config)
    report = {}
    failed = False

    if isinstance(system, sy.OUSurrogate):
        g = system.gamma
        report["lyapunov_residual"] = float(np.max(np.abs(
            g @ system.stationary_cov + system.stationary_cov @ g.T
            - system.sigma_noise @ system.sigma_noise.T)))
        failed |= report["lyapunov_residual"] > RESIDUAL_TOL
    else:
        r = system.reversal
        report["reversal_involution_residual"] = float(
            np.max(np.abs(r @ r - np.eye(system.dim_m))))
        probe = sy.integrate(system, system.default_initial,
                             min(50.0, config.duration / 10), config.step)
        report["flow_reversal_residual"] = float(
            sy.reversibility_residual(system, probe))
        if system.reversible:
            failed |= report["reversal_involution_residual"] > INVOLUTION_TOL
            failed |= report["flow_reversal_residual"] > RESIDUAL_TOL
        else:
            report["declared_reversible"] = False

    if config.a_matrix is not None:
        a = np.asarray(config.a_matrix, dtype=float)
        report["a_involution_residual"] = float(np.max(np.abs(a @ a - np.eye(len(a)))))
        failed |= report["a_involution_residual"] > INVOLUTION_TOL
        if (not isinstance(system, sy.OUSurrogate)
                and config.observable in ("identity", "coordinates")
                and len(a) == system.dim_m):
            v = ob.coordinates(system.dim_m)
            resid, _ = gk.equivariance_residual(v, system, probe.points, a)
            report["observable_equivariance_residual"] = float(resid)
            failed |= resid > RESIDUAL_TOL

    slow = hg.section6_slow_field(a_scale=config.a_scale)
    a_slow = np.diag([1.0, -1.0])
    probes_x = np.random.default_rng(config.seed).standard_normal((64, slow.dim))
    res_a, res_b = hg.slow_reversibility_residuals(slow, a_slow, probes_x)
    report["slow_a_residual"] = float(res_a)
    report["slow_b_residual"] = float(res_b)
    failed |= max(res_a, res_b) > RESIDUAL_TOL

    report["pass"] = not failed
    _write_json(Path(out_dir) / "symmetry_report.json", report)
    for key, value in sorted(report.items()):
        print(f"{key}: {value}")
    return 1 if failed else 0


def _estimate_payload(config, system, traj, v):
    est = gk.green_kubo(traj, v, config.t_max, n_batches=config.n_batches)
    payload = gk.estimate_to_dict(est)
    if config.a_matrix is not None and len(config.a_matrix) == len(est.sigma_hat):
        split = sm.eigen_split(config.a_matrix)
        block = sm.block_decompose(est.sigma_hat, est.e_hat, split)
        payload["block"] = {
            "sigma_plus": block.sigma_plus.tolist(),
            "sigma_minus": block.sigma_minus.tolist(),
            "e0": block.e0.tolist(),
            "off_block_residual": float(block.off_block_residual),
        }
    return est, payload


def cmd_estimate(config, out_dir, threads):
    """Green-Kubo estimation of Sigma and E on one sampled trajectory."""
    system = build_system(config)
    traj = sample_trajectory(config, system, config.seed)
    if config.observable in ("identity", "coordinates"):
        dim = system.dim if isinstance(system, sy.OUSurrogate) else system.dim_m
        v = ob.coordinates(dim)
    elif config.observable == "testbed-pair":
        if isinstance(system, sy.OUSurrogate) or system.dim_m != 6:
            raise ConfigError("testbed-pair needs the coupled Nose-Hoover pair")
        v = ob.testbed_pair()
    else:
        raise ConfigError("cmd_estimate expects observable identity/coordinates/"
                          "testbed-pair; use the construct command for targets")
    est, payload = _estimate_payload(config, system, traj, v)
    if isinstance(system, sy.OUSurrogate):
        sigma_ref, e_ref = sy.ou_closed_form(system)
        payload["closed_form"] = {"sigma": sigma_ref.tolist(), "e": e_ref.tolist()}
    corr = gk.correlogram(traj, v, config.t_max,
                          lag_stride=gk.auto_stride(traj, config.t_max),
                          n_batches=config.n_batches)
    gk.correlogram_to_csv(Path(out_dir) / "correlogram.csv", corr)
    _write_json(Path(out_dir) / "estimate.json", payload)
    _gnuplot_script(out_dir, ["correlogram.csv"])
    print("sigma_hat:", np.array2string(est.sigma_hat, precision=4))
    print("e_hat:", np.array2string(est.e_hat, precision=4))
    return 0


def construct_pipeline(config, system, seed):
    """Shared by cmd_construct and cmd_compare: calibrate a basis, realize
    the target F, then verify E0 on a fresh trajectory.

    Returns (v, e0_hat, se, basis).
    """
    target = np.atleast_2d(np.asarray(config.target, dtype=float))
    calib = sy.sample_measure(system, system.burn_in_time + config.calibration_duration,
                              config.step, seed=seed)
    gens, names = ob.default_generators(system, degree=config.basis_degree)
    need = max(config.basis_count, target.shape[0], target.shape[1])
    basis = ob.build_invariant_basis(system, calib, gens, count=need, names=names)
    v = ob.realize_target(target, basis, system)
    est_traj = sy.sample_measure(system, config.duration, config.step, seed=seed + 1)
    split = sm.eigen_split(np.diag([1.0] * target.shape[0] + [-1.0] * target.shape[1]))
    e0_hat, se = gk.estimate_e0(est_traj, v, split, config.t_max,
                                n_batches=config.n_batches)
    return v, e0_hat, se, basis, est_traj


def cmd_construct(config, out_dir, threads):
    """Realize a target E0 = F and verify it at 3 standard errors."""
    if config.target is None:
        raise ConfigError("construct requires an observable target matrix")
    system = build_system(config)
    if isinstance(system, sy.OUSurrogate) or not system.reversible:
        raise ConfigError("construct needs a reversible deterministic system")
    target = np.atleast_2d(np.asarray(config.target, dtype=float))
    v, e0_hat, se, basis, est_traj = construct_pipeline(config, system, config.seed)
    err = np.abs(e0_hat - target)
    passed = bool(np.all(err <= 3.0 * se))
    tele = ob.telescoping_residual(v, est_traj)
    payload = {
        "target": target.tolist(),
        "e0_hat": e0_hat.tolist(),
        "se": se.tolist(),
        "pass_3se": passed,
        "telescoping_residual": float(tele),
        "basis_gram_residual": float(basis.gram_residual),
        "generators": list(basis.generator_names),
    }
    ob.save_observable(Path(out_dir) / "observable.txt", v,
                       note="constructed coupling observable")
    _write_json(Path(out_dir) / "construct_report.json", payload)
    print("target:", np.array2string(target, precision=4))
    print("e0_hat:", np.array2string(e0_hat, precision=4))
    print("se:", np.array2string(se, precision=4))
    print("pass_3se:", passed)
    return 0 if passed else 1


SIGMA_CHUNK = 25


def _window_estimates(config, system, v, window, base_seed, threads):
    """Increment estimates of (Sigma, E) at horizon `window`.

    The Green-Kubo integral of a constructed observable can converge very
    slowly (oscillatory correlations), while the SDE only needs the noise
    covariance and Levy area accumulated over the homogenisation horizon
    T / eps^2; an ensemble of independent stationary windows measures both
    directly. Returns (sigma, sigma_se, e_levy, e_levy_se) where e_levy is
    the full antisymmetric d x d Levy-area matrix of the v-path.
    """
    sizes = _chunk_sizes(config.sigma_paths, SIGMA_CHUNK)
    seeds = _seed_schedule(base_seed, len(sizes))

    def one_chunk(n, sd):
        y0 = hg._initial_fast_states(system, n, sd, config.step)
        pts = sy.integrate_batch(system, y0, window, config.step)
        return gk.window_functionals(v(pts), config.step)

    parts = _run_tasks(tasks=[(lambda n=n, sd=sd: one_chunk(n, sd))
                              for n, sd in zip(sizes, seeds)],
                       threads=threads)
    integrals = np.concatenate([p[0] for p in parts], axis=0)
    areas = np.concatenate([p[1] for p in parts], axis=0)
    sigma, sigma_se = gk.increment_covariance(integrals, window)
    e_levy, e_levy_se = gk.increment_levy(areas, window)
    return sigma, sigma_se, e_levy, e_levy_se


def _sde_ensemble(slow, sigma, e_matrix, config, base_seed, threads):
    sizes = _chunk_sizes(config.n_paths)
    seeds = _seed_schedule(base_seed, len(sizes))
    tasks = [
        (lambda sd=sd, n=n: hg.simulate_sde(slow, sigma, e_matrix, config.xi,
                                            config.t_final, config.sde_step,
                                            seed=sd, n_paths=n))
        for sd, n in zip(seeds, sizes)
    ]
    laws = _run_tasks(tasks, threads)
    samples = np.concatenate([law.samples for law in laws], axis=0)
    row_seeds = [sd for sd, n in zip(seeds, sizes) for _ in range(n)]
    return hg.EnsembleLaw(samples, {"kind": "sde", "seed": base_seed}), row_seeds


def _fast_slow_ensemble(run, config, base_seed, threads):
    sizes = _chunk_sizes(config.n_paths)
    seeds = _seed_schedule(base_seed, len(sizes))
    tasks = [
        (lambda sd=sd, n=n: hg.simulate_fast_slow(run, seed=sd, n_paths=n)[0])
        for sd, n in zip(seeds, sizes)
    ]
    parts = _run_tasks(tasks, threads)
    samples = np.concatenate(parts, axis=0)
    row_seeds = [sd for sd, n in zip(seeds, sizes) for _ in range(n)]
    law = hg.EnsembleLaw(samples, {"kind": "fast-slow", "epsilon": run.epsilon,
                                   "seed": base_seed})
    return law, row_seeds


def cmd_compare(config, out_dir, threads):
    """Fast-slow ensembles vs corrected SDE vs the E = 0 control."""
    system = build_system(config)
    if isinstance(system, sy.OUSurrogate) or not system.reversible:
        raise ConfigError("compare needs a reversible deterministic fast system")
    slow = hg.section6_slow_field(a_scale=config.a_scale)

    reports = {"epsilons": {}}
    if config.observable == "testbed-pair":
        if system.dim_m != 6:
            raise ConfigError("testbed-pair needs the coupled Nose-Hoover pair")
        v = ob.testbed_pair()
    elif config.observable == "construct":
        if config.target is None or np.asarray(config.target).size != 1:
            raise ConfigError("compare uses a scalar target F for the 2d testbed")
        v, e0_hat, se, basis, est_traj = construct_pipeline(config, system,
                                                            config.seed)
        reports["e0_hat"] = float(e0_hat[0, 0])
        reports["e0_se"] = float(se[0, 0])
    else:
        raise ConfigError("compare expects observable testbed-pair or construct")
    e_zero = np.zeros((2, 2))

    out = Path(out_dir)
    trend_rows = ["# epsilon,mean_diff_max,ks_p_min,pass"]
    worst_exit = 0
    csv_names = []
    for eps in config.epsilons:
        # Sigma from window increments at this epsilon's horizon T / eps^2;
        # clip rounding-level negative eigenvalues so sqrt(Sigma) is defined
        window = config.t_final / (eps * eps)
        sigma_raw, sigma_se, e_levy, e_levy_se = _window_estimates(
            config, system, v, window, config.seed + 400, threads)
        eigvals, eigvecs = np.linalg.eigh(sigma_raw)
        sigma = (eigvecs * np.clip(eigvals, 0.0, None)) @ eigvecs.T
        min_sigma_eig = float(eigvals.min())
        # drift uses the window Levy area E_eff, the same finite-horizon
        # functional the fast-slow paths accumulate; it sits O(tau_c / window)
        # below the limiting E0
        e_eff = float(e_levy[0, 1])
        e_corr = np.array([[0.0, e_eff], [-e_eff, 0.0]])
        run = hg.FastSlowRun(epsilon=eps, coupling=v, fast=system, slow=slow,
                             xi=np.asarray(config.xi, dtype=float),
                             t_final=config.t_final, step_fast=config.step)
        fs_law, fs_seeds = _fast_slow_ensemble(run, config, config.seed + 100, threads)
        sde_law, sde_seeds = _sde_ensemble(slow, sigma, e_corr, config,
                                           config.seed + 200, threads)
        ctl_law, ctl_seeds = _sde_ensemble(slow, sigma, e_zero, config,
                                           config.seed + 300, threads)
        comp = hg.compare_laws(fs_law, sde_law, ks_p_floor=config.ks_p_floor,
                               mean_se_factor=config.mean_se_factor)
        comp_ctl = hg.compare_laws(fs_law, ctl_law, ks_p_floor=config.ks_p_floor,
                                   mean_se_factor=config.mean_se_factor)
        tag = f"eps{eps:g}".replace(".", "p")
        for name, law, seeds in ((f"fastslow_{tag}.csv", fs_law, fs_seeds),
                                 (f"sde_{tag}.csv", sde_law, sde_seeds),
                                 (f"control_{tag}.csv", ctl_law, ctl_seeds)):
            ensemble_csv(out / name, law, seeds)
            csv_names.append(name)
        reports["epsilons"][f"{eps:g}"] = {
            "sigma_hat": sigma.tolist(), "sigma_se": sigma_se.tolist(),
            "min_sigma_eig": min_sigma_eig,
            "e_eff": e_eff, "e_eff_se": float(e_levy_se[0, 1]),
            "corrected": comp.to_dict(), "control": comp_ctl.to_dict()}
        trend_rows.append(f"{eps:.17g},{np.max(np.abs(comp.mean_diff)):.17g},"
                          f"{np.min(comp.ks_pvalue):.17g},{int(comp.passed)}")
        if not comp.passed:
            worst_exit = 1
        print(f"eps={eps:g}: corrected pass={comp.passed} "
              f"control pass={comp_ctl.passed}")
    (out / "trend.csv").write_text("\n".join(trend_rows) + "\n")
    _write_json(out / "compare_report.json", reports)
    _gnuplot_script(out_dir, csv_names)
    return worst_exit


def cmd_report(config, out_dir, threads):
    """Summarize artifacts already written to the output directory."""
    out = Path(out_dir)
    found = sorted(p.name for p in out.glob("*.json"))
    if not found:
        raise ConfigError(f"no report artifacts in {out}")
    lines = []
    for name in found:
        payload = json.loads((out / name).read_text())
        lines.append(f"== {name} ==")
        lines.append(json.dumps(payload, indent=2, sort_keys=True))
    text = "\n".join(lines) + "\n"
    (out / "report.txt").write_text(text)
    print(text, end="")
    return 0


_COMMANDS = {
    "check-symmetry": cmd_check_symmetry,
    "estimate": cmd_estimate,
    "construct": cmd_construct,
    "compare": cmd_compare,
    "report": cmd_report,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="levyarea",
        description="Levy area corrections for reversible fast-slow systems")
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", help="path of an INI experiment file")
    parser.add_argument("--preset", choices=PRESET_NAMES,
                        help="built-in configuration name")
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--seed", type=int, help="override the config seed")
    return parser


def resolve_config(args) -> ExperimentConfig:
    if args.config and args.preset:
        raise ConfigError("give either --config or --preset, not both")
    if args.config:
        config = load_config(args.config)
    elif args.preset:
        config = preset(args.preset)
    else:
        raise ConfigError("one of --config or --preset is required")
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.threads < 1:
        raise ConfigError("--threads must be at least 1")
    return config


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = resolve_config(args)
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        return _COMMANDS[args.command](config, out_dir, args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except LevyAreaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
