"""Configuration-driven experiment runner.

    volterra-bsde <subcommand> --config <path> --out <dir> [--seed <u64>]
                  [--threads <n>]

Subcommands: variance, simulate, solve-pde, solve-bsde, verify, compare,
certify.  Every run writes CSV artifacts plus a manifest listing the config
hashes, the seed and one sha256 per artifact; nothing in the outputs
depends on wall-clock time, so a re-run with the same config and seed is
byte-identical.  Exit codes: 0 all checks passed, 1 a check or runtime
precondition failed, 2 configuration error.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys

import numpy as np

from . import bsde, config as cfgmod, kernels, operators, pde, simulate
from .errors import ConfigError, VolterraError
from .reporting import Report, fmt

ENV_THREADS = "VOLTERRA_BSDE_THREADS"


def _sha256_text(text):
    return hashlib.sha256(text.encode()).hexdigest()


def _sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_atomic(path, text):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


class _Workspace:
    """Everything the subcommands share, built once from the config."""

    def __init__(self, cfg, seed_override=None):
        self.cfg = cfg
        self.rule = cfgmod.build_rule(cfg)
        self.kernel = cfgmod.build_kernel(cfg)
        self.sigma = cfgmod.build_sigma(cfg)
        self.varcurve = cfgmod.build_varcurve(cfg, self.kernel, self.sigma, self.rule)
        self.driver = cfgmod.build_driver(cfg)
        self.terminal = cfgmod.build_terminal(cfg, self.varcurve)
        self.tgrid, self.xgrid, self.t0_bsde = cfgmod.build_grids(cfg, self.varcurve)
        self.n_paths = cfg.get("mc", "n_paths", int)
        self.seed = seed_override if seed_override is not None \
            else cfg.get("mc", "seed", int)
        self.export_paths = cfg.get("mc", "export_paths", int)
        self.picard_tol = cfg.get("tolerances", "picard_tol", float)
        self.max_iter = cfg.get("tolerances", "max_iter", int)

    def time_grid(self, n_steps=None):
        n = n_steps or (self.tgrid.size - 1)
        return simulate.TimeGrid.uniform(float(self.tgrid[0]),
                                         float(self.tgrid[-1]), n)

    def ensemble(self, n_steps=None, seed=None):
        return simulate.sample_paths(
            self.kernel, self.sigma, self.time_grid(n_steps),
            n_paths=self.n_paths, seed=self.seed if seed is None else seed,
            rule=self.rule,
        )

    def solve_picard(self, driver=None, terminal=None):
        return pde.solve_semilinear_picard(
            driver or self.driver, terminal or self.terminal, self.varcurve,
            self.tgrid, self.xgrid, tol=self.picard_tol,
            max_iter=self.max_iter, sigma=self.sigma,
        )


# -- subcommands ---------------------------------------------------------------


def cmd_variance(ws):
    curve = ws.varcurve
    report = Report(title="variance")
    report.add("rate_reconstruction", lhs=curve.reconstruction_error(),
               rhs=0.0, stderr=0.0,
               tol=curve.RECON_TOL * float(curve.var[-1]))
    report.add_row("var_nondecreasing", lhs=float(np.min(np.diff(curve.var))),
                   rhs=0.0, stderr=0.0, tol=0.0,
                   passed=bool(np.all(np.diff(curve.var) >= -1e-12)))
    return {"variance.csv": curve.to_csv_text(),
            "variance_report.csv": report.to_csv_text()}, report


def cmd_simulate(ws):
    ens = ws.ensemble()
    report = simulate.moment_checks(ens)
    return {"ensemble.csv": ens.to_csv_text(max_paths=ws.export_paths),
            "simulate_report.csv": report.to_csv_text()}, report


def cmd_solve_pde(ws):
    sol_p = ws.solve_picard()
    sol_f = pde.solve_semilinear_fd(ws.driver, ws.terminal, ws.varcurve,
                                    ws.tgrid, ws.xgrid, theta=1.0,
                                    sigma=ws.sigma)
    gap = float(np.max(np.abs(sol_p.u - sol_f.u)))
    dt = float(np.max(np.diff(ws.tgrid)))
    dx = float(np.mean(np.diff(ws.xgrid)))
    report = Report(title="solve_pde")
    report.add("picard_residual", lhs=sol_p.residual, rhs=0.0, stderr=0.0,
               tol=ws.picard_tol)
    report.add("mild_fd_gap", lhs=gap, rhs=0.0, stderr=0.0,
               tol=max(5e-3, 10.0 * (dt + dx**2)))
    return {"pde_picard.csv": sol_p.to_csv_text(),
            "pde_fd.csv": sol_f.to_csv_text(),
            "pde_report.csv": report.to_csv_text()}, report


def cmd_solve_bsde(ws):
    sol = ws.solve_picard()
    ens = ws.ensemble()
    built = bsde.build_yz(sol, ens, ws.sigma, terminal=ws.terminal)
    report = Report(title="solve_bsde")
    term_gap = float(np.max(np.abs(built.Y[:, -1] - ws.terminal(ens.N[:, -1]))))
    report.add("terminal_exactness", lhs=term_gap, rhs=0.0, stderr=0.0, tol=0.0)
    report.add("clip_fraction", lhs=built.clip_fraction, rhs=0.0, stderr=0.0,
               tol=bsde.CLIP_FRACTION_LIMIT)
    window = simulate.TimeGrid.uniform(ws.t0_bsde, float(ws.tgrid[-1]),
                                       ws.tgrid.size - 1)
    run = bsde.brownian_side_verify(sol, ws.varcurve, ws.sigma, ws.driver,
                                    ws.terminal, window, n_paths=ws.n_paths,
                                    seed=ws.seed + 1)
    zvar = float(np.var(run.zeta[:, -1], ddof=1))
    vT = float(ws.varcurve.var_at(window.T))
    se = vT * np.sqrt(2.0 / (ws.n_paths - 1))
    report.add("zeta_variance_match", lhs=zvar, rhs=vT, stderr=se, tol=3.0 * se)
    study = bsde.residual_refinement_study(
        sol, ws.varcurve, ws.sigma, ws.driver, ws.terminal,
        ws.t0_bsde, float(ws.tgrid[-1]), n_paths=ws.n_paths,
        seed=ws.seed + 2, base_steps=ws.cfg.get("bsde", "base_steps", int),
        n_levels=ws.cfg.get("bsde", "n_levels", int),
    )
    ratios = [b / a for a, b in zip(study.residuals, study.residuals[1:])]
    report.add_row("residual_refinement_monotone",
                   lhs=max(ratios), rhs=0.0, stderr=0.0, tol=1.0,
                   passed=study.monotone)
    lines = ["n_steps,residual_L2"]
    lines += [f"{n},{fmt(r)}" for n, r in zip(study.steps, study.residuals)]
    artifacts = {"bsde_report.csv": report.to_value_csv_text(),
                 "bsde_refinement.csv": "\n".join(lines) + "\n"}
    if ws.export_paths > 0:  # per-path dump is optional
        dump = ["path_id,t,Y,Z"]
        for p in range(min(ws.export_paths, ens.n_paths)):
            for i, t in enumerate(ens.grid.points):
                dump.append(f"{p},{fmt(t)},{fmt(built.Y[p, i])},{fmt(built.Z[p, i])}")
        artifacts["bsde_paths.csv"] = "\n".join(dump) + "\n"
    return artifacts, report


def cmd_verify(ws):
    """The fixed seven-check verification pipeline."""
    report = Report(title="verify")
    curve = ws.varcurve
    vT = float(curve.var[-1])

    # 1. the two independent variance routes agree
    worst = 0.0
    for frac in (0.25, 0.5, 1.0):
        t = float(curve.T * frac)
        a = operators.variance_l2_value(ws.kernel, ws.sigma, t, rule=ws.rule)
        b = operators.variance_double_route(ws.kernel, ws.sigma, t)
        worst = max(worst, abs(a - b))
    report.add("variance_routes_agree", lhs=worst, rhs=0.0, stderr=0.0,
               tol=1e-4 * vT)

    # 2. the rate integrates back to the variance
    report.add("rate_reconstruction", lhs=curve.reconstruction_error(),
               rhs=0.0, stderr=0.0, tol=curve.RECON_TOL * vT)

    # 3. transfer identity (K*_T 1_[0,r])_t = K(r, t)
    r = 0.8 * curve.T
    tcheck = operators.transfer_identity_check(
        ws.kernel, r, np.linspace(0.0, curve.T, 65), rule=ws.rule)
    report.add("transfer_identity", lhs=tcheck.max_abs_deviation, rhs=0.0,
               stderr=0.0, tol=1e-6)

    # 4. empirical covariance of X against R
    ens = ws.ensemble()
    cov = simulate.validate_covariance(ens, ws.kernel, rule=ws.rule)
    frac = np.mean([row.passed for row in cov.rows])
    report.add_row("covariance_validation", lhs=float(frac), rhs=1.0,
                   stderr=0.0, tol=0.0, passed=cov.passed)

    # 5. heat identity with h = cos at s = T
    heat = simulate.expectation_heat_identity(ens, curve, np.cos, ens.grid.T)
    row = heat.rows[0]
    report.add_row("heat_identity_cos", lhs=row.lhs, rhs=row.rhs,
                   stderr=row.stderr, tol=row.tol, passed=heat.passed)

    # 6. expectation-form change-of-variable check, F = exp(x/2)
    F = simulate.C12Function(
        f=lambda t, x: np.exp(x / 2.0),
        df_dt=lambda t, x: np.zeros_like(np.asarray(x, dtype=float)),
        d2f_dx2=lambda t, x: np.exp(x / 2.0) / 4.0,
        label="exp(x/2)",
    )
    pts = ens.grid.points
    worst_defect, worst_tol, all_pass = 0.0, 0.0, True
    for frac_t in (0.25, 0.5, 0.75):
        t = float(pts[int(round(frac_t * (pts.size - 1)))])
        rep = simulate.ito_expectation_check(ens, curve, F, t)
        all_pass &= rep.passed
        if abs(rep.rows[0].lhs) >= worst_defect:
            worst_defect = abs(rep.rows[0].lhs)
            worst_tol = rep.rows[0].tol
    report.add_row("ito_expectation_exp", lhs=worst_defect, rhs=0.0,
                   stderr=0.0, tol=worst_tol, passed=all_pass)

    # 7. BSDE residual shrinks under dyadic time refinement
    sol = ws.solve_picard()
    study = bsde.residual_refinement_study(
        sol, curve, ws.sigma, ws.driver, ws.terminal,
        float(ws.tgrid[0]), float(ws.tgrid[-1]), n_paths=ws.n_paths,
        seed=ws.seed + 2, base_steps=ws.cfg.get("bsde", "base_steps", int),
        n_levels=ws.cfg.get("bsde", "n_levels", int),
    )
    report.add_row("bsde_residual_refinement",
                   lhs=float(study.residuals[-1]), rhs=0.0, stderr=0.0,
                   tol=float(study.residuals[0]), passed=study.monotone)

    return {"verify_report.csv": report.to_csv_text()}, report


def cmd_compare(ws):
    cfg = ws.cfg
    if not (cfg.has("driver2", "expr") or cfg.has("terminal2", "expr")):
        raise ConfigError("compare needs [driver2] and/or [terminal2] sections",
                          key="driver2.expr")
    f2 = cfgmod.build_driver(cfg, section="driver2")
    g2 = cfgmod.build_terminal(cfg, ws.varcurve, section="terminal2")
    ens = ws.ensemble()
    result = bsde.compare((ws.driver, ws.terminal), (f2, g2), ws.varcurve,
                          ws.tgrid, ws.xgrid, ws.sigma, ensemble=ens,
                          tol=ws.picard_tol, max_iter=ws.max_iter)
    report = result.to_report()
    lines = ["t,x,u1_minus_u2"]
    d = result.sol1.u - result.sol2.u
    for i, t in enumerate(ws.tgrid):
        for j, x in enumerate(ws.xgrid):
            lines.append(f"{fmt(t)},{fmt(x)},{fmt(d[i, j])}")
    return {"compare_report.csv": report.to_value_csv_text(),
            "compare_gap.csv": "\n".join(lines) + "\n"}, report


def cmd_certify(ws):
    report = Report(title="certify")
    alpha, beta, c = kernels.suggested_h2_constants(ws.kernel)
    cert = kernels.certify_H2(ws.kernel, alpha, beta, c, n_samples=10_000)
    report.add_row("h2_certificate", lhs=cert.max_ratio, rhs=1.0, stderr=0.0,
                   tol=1e-12, passed=cert.valid)
    t0 = ws.cfg.get("grids", "t0", float)
    inj = kernels.injectivity_certificate(ws.kernel, t0, n_samples=64,
                                          rule=ws.rule)
    vals = np.array([v for _, v in inj.samples])
    report.add_row("injectivity_sign_definite",
                   lhs=float(np.min(np.abs(vals))), rhs=0.0, stderr=0.0,
                   tol=0.0, passed=inj.sign_definite)
    lines = [
        "name,value",
        f"h2_alpha,{fmt(alpha)}",
        f"h2_beta,{fmt(beta)}",
        f"h2_c,{fmt(c)}",
        f"h2_max_ratio,{fmt(cert.max_ratio)}",
        f"h2_worst_t,{fmt(cert.worst_t)}",
        f"h2_worst_s,{fmt(cert.worst_s)}",
        f"injectivity_t0,{fmt(inj.t0)}",
        f"injectivity_min_abs,{fmt(float(np.min(np.abs(vals))))}",
        f"injectivity_sign_definite,{int(inj.sign_definite)}",
    ]
    return {"certify_report.csv": report.to_csv_text(),
            "certify_values.csv": "\n".join(lines) + "\n"}, report


_COMMANDS = {
    "variance": cmd_variance,
    "simulate": cmd_simulate,
    "solve-pde": cmd_solve_pde,
    "solve-bsde": cmd_solve_bsde,
    "verify": cmd_verify,
    "compare": cmd_compare,
    "certify": cmd_certify,
}


def run(subcommand, config_path, out_dir, seed=None, threads=None):
    """Execute one subcommand; returns the process exit code (0/1/2)."""
    if subcommand not in _COMMANDS:
        print(f"unknown subcommand {subcommand!r}", file=sys.stderr)
        return 2
    try:
        cfg = cfgmod.load_config(config_path)
        ws = _Workspace(cfg, seed_override=seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except VolterraError as exc:
        print(f"setup error: {exc}", file=sys.stderr)
        return 1

    os.makedirs(out_dir, exist_ok=True)
    try:
        artifacts, report = _COMMANDS[subcommand](ws)
        exit_code = 0 if report.passed else 1
        failure = None
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except VolterraError as exc:
        failure = f"{type(exc).__name__}: {exc}"
        print(failure, file=sys.stderr)
        artifacts = {"error.txt": failure + "\n"}
        report = Report(title=subcommand)
        exit_code = 1

    for name in sorted(artifacts):
        _write_atomic(os.path.join(out_dir, name), artifacts[name])

    manifest = [
        "tool=volterra-bsde",
        f"subcommand={subcommand}",
        f"config={os.path.basename(str(config_path))}",
        f"config_sha256={_sha256_file(config_path)}",
        f"config_canonical_sha256={cfg.canonical_hash()}",
        f"seed={ws.seed}",
        f"threads={threads if threads is not None else os.environ.get(ENV_THREADS, '1')}",
        f"checks_passed={sum(1 for r in report.rows if r.passed)}",
        f"checks_total={len(report.rows)}",
    ]
    manifest += [
        f"artifact={name}:{_sha256_text(artifacts[name])}"
        for name in sorted(artifacts)
    ]
    manifest.append(f"exit={exit_code}")
    _write_atomic(os.path.join(out_dir, "manifest.txt"), "\n".join(manifest) + "\n")
    return exit_code


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="volterra-bsde",
        description="Gaussian-Volterra BSDE/PDE experiment runner",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int,
                       default=int(os.environ.get(ENV_THREADS, "1")))
    args = parser.parse_args(argv)
    return run(args.subcommand, args.config, args.out, seed=args.seed,
               threads=args.threads)


if __name__ == "__main__":
    sys.exit(main())
