"""Command-line front end: ``twomatrix <subcommand> [options]``.

Every subcommand writes CSV data plus ``<subcommand>_manifest.json`` to the
output directory.  Exit status: 0 on success, 2 on numerical failure
(non-convergence or a failed check), 1 on invalid input.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import mpmath as mp
import numpy as np

from . import biorthogonal as bo
from . import phase as ph
from . import sampler as smp
from . import spectral as sp
from .config import ConfigError, potential_from, resolve
from .equilibrium.solver import NonConvergenceError, SolverOptions
from .output import write_csv, write_manifest
from .potentials import (PotentialSpec, check_closed_forms, effective_field_v1,
                         effective_field_v3, sigma2_density, x_star, y_star)
from .two_matrix import NAMES, Resolution, solve, solve_one_matrix

logger = logging.getLogger("twomatrix")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2


class CheckFailed(RuntimeError):
    """A numerical check ran but missed its tolerance."""


# ---- config helpers --------------------------------------------------------------

def resolution_from(block: dict, name_key: str = "resolution") -> Resolution:
    try:
        res = Resolution.preset(block.get(name_key) or "default")
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"unknown resolution {block.get(name_key)!r}") from exc
    over = {k: block[k] for k in ("n_mu1", "n_core", "growth", "outer_radius")
            if block.get(k) is not None}
    return replace(res, **over) if over else res


def solver_options(cfg: dict) -> SolverOptions:
    e = cfg["equilibrium"]
    return SolverOptions(tol=float(e["tol"]), max_iter=int(e["max_iter"]))


def _rows(arr):
    return [list(r) for r in np.asarray(arr)]


# ---- subcommands -------------------------------------------------------------------

def cmd_input_data(cfg, out: Path) -> dict:
    spec = potential_from(cfg)
    o = cfg["input_data"]
    x = np.linspace(-float(o["radius"]), float(o["radius"]), int(o["n_points"]))
    write_csv(out / "input_data.csv", ("x", "v1", "v3", "sigma2_density"),
              zip(x, effective_field_v1(spec, x), effective_field_v3(spec, x),
                  sigma2_density(spec, x)))
    info = {"x_star": x_star(spec), "y_star": y_star(spec)}
    if o["check_closed_forms"]:
        if spec.alpha != 0.0:
            raise ConfigError("closed-form check needs alpha = 0")
        chk = check_closed_forms(spec, int(o["n_points"]), float(o["radius"]))
        chk["tolerance"] = 1e-10
        info["closed_forms"] = chk
        if max(chk["max_dev_v1"], chk["max_dev_sigma2"]) > 1e-10:
            raise CheckFailed(f"closed-form deviation above 1e-10: {chk}")
    return info


def _measure_rows(sol):
    for name, mu in zip(NAMES, sol.base.measures):
        g = mu.grid
        caps = mu.caps if mu.caps is not None else np.full(g.n_cells, np.nan)
        for i in range(g.n_cells):
            yield (name, i, g.lo[i], g.hi[i], mu.masses[i], mu.masses[i] / g.widths[i], caps[i])


def cmd_equilibrium(cfg, out: Path) -> dict:
    spec = potential_from(cfg)
    sol = solve(spec, resolution_from(cfg["equilibrium"]), solver_options(cfg))
    write_csv(out / "equilibrium.csv", ("measure", "cell", "lo", "hi", "mass", "density", "cap"),
              _measure_rows(sol))
    write_csv(out / "edges.csv", ("measure", "side", "edge", "exponent", "fit_residual",
                                  "n_cells", "indeterminate"),
              [(f.measure, f.side, f.edge, f.exponent, f.residual, f.n_cells, f.indeterminate)
               for f in sol.edge_fits])
    return {"solution": sol.manifest()}


def cmd_phase(cfg, out: Path) -> dict:
    spec = potential_from(cfg)
    o = cfg["phase"]
    cf = ph.classify_closed_form(spec.alpha, spec.tau, float(o["tol"]))
    info = {"closed_form": cf.to_dict()}
    num_label = ""
    if o["numeric"]:
        num = ph.classify_numeric(spec.alpha, spec.tau, resolution_from(cfg["equilibrium"]),
                                  solver_options(cfg), o["origin_rel"], int(o["gap_cells"]))
        info["numeric"] = num.to_dict()
        num_label = num.case_label
    write_csv(out / "phase.csv", ("alpha", "tau", "closed_form_label", "numeric_label",
                                  "painleve_margin", "pearcey_margin"),
              [(spec.alpha, spec.tau, cf.case_label, num_label, cf.margins["painleve"],
                cf.margins["pearcey"])])
    print(f"closed-form: {cf.case_label}" + (f"  numeric: {num_label}" if num_label else ""))
    return info


def cmd_phase_sweep(cfg, out: Path) -> dict:
    o = cfg["sweep"]
    res = resolution_from(o)
    cells = ph.sweep((float(o["alpha_min"]), float(o["alpha_max"])),
                     (float(o["tau_min"]), float(o["tau_max"])), int(o["n_alpha"]),
                     int(o["n_tau"]), res, solver_options(cfg), float(cfg["phase"]["tol"]),
                     int(o["workers"]))
    (out / "phase_sweep.csv").write_text(ph.sweep_to_csv(cells))
    return {"summary": ph.sweep_summary(cells), "resolution": res.to_dict()}


def cmd_spectral(cfg, out: Path) -> dict:
    spec = potential_from(cfg)
    o = cfg["spectral"]
    sol = solve(spec, resolution_from(cfg["equilibrium"]), solver_options(cfg))
    mu1 = sol.mu1
    checks = []
    jump = sp.jump_check(spec, mu1)
    checks.append(("plemelj_jump_rel", jump["max_rel_error"], 1e-2))
    asym = sp.asymptotic_check(spec, mu1)
    checks.append(("asymptotic_100R", asym["100R"], 1e-3))
    pole = sp.pole_order_check(spec, mu1)
    om = sp.one_matrix_quadratic_check(n_cells=int(o["one_matrix_cells"]))
    checks.append(("one_matrix_quadratic", om["max_residual"], 1e-8))
    info = {"jump": jump, "asymptotic": asym, "pole_order": pole, "one_matrix": om}
    if spec.deg_v == 2:
        probe = sp.quartic_residual_probe(spec, mu1, None, int(o["n_fit"]), int(o["n_holdout"]),
                                          float(o["perturb"]), int(cfg["seed"]))
        info["quartic_probe"] = probe.to_dict()
    write_csv(out / "spectral_checks.csv", ("check", "value", "tolerance", "passed"),
              [(c, v, t, v <= t) for c, v, t in checks])
    R = mu1.grid.radius
    z = 1.5 * R * np.exp(2j * np.pi * (np.arange(int(o["n_samples"])) + 0.5) / int(o["n_samples"]))
    write_csv(out / "xi1_samples.csv", ("re_z", "im_z", "re_xi1", "im_xi1"),
              _rows(sp.xi1_samples(spec, mu1, z)))
    info["solution"] = sol.manifest()
    return info


def _family(cfg, block):
    spec = potential_from(cfg)
    n = int(block["n"])
    J = block.get("J")
    J = n - 1 if J is None else int(J)
    dps = int(cfg["biortho"]["dps"])
    return bo.biorthogonal_family(spec, n, max(J, n - 1), dps)


def cmd_biortho(cfg, out: Path) -> dict:
    fam = _family(cfg, cfg["biortho"])
    coef_rows, zero_rows = [], []
    for name, coeffs, zeros in (("p", fam.p_coeffs, fam.p_zeros), ("q", fam.q_coeffs, fam.q_zeros)):
        for d, c in enumerate(coeffs):
            coef_rows += [(name, d, i, mp.nstr(v, 30)) for i, v in enumerate(c)]
            zero_rows += [(name, d, i, complex(z).real, complex(z).imag) for i, z in enumerate(zeros[d])]
    write_csv(out / "biortho_coefficients.csv", ("family", "degree", "power", "coefficient"),
              coef_rows)
    write_csv(out / "biortho_zeros.csv", ("family", "degree", "index", "re", "im"), zero_rows)
    write_csv(out / "biortho_norms.csv", ("k", "h"),
              [(k, mp.nstr(h, 30)) for k, h in enumerate(fam.h_exact)])
    zp, zq = bo.zeros_report(fam, "p"), bo.zeros_report(fam, "q")
    mop = max(bo.verify_mop_conditions(fam, j)["max_scaled"] for j in range(fam.degree + 1))
    return {"n": fam.n, "degree": fam.degree, "box": fam.box,
            "panels": fam._quad.get("panels"), "notes": fam.notes,
            "bimoment_terms": fam.bimoments.terms, "bimoment_condition": fam.bimoments.condition,
            "biorthogonality": bo.biorthogonality_residual(fam),
            "parity": bo.check_parity(fam), "mop_max_scaled": mop,
            "p_zeros_real": zp["real"], "p_interlacing": zp["all_interlace"],
            "q_zeros_real": zq["real"], "q_interlacing": zq["all_interlace"],
            "kernel": bo.kernel_checks(fam), "n_mod_3": fam.n % 3}


def cmd_kernel(cfg, out: Path) -> dict:
    o = cfg["kernel"]
    fam = _family(cfg, o)
    X = fam.box[0]
    x = np.linspace(-X, X, int(o["n_points"]))
    diag = bo.kernel_diagonal(fam, x)
    write_csv(out / "kernel_diagonal.csv", ("x", "k11_diagonal", "mean_density"),
              zip(x, diag, diag / fam.n))
    m = int(o["n_matrix"])
    if m > 0:
        which = str(o["which"])
        u = np.linspace(-X, X, m) if which in ("11", "12") else np.linspace(-fam.box[1], fam.box[1], m)
        v = np.linspace(-X, X, m) if which in ("11", "21") else np.linspace(-fam.box[1], fam.box[1], m)
        K = bo.kernel(fam, which, u, v)
        write_csv(out / f"kernel_{which}.csv", ("u", "v", "value"),
                  [(u[i], v[j], K[i, j]) for i in range(m) for j in range(m)])
    return {"n": fam.n, "checks": bo.kernel_checks(fam), "notes": fam.notes}


def _chain_config(cfg) -> smp.ChainConfig:
    o = cfg["sampler"]
    return smp.ChainConfig(n=int(o["n"]), n_chains=int(o["n_chains"]), step=float(o["step"]),
                           burn_in=int(o["burn_in"]), thin=int(o["thin"]),
                           samples=int(o["samples"]), seed=int(cfg["seed"]),
                           check_every=int(o["check_every"]))


def cmd_sample(cfg, out: Path) -> dict:
    spec = potential_from(cfg)
    cc = _chain_config(cfg)
    res = smp.run_chain(spec, cc)
    e = res.eigenvalues
    write_csv(out / "sample_eigenvalues.csv", ("sample", "chain", "index", "eigenvalue"),
              [(s, c, i, e[s, c, i]) for s in range(e.shape[0]) for c in range(e.shape[1])
               for i in range(e.shape[2])])
    info = {"chain": res.manifest()}
    ref = str(cfg["sampler"]["reference"])
    if ref == "auto":
        ref = "semicircle" if spec.deg_v == 2 and spec.tau <= 1e-4 else "kernel"
    if ref == "semicircle":
        a = float(np.sqrt(2.0 / spec.v_coeffs[2]))
        rep = smp.compare_to_reference(res.flat, cdf=lambda x: smp.semicircle_cdf(x, a))
        info["reference"] = {"kind": "semicircle", "radius": a, **rep.to_dict()}
    elif ref == "kernel":
        fam = bo.biorthogonal_family(spec, cc.n, cc.n - 1, int(cfg["biortho"]["dps"]))
        g = np.linspace(-fam.box[0], fam.box[0], 4001)
        rep = smp.compare_to_reference(res.flat, density=bo.mean_density(fam, g), grid=g)
        info["reference"] = {"kind": "kernel", **rep.to_dict()}
    return info


def cmd_validate(cfg, out: Path) -> dict:
    """Cross-module checks at reduced resolution."""
    o = cfg["validate"]
    res = resolution_from(o)
    rows = []

    def add(name, value, tol, ok=None):
        ok = bool(value <= tol) if ok is None else bool(ok)
        rows.append((name, value, tol, ok))

    spec0 = PotentialSpec.quadratic(0.0, 1.0)
    chk = check_closed_forms(spec0)
    add("closed_forms", max(chk["max_dev_v1"], chk["max_dev_sigma2"]), 1e-10)
    one = solve_one_matrix([0.0, 0.0, 1.0], 2001)
    mu = one.measures[0]
    exact = np.sqrt(np.clip(2.0 - mu.grid.nodes ** 2, 0.0, None)) / np.pi
    add("one_matrix_semicircle", float(np.max(np.abs(mu.density - exact))), 5e-3)
    opts = solver_options(cfg)
    for (a, t), case in zip(((2.0, 0.8), (1.0, 3.0), (-2.0, 2.0), (-2.6, 0.15)), ph.CASES):
        num = ph.classify_numeric(a, t, res, opts)
        add(f"case_{case}_label", 0.0 if num.case_label == case else 1.0, 0.0)
        add(f"case_{case}_el_residual", num.details["el_residual"], 1e-5)
    sol = solve(spec0, res, opts)
    add("plemelj_jump_rel", sp.jump_check(spec0, sol.mu1)["max_rel_error"], 1e-2)
    add("asymptotic_100R", sp.asymptotic_check(spec0, sol.mu1)["100R"], 1e-3)
    add("one_matrix_quadratic", sp.one_matrix_quadratic_check()["max_residual"], 1e-8)
    fam = bo.biorthogonal_family(spec0, 6, 12)
    add("biorthogonality_offdiag", bo.biorthogonality_residual(fam)["max_offdiag_scaled"], 1e-8)
    add("mop_scaled", max(bo.verify_mop_conditions(fam, j)["max_scaled"] for j in range(13)), 1e-8)
    add("kernel_trace_rel", bo.kernel_checks(fam)["trace_rel_error"], 1e-6)
    zp = bo.zeros_report(fam, "p")
    add("interlacing", 0.0 if zp["all_interlace"] else 1.0, 0.0)
    cc = smp.ChainConfig(n=6, n_chains=int(o["sampler_chains"]), burn_in=100, thin=5,
                         samples=int(o["sampler_samples"]), seed=int(cfg["seed"]))
    ch = smp.run_chain(PotentialSpec.quadratic(0.0, 1e-6), cc)
    ks = smp.compare_to_reference(ch.flat, cdf=smp.semicircle_cdf).ks
    add("sampler_decoupled_ks", ks, 0.1)
    write_csv(out / "validate.csv", ("check", "value", "tolerance", "passed"), rows)
    failed = [r[0] for r in rows if not r[3]]
    for r in rows:
        print(f"{'PASS' if r[3] else 'FAIL'}  {r[0]}: {r[1]:.3g} (tol {r[2]:.3g})")
    if failed:
        raise CheckFailed(f"failed checks: {', '.join(failed)}")
    return {"checks": len(rows), "resolution": res.to_dict()}


COMMANDS = {
    "input-data": cmd_input_data,
    "equilibrium": cmd_equilibrium,
    "phase": cmd_phase,
    "phase-sweep": cmd_phase_sweep,
    "spectral": cmd_spectral,
    "biortho": cmd_biortho,
    "kernel": cmd_kernel,
    "sample": cmd_sample,
    "validate": cmd_validate,
}


# ---- argument parsing ------------------------------------------------------------

def _floats(text):
    try:
        return [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON config file")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--alpha", type=float)
    common.add_argument("--tau", type=float)
    common.add_argument("--v-coeffs", type=_floats, help="V coefficients, ascending powers")
    common.add_argument("--resolution", choices=("coarse", "default", "fine"))
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="twomatrix", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("input-data", parents=[common], help="effective fields and sigma2")
    p.add_argument("--check-closed-forms", action="store_true")
    p.add_argument("--n-points", type=int)
    sub.add_parser("equilibrium", parents=[common], help="solve the vector equilibrium problem")
    p = sub.add_parser("phase", parents=[common], help="classify one (alpha, tau)")
    p.add_argument("--closed-form-only", action="store_true")
    p = sub.add_parser("phase-sweep", parents=[common], help="closed-form vs numeric grid")
    p.add_argument("--n-alpha", type=int)
    p.add_argument("--n-tau", type=int)
    p.add_argument("--workers", type=int)
    sub.add_parser("spectral", parents=[common], help="Cauchy transform checks")
    for name in ("biortho", "kernel"):
        p = sub.add_parser(name, parents=[common], help=f"{name} at finite n")
        p.add_argument("--n", type=int)
        p.add_argument("--J", type=int)
        if name == "kernel":
            p.add_argument("--which", choices=("11", "12", "21", "22"))
            p.add_argument("--n-matrix", type=int)
    p = sub.add_parser("sample", parents=[common], help="Metropolis sampling of M1 eigenvalues")
    p.add_argument("--n", type=int)
    p.add_argument("--n-chains", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--burn-in", type=int)
    p.add_argument("--thin", type=int)
    p.add_argument("--reference", choices=("auto", "semicircle", "kernel", "none"))
    sub.add_parser("validate", parents=[common], help="reduced cross-module check suite")
    return parser


def overrides_from(args) -> dict:
    ov: dict = {}

    def put(section, key, value):
        if value is not None:
            (ov.setdefault(section, {}) if section else ov)[key] = value

    put(None, "seed", args.seed)
    put(None, "output_dir", args.out)
    put("potential", "alpha", args.alpha)
    put("potential", "tau", args.tau)
    put("potential", "v_coeffs", args.v_coeffs)
    cmd = args.command
    if args.resolution is not None:
        section = {"phase-sweep": "sweep", "validate": "validate"}.get(cmd, "equilibrium")
        put(section, "resolution", args.resolution)
    if cmd == "input-data":
        put("input_data", "n_points", args.n_points)
        if args.check_closed_forms:
            put("input_data", "check_closed_forms", True)
    elif cmd == "phase" and args.closed_form_only:
        put("phase", "numeric", False)
    elif cmd == "phase-sweep":
        for k in ("n_alpha", "n_tau", "workers"):
            put("sweep", k, getattr(args, k))
    elif cmd in ("biortho", "kernel"):
        put(cmd, "n", args.n)
        put(cmd, "J", args.J)
        if cmd == "kernel":
            put("kernel", "which", args.which)
            put("kernel", "n_matrix", args.n_matrix)
    elif cmd == "sample":
        for k in ("n", "n_chains", "samples", "burn_in", "thin", "reference"):
            put("sampler", k, getattr(args, k))
    return ov


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    name = args.command
    t0 = time.perf_counter()
    status, payload, error = EXIT_OK, {}, None
    out = None
    try:
        cfg = resolve(args.config, overrides_from(args))
        out = Path(cfg["output_dir"])
        out.mkdir(parents=True, exist_ok=True)
        payload = COMMANDS[name](cfg, out) or {}
    except (ConfigError, ValueError, TypeError) as exc:
        status, error = EXIT_INPUT, {"code": "input_error", "message": str(exc)}
    except NonConvergenceError as exc:
        status, error = EXIT_NUMERIC, {"code": "non_convergence", "message": str(exc)}
    except (CheckFailed, FloatingPointError, RuntimeError) as exc:
        status, error = EXIT_NUMERIC, {"code": "numerical_failure", "message": str(exc)}
    if error:
        print(f"error: {error['message']}", file=sys.stderr)
    if out is None:
        return status
    write_manifest(out / f"{name.replace('-', '_')}_manifest.json",
                   {"command": name, "argv": list(sys.argv[1:] if argv is None else argv),
                    "config": cfg, "exit_status": status, "error": error,
                    "wall_time": time.perf_counter() - t0, "results": payload})
    return status


if __name__ == "__main__":
    sys.exit(main())
