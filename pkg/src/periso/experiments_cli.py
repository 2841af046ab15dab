"""Batch experiments and the ``periso`` command line.

Configs are plain ``key = value`` lines; ``#`` starts a comment.  Keys:

    experiment        kernel_cert | perimeter_sweep | stability_sweep |
                      limit_check | divergence_check
    dimension         2 or 3
    family            family strings separated by ';'
                      (halfspace[:s1,...,sn] | perturbed:<A|B|C>[:<t>][:<signs>])
    t_values          comma-separated amplitudes for perturbed families
    rho_or_eps_values comma-separated correlations (gaussian_ou) or noise
                      scales (uniform_heat); aliases: rho_values, eps_values
    variant           gaussian_ou | uniform_heat
    resolution, samples, seed, volume_samples, fiber_samples,
    grid_points, truncation_order, output_path

CSV output starts with a ``# periso-csv v1`` comment line, then the header.
Exit codes: 0 all checks pass, 1 a check failed, 2 bad configuration.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import noise_stability as ns
from .periodic_sets import family_signs, make_half_space, parse_family, validate_symmetry
from .surface_quadrature import (
    divergence_identity_check,
    extract_mesh,
    gaussian_perimeter,
    robustness_term,
    surface_report,
)
from .theta_kernel import (
    KERNEL_DEVIATION_BOUND,
    ThetaKernel,
    half_space_perimeter_dual,
    half_space_perimeter_exact,
    p1_integral,
    poisson_consistency,
    sup_deviation_check,
)

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "ISOPERIMETRIC_SLACK",
    "load_config",
    "parse_config",
    "run_kernel_cert",
    "run_perimeter_sweep",
    "run_stability_sweep",
    "run_limit_check",
    "run_divergence_check",
    "run_experiment",
    "main",
]

#: floor on mesh tolerances; differences below it are float64 round-off
ROUNDOFF_FLOOR = 1e-12

#: multiplicative slack on the half-space perimeter in the isoperimetric bound
ISOPERIMETRIC_SLACK = 6e-9

EXPERIMENTS = ("kernel_cert", "perimeter_sweep", "stability_sweep", "limit_check", "divergence_check")
CSV_VERSION = "# periso-csv v1"


class ConfigError(ValueError):
    pass


def _fixed_amplitude(family):
    """Amplitude written into a perturbed family string, else None."""
    if not family.strip().lower().startswith("perturbed"):
        return None
    for part in family.split(":")[2:]:
        if "," not in part:
            return float(part)
    return None


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    dimension: int = 2
    families: tuple = ("halfspace",)
    t_values: tuple = (0.0,)
    rho_or_eps_values: tuple = ()
    variant: str = "gaussian_ou"
    resolution: int = 256
    samples: int = 1_000_000
    seed: int = 0
    volume_samples: int = 1_000_000
    fiber_samples: int = 64
    grid_points: int = 100_000
    truncation_order: int = 4
    output_path: str = ""

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if self.dimension not in (2, 3):
            raise ConfigError("dimension must be 2 or 3")
        if self.variant not in ("gaussian_ou", "uniform_heat"):
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.resolution < 16:
            raise ConfigError("resolution must be at least 16")
        if self.samples < 10_000:
            raise ConfigError("samples must be at least 10000")
        if self.truncation_order < 0:
            raise ConfigError("truncation_order must be non-negative")
        if any(abs(t) > 1 for t in self.t_values):
            raise ConfigError("t values must satisfy |t| <= 1")
        for fam in self.families:
            try:
                fixed = _fixed_amplitude(fam)
                swept = fam.lower().startswith("perturbed") and fixed is None
                parse_family(fam, self.dimension, 0.0 if swept else None)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None

    def digest(self) -> str:
        data = asdict(self)
        data.pop("output_path")
        blob = json.dumps(data, sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


_LIST_KEYS = {"t_values", "rho_or_eps_values"}
_ALIASES = {"rho_values": "rho_or_eps_values", "eps_values": "rho_or_eps_values", "values": "rho_or_eps_values", "family": "families"}


def _convert(key, raw):
    kinds = {f.name: f.type for f in fields(ExperimentConfig)}
    if key not in kinds:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        if key == "families":
            return tuple(p.strip() for p in raw.split(";") if p.strip())
        if key in _LIST_KEYS:
            return tuple(float(v) for v in raw.replace(" ", "").split(",") if v)
        if kinds[key] == "int":
            value = float(raw)
            if value != int(value):
                raise ValueError
            return int(value)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_config(text: str, **overrides) -> ExperimentConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = _ALIASES.get(key, key)
        values[key] = _convert(key, raw)
    for key, raw in overrides.items():
        if raw is None:
            continue
        key = _ALIASES.get(key, key)
        values[key] = _convert(key, raw) if isinstance(raw, str) else raw
    if "experiment" not in values:
        raise ConfigError("config does not name an experiment")
    return ExperimentConfig(**values)


def load_config(path: str, **overrides) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(text, **overrides)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _csv(experiment, header, rows):
    buf = io.StringIO()
    buf.write(f"{CSV_VERSION} experiment={experiment}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows([_fmt(r[h]) for h in header] for r in rows)
    return buf.getvalue()


def _provenance(cfg):
    return {"config_hash": cfg.digest(), "seed": cfg.seed, "samples": cfg.samples}


def _phases(cfg):
    """(family label, t, phase function) for every family/amplitude pair."""
    out = []
    for fam in cfg.families:
        if fam.lower().startswith("halfspace"):
            out.append((fam, 0.0, parse_family(fam, cfg.dimension)))
        elif _fixed_amplitude(fam) is not None:
            out.append((fam, _fixed_amplitude(fam), parse_family(fam, cfg.dimension)))
        else:
            out.extend((fam, float(t), parse_family(fam, cfg.dimension, t)) for t in cfg.t_values)
    return out


class SymmetryError(ValueError):
    pass


def _checked(f):
    ok, worst = validate_symmetry(f, samples=1000, seed=0, tol=1e-10)
    if not ok:
        raise SymmetryError(f"{f.description} is not periodized (worst violation {worst:.3e})")
    return f


# --- kernel certification -------------------------------------------------


def run_kernel_cert(cfg: ExperimentConfig):
    """Kernel self-checks as a text report; returns ``(text, all_passed)``."""
    kernel = ThetaKernel(cfg.truncation_order)
    items = []
    dev, ok = sup_deviation_check(cfg.grid_points, kernel)
    items.append(("sup_deviation", ok, f"max|1-p1|={dev:.6e} bound={KERNEL_DEVIATION_BOUND:.1e}"))
    gap = poisson_consistency(1000, kernel)
    items.append(("poisson_two_form", gap <= 1e-14, f"max gap={gap:.3e} tol=1e-14"))
    integral = p1_integral(10_000, kernel)
    items.append(("p1_integral", abs(integral - 1.0) <= 1e-12, f"int_0^1 p1={integral!r} tol=1e-12"))
    worst = max(abs(half_space_perimeter_exact(n) - half_space_perimeter_dual(n)) for n in (1, 2, 3))
    items.append(("halfspace_two_form", worst <= 1e-14, f"max gap over n=1,2,3: {worst:.3e} tol=1e-14"))
    lines = [f"# periso kernel_cert truncation_order={kernel.truncation_order} grid_points={cfg.grid_points}"]
    lines += [f"{'PASS' if ok else 'FAIL'} {name}: {detail}" for name, ok, detail in items]
    passed = all(ok for _, ok, _ in items)
    return "\n".join(lines) + "\n", passed


# --- perimeter sweep -------------------------------------------------------


def _inequality_terms(f, resolution, kernel, fiber_samples):
    n = f.dimension
    mesh = extract_mesh(f, resolution)
    report = surface_report(f, mesh, kernel, fiber_samples)
    pb = half_space_perimeter_exact(n)
    rhs_weak = (1.0 - ISOPERIMETRIC_SLACK) * pb
    rhs_robust = rhs_weak + report.robustness
    return report, {
        "halfspace_perimeter": pb,
        "lhs": report.gaussian_perimeter,
        "rhs_robust": rhs_robust,
        "rhs_weak": rhs_weak,
        "margin_robust": report.gaussian_perimeter - rhs_robust,
        "margin_weak": report.gaussian_perimeter - rhs_weak,
        "margin_lebesgue": report.lebesgue_perimeter - math.sqrt(n) - report.lebesgue_robustness,
    }


def perimeter_row(f, resolution, kernel=None, fiber_samples=64):
    """Surface report plus inequality margins and their mesh tolerances.

    A tolerance is the change of the corresponding margin between
    ``resolution`` and ``resolution // 2``.
    """
    kernel = kernel or ThetaKernel()
    report, fine = _inequality_terms(f, resolution, kernel, fiber_samples)
    _, coarse = _inequality_terms(f, resolution // 2, kernel, fiber_samples)
    row = dict(zip(report.csv_header(), report.csv_values()))
    row = {k: float(v) if k != "resolution" else int(v) for k, v in row.items()}
    row.update(fine)
    for key in ("robust", "weak", "lebesgue"):
        tol = max(abs(fine[f"margin_{key}"] - coarse[f"margin_{key}"]), ROUNDOFF_FLOOR)
        margin = fine[f"margin_{key}"]
        row[f"tol_{key}"] = tol
        row[f"pass_{key}"] = margin >= -tol
        row[f"strict_{key}"] = margin > tol
    return row


def run_perimeter_sweep(cfg: ExperimentConfig):
    """CSV of surface quantities and inequality margins; returns ``(text, all_passed)``."""
    kernel = ThetaKernel(cfg.truncation_order)
    rows = []
    for fam, t, f in _phases(cfg):
        _checked(f)
        row = {"family": fam, "n": cfg.dimension, "t": t}
        row.update(perimeter_row(f, cfg.resolution, kernel, cfg.fiber_samples))
        row.update(_provenance(cfg))
        rows.append(row)
    proj = [f"projection_{i + 1}" for i in range(cfg.dimension)]
    header = (
        ["family", "n", "t", "resolution", "gaussian_perimeter", "lebesgue_perimeter", "robustness", "lebesgue_robustness"]
        + proj
        + ["multiplicity_refined_sum", "halfspace_perimeter", "lhs", "rhs_robust", "rhs_weak"]
        + [f"{k}_{m}" for m in ("robust", "weak", "lebesgue") for k in ("margin", "tol", "pass", "strict")]
        + ["config_hash", "seed", "samples"]
    )
    passed = all(r["pass_robust"] and r["pass_weak"] and r["pass_lebesgue"] for r in rows)
    return _csv(cfg.experiment, header, rows), passed


# --- stability sweep -------------------------------------------------------


def run_stability_sweep(cfg: ExperimentConfig):
    """Noise stability of each family against the half space with the same signs.

    Returns ``(text, all_passed)``.  The comparison ``NS(family) <= NS(B) +
    slack + 3 combined std errors`` is asserted only where the robustness
    term predicts a first-order gap larger than three combined std errors;
    elsewhere it is reported with ``asserted = false``.
    """
    kernel = ThetaKernel(cfg.truncation_order)
    gaussian = cfg.variant == "gaussian_ou"
    mc = ns.ou_noise_stability_mc if gaussian else ns.uniform_noise_stability_mc
    rows = []
    for fam, t, f in _phases(cfg):
        _checked(f)
        mesh = extract_mesh(f, cfg.resolution)
        rob = robustness_term(mesh, kernel if gaussian else None)
        base = make_half_space(family_signs(fam, cfg.dimension))
        for value in cfg.rho_or_eps_values:
            est = mc(f, value, cfg.samples, cfg.seed)
            ref = mc(base, value, cfg.samples, cfg.seed)
            if gaussian:
                oracle = ns.ou_noise_stability_oracle_halfspace(value, cfg.dimension)
                scale = math.sqrt(1.0 - value * value)
                slack = ns.NOISE_SLACK
            else:
                oracle = 0.5 - value / ns.SQRT_2PI * math.sqrt(cfg.dimension)
                scale = value
                slack = 0.0
            comb = math.hypot(est.std_error, ref.std_error)
            asserted = scale / ns.SQRT_2PI * rob > 3.0 * comb
            ok = est.probability <= ref.probability + slack + 3.0 * comb
            rows.append(
                {
                    "variant": cfg.variant,
                    "family": fam,
                    "t": t,
                    "n": cfg.dimension,
                    "parameter": value,
                    "samples": cfg.samples,
                    "seed": cfg.seed,
                    "probability": est.probability,
                    "std_error": est.std_error,
                    "baseline_probability": ref.probability,
                    "baseline_std_error": ref.std_error,
                    "oracle": oracle,
                    "robustness": rob,
                    "asserted": asserted,
                    "pass": ok or not asserted,
                    "resolution": cfg.resolution,
                    "config_hash": cfg.digest(),
                }
            )
    header = [
        "variant", "family", "t", "n", "parameter", "samples", "seed", "probability", "std_error",
        "baseline_probability", "baseline_std_error", "oracle", "robustness", "asserted", "pass",
        "resolution", "config_hash",
    ]
    return _csv(cfg.experiment, header, rows), all(r["pass"] for r in rows)


# --- surface-area limit ----------------------------------------------------


def run_limit_check(cfg: ExperimentConfig):
    kernel = ThetaKernel(cfg.truncation_order)
    rows = []
    for fam, t, f in _phases(cfg):
        _checked(f)
        perim = gaussian_perimeter(extract_mesh(f, cfg.resolution), kernel)
        results = ns.surface_limit_check(f, perim, sorted(cfg.rho_or_eps_values), cfg.samples, cfg.seed)
        halfspace = fam.lower().startswith("halfspace")
        prev = None
        for r in results:
            err = abs(r.normalized_deficit - r.predicted)
            ok = prev is None or err <= prev[0] + 3.0 * math.hypot(r.std_error, prev[1])
            prev = (err, r.std_error)
            oracle = float("nan")
            if halfspace:
                p = ns.ou_noise_stability_oracle_halfspace(r.rho, cfg.dimension)
                oracle = ns.SQRT_2PI / ns.stable_arccos(r.rho) * (0.5 - p)
            rows.append(
                {
                    "family": fam, "t": t, "n": cfg.dimension, "rho": r.rho,
                    "normalized_deficit": r.normalized_deficit, "std_error": r.std_error,
                    "predicted": r.predicted, "relative_error": err / r.predicted if r.predicted else float("nan"),
                    "oracle_deficit": oracle, "pass": ok, "resolution": cfg.resolution,
                    **_provenance(cfg),
                }
            )
    header = [
        "family", "t", "n", "rho", "normalized_deficit", "std_error", "predicted", "relative_error",
        "oracle_deficit", "pass", "resolution", "config_hash", "seed", "samples",
    ]
    return _csv(cfg.experiment, header, rows), all(r["pass"] for r in rows)


# --- divergence identity ---------------------------------------------------


def run_divergence_check(cfg: ExperimentConfig):
    kernel = ThetaKernel(cfg.truncation_order)
    rows = []
    for fam, t, f in _phases(cfg):
        _checked(f)
        mesh = extract_mesh(f, cfg.resolution)
        res = divergence_identity_check(f, mesh, kernel, cfg.volume_samples, cfg.seed)
        coarse = divergence_identity_check(f, extract_mesh(f, cfg.resolution // 2), kernel, 100_000, cfg.seed)
        mesh_tol = max(abs(res.lhs - coarse.lhs), ROUNDOFF_FLOOR)
        bound = 1e-7 * math.sqrt(cfg.dimension) + 3.0 * res.rhs_std_error + mesh_tol
        rows.append(
            {
                "family": fam, "t": t, "n": cfg.dimension, "lhs": res.lhs, "rhs": res.rhs, "gap": res.gap,
                "rhs_std_error": res.rhs_std_error, "cos_correction": res.cos_correction,
                "face_flux": res.face_flux, "closed_gap": res.closed_gap, "mesh_tolerance": mesh_tol,
                "bound": bound, "pass": res.closed_gap <= bound, "resolution": cfg.resolution,
                "volume_samples": cfg.volume_samples, "config_hash": cfg.digest(), "seed": cfg.seed,
            }
        )
    header = list(rows[0]) if rows else ["family", "t", "n", "lhs", "rhs", "gap"]
    return _csv(cfg.experiment, header, rows), all(r["pass"] for r in rows)


RUNNERS = {
    "kernel_cert": run_kernel_cert,
    "perimeter_sweep": run_perimeter_sweep,
    "stability_sweep": run_stability_sweep,
    "limit_check": run_limit_check,
    "divergence_check": run_divergence_check,
}


def run_experiment(cfg: ExperimentConfig):
    return RUNNERS[cfg.experiment](cfg)


def _build_parser():
    parser = argparse.ArgumentParser(prog="periso", description="Periodic Gaussian isoperimetry experiments.")
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--out", help="output file (default: stdout)")
        p.add_argument("--seed", type=int)
        p.add_argument("--samples", type=int)
        p.add_argument("--resolution", type=int)
        p.add_argument("--dimension", type=int)
        p.add_argument("--family", help="family strings separated by ';'")
        p.add_argument("--t-values", help="comma-separated amplitudes")
        p.add_argument("--values", help="comma-separated rho or epsilon values")
        p.add_argument("--variant", choices=("gaussian_ou", "uniform_heat"))
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    overrides = {
        "experiment": args.experiment,
        "seed": args.seed,
        "samples": args.samples,
        "resolution": args.resolution,
        "dimension": args.dimension,
        "family": args.family,
        "t_values": args.t_values,
        "rho_or_eps_values": args.values,
        "variant": args.variant,
        "output_path": args.out,
    }
    try:
        if args.config:
            overrides.pop("experiment")
            cfg = load_config(args.config, **overrides)
        else:
            cfg = parse_config("", **overrides)
        if cfg.experiment != args.experiment:
            raise ConfigError("config experiment does not match the subcommand")
        text, passed = run_experiment(cfg)
    except (ConfigError, SymmetryError, ValueError) as exc:
        print(f"periso: error: {exc}", file=sys.stderr)
        return 2
    if cfg.output_path:
        with open(cfg.output_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0 if passed else 1


__all__ += ["SymmetryError", "perimeter_row"]

if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
