"""Command-line entry point: scenario configuration and study reproduction.

Subcommands: ``study`` (the full six-scenario simulation), ``scenario`` (one
configured cell), ``fit`` (one-shot estimation from a user CSV), and
``trace`` (solver iteration diagnostics). The CLI is a thin shell: every
number it prints comes from the montecarlo/variance operations.
"""

from __future__ import annotations

import argparse
import hashlib
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .designs import DesignSpec, poisson_design, srs_design
from .estimators import FITTED_VARIANTS, VARIANT_TO_EEKIND, Variant, nwa_estimate
from .montecarlo import (
    Scenario,
    StudyReport,
    TAG_POPULATION,
    mix_seed,
    run_study,
    write_raw_records,
)
from .population import GenConfig, Population, generate_population
from .solvers import EEKind, EstimatingEquation, SolverControls, solve
from .variance import var_hat_calS, var_hat_calU, var_hat_mle

__all__ = ["RunConfig", "parse_config", "run_full_study", "main"]

TAG_SCENARIO = 0x5343454E

#: Population correlations of the six-cell study, in fixed order.
STUDY_RHOS = (0.6, 0.3, 0.0)
STUDY_DESIGNS = ("srs", "poisson")


@dataclass(frozen=True)
class RunConfig:
    """Validated scenario parameters; defaults match the primary study cell."""

    N: int = 1000
    n: int = 100
    mu: tuple[float, float] = (4.0, 4.0)
    rho: float = 0.6
    lam: tuple[float, float] = (0.1, 0.4)
    design: str = "srs"
    reps: int = 10000
    seed: int = 1729
    tol: float = 1e-8
    max_iter: int = 50
    max_step: float = 10.0
    divergence_bound: float = 50.0
    threads: int = 1
    out: str = "results"
    emit_raw: bool = False

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("N: must be an integer >= 2")
        if not 0 < self.n < self.N:
            raise ValueError("n: must satisfy 0 < n < N")
        if not abs(self.rho) < 1.0:
            raise ValueError("rho: must satisfy |rho| < 1")
        if self.design not in ("srs", "poisson"):
            raise ValueError("design: must be 'srs' or 'poisson'")
        if self.reps < 1:
            raise ValueError("reps: must be an integer >= 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed: must fit in an unsigned 64-bit integer")
        if self.tol <= 0.0:
            raise ValueError("tol: must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter: must be an integer >= 1")
        if self.max_step <= 0.0:
            raise ValueError("max_step: must be positive")
        if self.divergence_bound <= 0.0:
            raise ValueError("divergence_bound: must be positive")
        if self.threads < 1:
            raise ValueError("threads: must be an integer >= 1")

    @property
    def controls(self) -> SolverControls:
        return SolverControls(
            tol=self.tol,
            max_iter=self.max_iter,
            max_step=self.max_step,
            divergence_bound=self.divergence_bound,
        )


_PAIR_KEYS = {"mu", "lam"}
_INT_KEYS = {"N", "n", "reps", "seed", "max_iter", "threads"}
_FLOAT_KEYS = {"rho", "tol", "max_step", "divergence_bound"}
_BOOL_KEYS = {"emit_raw"}
_STR_KEYS = {"design", "out"}
_ALL_KEYS = _PAIR_KEYS | _INT_KEYS | _FLOAT_KEYS | _BOOL_KEYS | _STR_KEYS


def _coerce(key: str, raw: str):
    try:
        if key in _PAIR_KEYS:
            parts = [float(v) for v in raw.split(",")]
            if len(parts) != 2:
                raise ValueError
            return tuple(parts)
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
        if key in _BOOL_KEYS:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError
        return raw
    except ValueError:
        raise ValueError(f"{key}: cannot parse value {raw!r}") from None


def parse_config(path: str | Path | None, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from a flat key=value file plus flag overrides.

    Flags win over file values; unknown keys and out-of-range values raise
    with the offending key named.
    """
    values: dict = {}
    if path is not None:
        for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, raw = line.partition("=")
            if not sep:
                raise ValueError(f"line {lineno}: expected key = value, got {line!r}")
            key = key.strip()
            if key not in _ALL_KEYS:
                raise ValueError(f"unknown config key {key!r} (line {lineno})")
            values[key] = _coerce(key, raw.strip())
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key not in _ALL_KEYS:
            raise ValueError(f"unknown config key {key!r}")
        values[key] = val
    return RunConfig(**values)


# Keys that define the statistical experiment; execution details (output
# paths, worker counts, raw emission) must not change the recorded hash.
_HASHED_KEYS = (
    "N", "n", "mu", "rho", "lam", "design", "reps", "seed",
    "tol", "max_iter", "max_step", "divergence_bound",
)


def config_hash(cfg: RunConfig) -> str:
    parts = []
    for name in _HASHED_KEYS:
        v = getattr(cfg, name)
        if isinstance(v, tuple):
            v = ",".join(f"{x:.17g}" for x in v)
        elif isinstance(v, float):
            v = f"{v:.17g}"
        parts.append(f"{name}={v}")
    return hashlib.sha256("\n".join(parts).encode()).hexdigest()[:16]


def _fmt4(v) -> str:
    if v is None:
        return ""
    return f"{v:.4g}"


def _build_design(cfg: RunConfig, pop: Population) -> DesignSpec:
    if cfg.design == "srs":
        return srs_design(cfg.N, cfg.n)
    return poisson_design(pop, float(cfg.n))


def _population_for(cfg: RunConfig, rho: float, rho_index: int) -> Population:
    gen = GenConfig(
        N=cfg.N,
        mean_mu=cfg.mu,
        rho=rho,
        lam=cfg.lam,
        seed=mix_seed(cfg.seed, rho_index, TAG_POPULATION),
    )
    return generate_population(gen)


def _scenario_for(cfg: RunConfig, pop: Population, design: DesignSpec, index: int) -> Scenario:
    return Scenario(
        population=pop,
        design=design,
        reps=cfg.reps,
        master_seed=mix_seed(cfg.seed, index, TAG_SCENARIO),
        controls=cfg.controls,
    )


_TABLE3_VARIANTS = (Variant.TRUE_P, Variant.MLE_K1, Variant.MLE_KINVPI, Variant.CAL_U, Variant.CAL_S)
_TABLE4_VARIANTS = (Variant.MLE_K1, Variant.MLE_KINVPI, Variant.CAL_U, Variant.CAL_S)


def _write_tables(out_dir: Path, header: str, results: list[tuple[str, float, StudyReport]]) -> None:
    with (out_dir / "table2.csv").open("w") as fh:
        fh.write(f"# {header}\n")
        fh.write("design,rho,variant,rb,rrvar\n")
        for design, rho, report in results:
            for variant in report.metrics:
                m = report.metrics[variant]
                fh.write(f"{design},{rho:.4g},{variant.value},{_fmt4(m.rb)},{_fmt4(m.rrvar)}\n")

    with (out_dir / "table3.csv").open("w") as fh:
        fh.write(f"# {header}\n")
        fh.write("design,rho,variant,max_weight\n")
        for design, rho, report in results:
            for variant in _TABLE3_VARIANTS:
                m = report.metrics[variant]
                fh.write(f"{design},{rho:.4g},{variant.value},{_fmt4(m.max_weight)}\n")

    with (out_dir / "table4.csv").open("w") as fh:
        fh.write(f"# {header}\n")
        fh.write("design,rho,variant,variance_rb,mean_ci_length,coverage,failure_rate\n")
        for design, rho, report in results:
            for variant in _TABLE4_VARIANTS:
                m = report.metrics[variant]
                fh.write(
                    f"{design},{rho:.4g},{variant.value},{_fmt4(m.variance_rb)},"
                    f"{_fmt4(m.mean_ci_length)},{_fmt4(m.coverage)},{_fmt4(m.failure_rate)}\n"
                )

    with (out_dir / "tables.txt").open("w") as fh:
        fh.write(f"# {header}\n")
        fh.write(format_study_text(results))


def format_study_text(results: list[tuple[str, float, StudyReport]]) -> str:
    """Aligned text rendering of the point, weight, and variance tables."""
    lines: list[str] = []
    lines.append("Point estimators: relative bias and relative root variance")
    lines.append(f"{'design':<9}{'rho':>5}  {'variant':<10}{'RB':>12}{'RRVAR':>12}")
    for design, rho, report in results:
        for variant, m in report.metrics.items():
            lines.append(
                f"{design:<9}{rho:>5.2g}  {variant.value:<10}"
                f"{_fmt4(m.rb):>12}{_fmt4(m.rrvar):>12}"
            )
    lines.append("")
    lines.append("Maximum final weight over all replicates")
    lines.append(f"{'design':<9}{'rho':>5}  {'variant':<10}{'max_w':>12}")
    for design, rho, report in results:
        for variant in _TABLE3_VARIANTS:
            m = report.metrics[variant]
            lines.append(
                f"{design:<9}{rho:>5.2g}  {variant.value:<10}{_fmt4(m.max_weight):>12}"
            )
    lines.append("")
    lines.append("Variance estimators: relative bias, CI length, coverage, failures")
    lines.append(
        f"{'design':<9}{'rho':>5}  {'variant':<10}{'var_RB':>10}{'CI_len':>12}{'CR':>8}{'fail':>8}"
    )
    for design, rho, report in results:
        for variant in _TABLE4_VARIANTS:
            m = report.metrics[variant]
            lines.append(
                f"{design:<9}{rho:>5.2g}  {variant.value:<10}{_fmt4(m.variance_rb):>10}"
                f"{_fmt4(m.mean_ci_length):>12}{_fmt4(m.coverage):>8}{_fmt4(m.failure_rate):>8}"
            )
    lines.append("")
    return "\n".join(lines)


def study_scenarios(cfg: RunConfig) -> list[tuple[str, float, Scenario]]:
    """The six study cells (two designs x three correlations), deterministically
    derived from the master seed."""
    cells = []
    index = 0
    for design_name in STUDY_DESIGNS:
        for rho_index, rho in enumerate(STUDY_RHOS):
            pop = _population_for(cfg, rho, rho_index)
            design = (
                srs_design(cfg.N, cfg.n)
                if design_name == "srs"
                else poisson_design(pop, float(cfg.n))
            )
            cells.append((design_name, rho, _scenario_for(cfg, pop, design, index)))
            index += 1
    return cells


def run_full_study(cfg: RunConfig) -> int:
    """Run all six scenarios (three correlations x two designs) and write tables."""
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    header = f"master_seed={cfg.seed} config_hash={config_hash(cfg)}"
    results: list[tuple[str, float, StudyReport]] = []
    for design_name, rho, scenario in study_scenarios(cfg):
        if cfg.emit_raw:
            report, records = run_study(scenario, threads=cfg.threads, return_records=True)
            raw_path = out_dir / f"raw_{design_name}_rho{rho:.4g}.csv"
            write_raw_records(raw_path, records, header_comment=header)
        else:
            report = run_study(scenario, threads=cfg.threads)
        results.append((design_name, rho, report))
    _write_tables(out_dir, header, results)
    print(format_study_text(results))
    return 0


def _run_one_scenario(cfg: RunConfig) -> int:
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    header = f"master_seed={cfg.seed} config_hash={config_hash(cfg)}"
    pop = _population_for(cfg, cfg.rho, STUDY_RHOS.index(cfg.rho) if cfg.rho in STUDY_RHOS else 0)
    design = _build_design(cfg, pop)
    scenario = _scenario_for(cfg, pop, design, 0)
    if cfg.emit_raw:
        report, records = run_study(scenario, threads=cfg.threads, return_records=True)
        write_raw_records(out_dir / "raw.csv", records, header_comment=header)
    else:
        report = run_study(scenario, threads=cfg.threads)
    with (out_dir / "report.csv").open("w") as fh:
        fh.write(f"# {header}\n")
        fh.write(
            "variant,n_ok,failure_rate,rb,rrvar,mc_variance,"
            "mean_variance_estimate,variance_rb,mean_ci_length,coverage,max_weight\n"
        )
        for variant, m in report.metrics.items():
            fh.write(
                f"{variant.value},{m.n_ok},{_fmt4(m.failure_rate)},{_fmt4(m.rb)},"
                f"{_fmt4(m.rrvar)},{_fmt4(m.mc_variance)},{_fmt4(m.mean_variance_estimate)},"
                f"{_fmt4(m.variance_rb)},{_fmt4(m.mean_ci_length)},{_fmt4(m.coverage)},"
                f"{_fmt4(m.max_weight)}\n"
            )
    print(format_study_text([(cfg.design, cfg.rho, report)]))
    return 0


def _read_fit_csv(path: Path):
    lines = [
        ln for ln in path.read_text().splitlines() if ln.strip() and not ln.startswith("#")
    ]
    header = [h.strip() for h in lines[0].split(",")]
    if header[:3] != ["unit", "pi", "r"] or header[-1] != "y" or len(header) < 5:
        raise ValueError(
            f"expected header unit,pi,r,x...,y with at least one x column, got {lines[0]!r}"
        )
    n_x = len(header) - 4
    units, pis, rs, xs, ys = [], [], [], [], []
    for ln in lines[1:]:
        cells = [c.strip() for c in ln.split(",")]
        units.append(cells[0])
        pis.append(float(cells[1]))
        r = int(cells[2])
        rs.append(r)
        xs.append([float(c) for c in cells[3 : 3 + n_x]])
        y_cell = cells[3 + n_x]
        if r == 1:
            if not y_cell:
                raise ValueError(f"respondent unit {cells[0]} is missing its y value")
            ys.append(float(y_cell))
        else:
            ys.append(float(y_cell) if y_cell else math.nan)
    pi = np.array(pis)
    r = np.array(rs, dtype=np.int64)
    # The model's first auxiliary is the constant 1; the file carries only the
    # remaining x columns.
    aux = np.column_stack([np.ones(len(units)), np.array(xs)])
    y = np.array(ys)
    return units, pi, r, aux, y


def _fit_all(
    aux: np.ndarray,
    pi: np.ndarray,
    r: np.ndarray,
    totals: np.ndarray | None,
    controls: SolverControls,
    variants: tuple[Variant, ...],
):
    fits = {}
    for variant in variants:
        kind = VARIANT_TO_EEKIND[variant]
        if kind is EEKind.CAL_POPULATION:
            if totals is None:
                continue
            eq = EstimatingEquation.cal_population(aux, pi, r, totals)
        elif kind is EEKind.CAL_SAMPLE:
            eq = EstimatingEquation.cal_sample(aux, pi, r)
        else:
            eq = EstimatingEquation.mle(aux, pi, r, survey_weighted=kind is EEKind.MLE_KINVPI)
        fits[variant] = solve(eq, controls)
    return fits


def _cmd_fit(args, trace: bool = False) -> int:
    path = Path(args.input)
    units, pi, r, aux, y = _read_fit_csv(path)
    totals = None
    if args.totals:
        totals = np.array([float(v) for v in args.totals.split(",")])
        if totals.shape != (aux.shape[1],):
            raise ValueError(
                f"--totals needs {aux.shape[1]} values (count first, then each x column total)"
            )
    if args.variants:
        variants = tuple(Variant(v) for v in args.variants.split(","))
    else:
        variants = FITTED_VARIANTS
    controls = SolverControls(trace=True) if trace else SolverControls()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    fits = _fit_all(aux, pi, r, totals, controls, variants)
    if trace:
        for variant, fit in fits.items():
            with (out_dir / f"trace_{variant.value}.csv").open("w") as fh:
                fh.write("iteration,residual_norm,step_size\n")
                for it, rn, step in fit.trace:
                    fh.write(f"{it},{rn:.17g},{step:.17g}\n")
            print(f"{variant.value}: status={fit.status.value} iterations={fit.iterations}")
        return 0

    mask = r == 1
    n, n_r = len(units), int(mask.sum())
    resp_units = [u for u, keep in zip(units, mask) if keep]
    with (out_dir / "estimates.csv").open("w") as fh_est, (
        out_dir / "weights.csv"
    ).open("w") as fh_w, (out_dir / "variance.csv").open("w") as fh_v:
        fh_est.write("variant,value,n,n_r,max_weight,status,iterations\n")
        fh_w.write("unit,variant,weight\n")
        fh_v.write("variant,v_sam,v_nr,v_total,ci_low,ci_high\n")
        for variant, fit in fits.items():
            if not fit.converged:
                fh_est.write(
                    f"{variant.value},nan,{n},{n_r},nan,{fit.status.value},{fit.iterations}\n"
                )
                print(f"{variant.value}: {fit.status.value} after {fit.iterations} iterations")
                continue
            p_hat_r = fit.p_hat[mask]
            record = nwa_estimate(variant, pi[mask], y[mask], p_hat_r, fit)
            fh_est.write(record.csv_row(n, n_r) + "\n")
            for unit, w in zip(resp_units, record.weights):
                fh_w.write(f"{unit},{variant.value},{w:.17g}\n")
            ve = _variance_for_fit(variant, pi[mask], aux[mask], y[mask], p_hat_r)
            fh_v.write(ve.csv_row(variant, record.value) + "\n")
            print(f"{variant.value}: total={record.value:.6g} (n_r={n_r})")
    return 0


def _variance_for_fit(variant, pi_r, x_r, y_r, p_hat_r):
    # A one-shot fit carries no joint-inclusion information; treat the units
    # as independently drawn (Poisson design), which zeroes the pair term.
    from .designs import DesignKind

    design = DesignSpec(kind=DesignKind.POISSON, pi=pi_r, n_target=float(np.sum(pi_r)))
    if variant is Variant.MLE_K1:
        return var_hat_mle(design, pi_r, x_r, y_r, p_hat_r, survey_weighted=False)
    if variant is Variant.MLE_KINVPI:
        return var_hat_mle(design, pi_r, x_r, y_r, p_hat_r, survey_weighted=True)
    if variant is Variant.CAL_U:
        return var_hat_calU(design, pi_r, x_r, y_r, p_hat_r)
    return var_hat_calS(design, pi_r, x_r, y_r, p_hat_r)


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--seed", type=int, help="master seed (64-bit unsigned)")
    parser.add_argument("--reps", type=int, help="replicates per scenario")
    parser.add_argument("--design", choices=("srs", "poisson"), help="sampling design")
    parser.add_argument("--rho", type=float, help="population correlation")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--threads", type=int, help="worker process cap")
    parser.add_argument(
        "--emit-raw", action="store_const", const=True, dest="emit_raw",
        help="also write per-replicate record CSVs",
    )


def _config_from_args(args) -> RunConfig:
    overrides = {
        "seed": args.seed,
        "reps": args.reps,
        "design": args.design,
        "rho": args.rho,
        "out": args.out,
        "threads": args.threads,
        "emit_raw": args.emit_raw,
    }
    return parse_config(args.config, overrides)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="nwacal",
        description="Design-based total estimation under nonresponse with "
        "reweighted respondents",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_study = sub.add_parser("study", help="run the full six-scenario study")
    _add_common_flags(p_study)

    p_scen = sub.add_parser("scenario", help="run one configured scenario")
    _add_common_flags(p_scen)

    for name, help_text in (
        ("fit", "estimate totals from a unit,pi,r,x...,y CSV"),
        ("trace", "emit per-iteration solver diagnostics for a fit"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--input", required=True, help="CSV with header unit,pi,r,x...,y")
        p.add_argument(
            "--totals",
            help="comma-separated population totals of the auxiliaries "
            "(count first); enables population-level calibration",
        )
        p.add_argument("--variants", help="comma-separated subset of mle_1,mle_invpi,cal_U,cal_S")
        p.add_argument("--out", default="results", help="output directory")

    args = parser.parse_args(argv)
    try:
        if args.command == "study":
            return run_full_study(_config_from_args(args))
        if args.command == "scenario":
            return _run_one_scenario(_config_from_args(args))
        if args.command == "fit":
            return _cmd_fit(args, trace=False)
        return _cmd_fit(args, trace=True)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
