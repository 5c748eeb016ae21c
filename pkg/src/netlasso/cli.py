"""Command-line interface: simulate / fit / meta / eval.

Every subcommand accepts ``--config FILE`` with flat ``key=value`` lines
(keys match the long option names); explicit command-line flags override
config values. Numeric TSV output is always 10 significant digits, and a
given configuration plus seed reproduces every output byte for byte.
Failures print a machine-readable JSON record to stderr (and to
``<out>/error.json`` when the output directory is known) and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from ._io import fmt
from .data import load_dataset, residualize, standardize
from .errors import ConfigError, NetlassoError
from .meta import CohortSet, run_procedure
from .refit import ols_refit
from .simulate import SimDesign, evaluate_files, run_simulation
from .solver import SolverConfig, term_key, write_solution_tsv
from .tuning import TuneSpec, c_from_r, lambda1_for_target
from .weights import (
    WeightMatrix,
    build_adjacency,
    build_weights,
    load_gmt,
    load_pair_list,
    load_snp_map,
    load_weight_tsv,
    membership_from_gene_sets,
    write_weight_tsv,
)

logger = logging.getLogger("netlasso")


def _read_config(path: str) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, _, val = line.partition("=")
            out[key.strip()] = val.strip()
    return out


def _apply_config(args: argparse.Namespace) -> None:
    """Fill None-valued args from the config file (flags win over config)."""
    if not getattr(args, "config", None):
        return
    for key, val in _read_config(args.config).items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            raise ConfigError(f"unknown config key {key!r}")
        if getattr(args, attr) is None:
            setattr(args, attr, val)


def _resolve_threads(value) -> int:
    if value is not None:
        return max(1, int(value))
    env = os.environ.get("NETLASSO_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _write_metadata(out_dir: Path, entries: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "metadata.txt", "w") as fh:
        for key, val in entries.items():
            fh.write(f"{key}={val}\n")


def _load_weight_source(args, snp_ids) -> WeightMatrix:
    sources = [bool(args.gmt or args.snpmap), bool(args.pairs),
               bool(args.weights)]
    if sum(sources) != 1:
        raise ConfigError(
            "exactly one weight source required: --gmt with --snpmap, "
            "--pairs, or --weights"
        )
    if args.pairs:
        return load_pair_list(args.pairs, snp_ids)
    if args.weights:
        return load_weight_tsv(args.weights, snp_ids)
    if not (args.gmt and args.snpmap):
        raise ConfigError("--gmt and --snpmap must be given together")
    gene_sets = load_gmt(args.gmt)
    snp_map = load_snp_map(args.snpmap)
    min_size = int(args.min_set_size) if args.min_set_size else None
    max_size = int(args.max_set_size) if args.max_set_size else None
    membership = membership_from_gene_sets(snp_ids, gene_sets, snp_map,
                                           min_size=min_size,
                                           max_size=max_size)
    adjacency = build_adjacency(membership)
    return build_weights(adjacency, diag_mode=args.diag_mode or "ones",
                         binary_mode=bool(args.binary_weights))


def _tune_spec(args) -> TuneSpec:
    if (args.c is None) == (args.r is None):
        raise ConfigError("exactly one of --c and --r is required")
    return TuneSpec(
        s_target=int(args.s),
        s_slack=int(args.s_slack) if args.s_slack is not None else 1,
        c=float(args.c) if args.c is not None else None,
        r=float(args.r) if args.r is not None else None,
    )


# --- subcommands ---------------------------------------------------------------


def _cmd_simulate(args, argv) -> int:
    if not args.design:
        raise ConfigError("--design is required")
    raw = _read_config(args.design)
    try:
        design = SimDesign(
            n=int(raw["n"]),
            p=int(raw["p"]),
            maf=(raw["maf"] if raw.get("maf") == "varying"
                 else float(raw.get("maf", 0.5))),
            model=raw.get("model", "M2"),
            main_power=float(raw.get("main_power", 0.8)),
            marginal_free=raw.get("marginal_free", "0") in ("1", "true", "yes"),
            w_scenario=raw.get("w_scenario", "W1"),
            replicates=int(raw.get("replicates", 1)),
            seed=int(raw.get("seed", 0)),
            interaction_power=(float(raw["interaction_power"])
                               if "interaction_power" in raw else None),
            s_target=int(raw.get("s_target", 20)),
            s_slack=int(raw.get("s_slack", 2)),
            c=float(raw.get("c", 0.5)),
        )
    except KeyError as exc:
        raise ConfigError(f"design file missing key {exc}") from None

    threads = _resolve_threads(args.threads)
    out = Path(args.out)
    started = time.monotonic()
    truth, w, reports = run_simulation(design, threads=threads)

    snp_ids = [f"SNP{j + 1}" for j in range(design.p)]
    truth.to_tsv(snp_ids, out / "truth.tsv")
    write_weight_tsv(w, snp_ids, out / "weights.tsv")
    for rep, report in enumerate(reports):
        report.to_tsv(snp_ids, out / "reports" / f"rep_{rep + 1:04d}.tsv")
    _write_metadata(out, {
        "command": "simulate",
        "argv": " ".join(argv),
        "version": __version__,
        "numpy": np.__version__,
        "seed": design.seed,
        "replicates": design.replicates,
        "threads": threads,
        "elapsed_seconds": f"{time.monotonic() - started:.3f}",
    })
    print(f"wrote {len(reports)} replicate reports to {out}")
    return 0


def _cmd_fit(args, argv) -> int:
    for required in ("geno", "pheno", "out", "s"):
        if getattr(args, required) is None:
            raise ConfigError(f"--{required} is required")
    ds = load_dataset(args.geno, args.pheno, args.covar)
    if ds.covariates is not None:
        ds = residualize(ds)
    w = _load_weight_source(args, ds.snp_ids)
    spec = _tune_spec(args)

    out = Path(args.out)
    started = time.monotonic()
    sd = standardize(ds)
    c = spec.c if spec.c is not None else c_from_r(sd, w, spec.r)
    lam1, sol = lambda1_for_target(sd, w, spec)
    cfg = SolverConfig(lambda1=lam1, lambda2=c * lam1)
    write_solution_tsv(sol, cfg, ds.snp_ids, out / "solution.tsv")

    selected = sorted((t for t, v in sol.coeffs.items() if v != 0.0),
                      key=term_key)
    report = ols_refit(ds, selected)
    report.to_tsv(ds.snp_ids, out / "report.tsv")
    _write_metadata(out, {
        "command": "fit",
        "argv": " ".join(argv),
        "version": __version__,
        "numpy": np.__version__,
        "lambda1": fmt(lam1),
        "lambda2": fmt(c * lam1),
        "c": fmt(c),
        "selected_terms": len(selected),
        "converged": int(sol.converged),
        "cycles": sol.cycles_used,
        "elapsed_seconds": f"{time.monotonic() - started:.3f}",
    })
    print(f"selected {len(selected)} terms at lambda1={fmt(lam1)}; "
          f"wrote {out}/solution.tsv and {out}/report.tsv")
    return 0


def _cmd_meta(args, argv) -> int:
    for required in ("procedure", "cohort_list", "K", "seed", "out", "s"):
        if getattr(args, required) is None:
            raise ConfigError(f"--{required.replace('_', '-')} is required")
    cohorts = []
    with open(args.cohort_list) as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) < 2:
                raise ConfigError(
                    "cohort list lines need geno<TAB>pheno[<TAB>covar]"
                )
            covar = fields[2] if len(fields) > 2 else None
            cohorts.append(load_dataset(fields[0], fields[1], covar))
    cs = CohortSet(cohorts)
    w = _load_weight_source(args, cs.snp_ids)
    spec = _tune_spec(args)

    out = Path(args.out)
    started = time.monotonic()
    result = run_procedure(args.procedure, cs, w, spec,
                           n_splits=int(args.K), seed=int(args.seed))
    result.to_tsv(cs.snp_ids, out / "meta.tsv")
    _write_metadata(out, {
        "command": "meta",
        "argv": " ".join(argv),
        "version": __version__,
        "numpy": np.__version__,
        "procedure": args.procedure,
        "cohorts": cs.n_cohorts,
        "K": int(args.K),
        "seed": int(args.seed),
        "elapsed_seconds": f"{time.monotonic() - started:.3f}",
    })
    print(f"procedure {args.procedure} over {cs.n_cohorts} cohorts; "
          f"wrote {out}/meta.tsv")
    return 0


def _cmd_eval(args, argv) -> int:
    for required in ("results", "truth", "out"):
        if getattr(args, required) is None:
            raise ConfigError(f"--{required} is required")
    out = Path(args.out)
    started = time.monotonic()
    curves = evaluate_files(args.results, args.truth)
    curves.to_tsv(out)
    _write_metadata(out, {
        "command": "eval",
        "argv": " ".join(argv),
        "version": __version__,
        "numpy": np.__version__,
        "elapsed_seconds": f"{time.monotonic() - started:.3f}",
    })
    print(f"wrote {out}/curves.tsv and {out}/power.tsv")
    return 0


# --- parser --------------------------------------------------------------------


def _add_weight_source_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--gmt", help="gene-set GMT file")
    p.add_argument("--snpmap", help="SNP-to-gene TSV (snp_id, gene)")
    p.add_argument("--pairs", help="allowed-pair TSV (snp_id, snp_id)")
    p.add_argument("--weights", help="weight triplet TSV")
    p.add_argument("--diag-mode", choices=["ones", "reciprocal"],
                   help="diagonal weights from pathway counts (default ones)")
    p.add_argument("--binary-weights", action="store_const", const=1,
                   help="any shared pathway gives weight 1")
    p.add_argument("--min-set-size", help="drop gene sets smaller than this")
    p.add_argument("--max-set-size", help="drop gene sets larger than this")


def _add_tune_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--s", help="target number of selected main effects")
    p.add_argument("--s-slack", help="accepted deviation from --s (default 1)")
    p.add_argument("--c", help="lambda2/lambda1 ratio")
    p.add_argument("--r", help="entry-odds target used to derive c")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="netlasso",
        description="Network-guided sparse regression for SNP mains and "
                    "epistatic interactions",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run a simulation design")
    p_sim.add_argument("--design", help="design file (key=value lines)")
    p_sim.add_argument("--out", required=True, help="output directory")
    p_sim.add_argument("--threads", help="worker processes "
                       "(default: NETLASSO_THREADS or all cores)")
    p_sim.add_argument("--config", help="config file with key=value lines")
    p_sim.set_defaults(func=_cmd_simulate)

    p_fit = sub.add_parser("fit", help="fit one dataset")
    p_fit.add_argument("--geno", help="genotype TSV")
    p_fit.add_argument("--pheno", help="phenotype TSV")
    p_fit.add_argument("--covar", help="covariate TSV")
    _add_weight_source_args(p_fit)
    _add_tune_args(p_fit)
    p_fit.add_argument("--out", help="output directory")
    p_fit.add_argument("--config", help="config file with key=value lines")
    p_fit.set_defaults(func=_cmd_fit)

    p_meta = sub.add_parser("meta", help="multi-cohort combination")
    p_meta.add_argument("--procedure", choices=["A", "B", "C", "D"])
    p_meta.add_argument("--cohort-list",
                        help="TSV: geno<TAB>pheno[<TAB>covar] per cohort")
    p_meta.add_argument("--K", help="number of splits")
    p_meta.add_argument("--seed", help="random seed")
    _add_weight_source_args(p_meta)
    _add_tune_args(p_meta)
    p_meta.add_argument("--out", help="output directory")
    p_meta.add_argument("--config", help="config file with key=value lines")
    p_meta.set_defaults(func=_cmd_meta)

    p_eval = sub.add_parser("eval", help="score simulation results")
    p_eval.add_argument("--results", help="directory of replicate reports")
    p_eval.add_argument("--truth", help="truth TSV from simulate")
    p_eval.add_argument("--out", help="output directory")
    p_eval.add_argument("--config", help="config file with key=value lines")
    p_eval.set_defaults(func=_cmd_eval)

    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(
        level=os.environ.get("NETLASSO_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config(args)
        return args.func(args, argv)
    except NetlassoError as exc:
        record = exc.record()
        print(json.dumps(record), file=sys.stderr)
        out = getattr(args, "out", None)
        if out:
            try:
                Path(out).mkdir(parents=True, exist_ok=True)
                with open(Path(out) / "error.json", "w") as fh:
                    json.dump(record, fh, indent=2)
                    fh.write("\n")
            except OSError:
                pass
        return 1


if __name__ == "__main__":
    sys.exit(main())
