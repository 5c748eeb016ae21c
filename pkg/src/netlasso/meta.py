"""Multi-cohort combination procedures.

Four ways to pool evidence across cohorts, all built from the same two
bricks: split-half selection/inference z-scores and unpenalized refits
combined by inverse variance. They differ in where the selection happens
(pooled data, per cohort once, per cohort per split) and in what crosses
cohort boundaries (z-scores versus selected term sets).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from ._io import write_tsv
from .data import Dataset, residualize
from .errors import EmptyData, NonPositiveSE, SampleMismatch
from .refit import (P_HALF_FLOOR, SplitZ, _solve_for_target, ols_refit,
                    split_half_z, term_universe)
from .solver import Term, term_key, term_str
from .tuning import TuneSpec
from .weights import WeightMatrix

logger = logging.getLogger(__name__)


@dataclass
class CohortSet:
    """Cohorts measured on an identical SNP panel."""

    cohorts: list[Dataset]

    def __post_init__(self):
        if not self.cohorts:
            raise EmptyData("no cohorts")
        ids = self.cohorts[0].snp_ids
        for i, c in enumerate(self.cohorts[1:], start=2):
            if c.snp_ids != ids:
                raise SampleMismatch(f"cohort {i} SNP panel differs")

    @property
    def n_cohorts(self) -> int:
        return len(self.cohorts)

    @property
    def snp_ids(self) -> list[str]:
        return self.cohorts[0].snp_ids

    def pooled(self) -> Dataset:
        """All cohorts stacked into one dataset (ids prefixed per cohort)."""
        genotypes = np.vstack([c.genotypes for c in self.cohorts])
        y = np.concatenate([c.y for c in self.cohorts])
        sample_ids = []
        covs = None
        if all(c.covariates is not None for c in self.cohorts):
            covs = np.vstack([c.covariates for c in self.cohorts])
        for i, c in enumerate(self.cohorts):
            base = c.sample_ids or [str(r) for r in range(c.n_samples)]
            sample_ids.extend(f"c{i}:{s}" for s in base)
        return Dataset(genotypes=genotypes, snp_ids=self.snp_ids, y=y,
                       sample_ids=sample_ids, covariates=covs,
                       covariate_names=self.cohorts[0].covariate_names)


@dataclass
class MetaResult:
    """Combined per-term evidence.

    ``beta``/``se`` are present exactly when inverse-variance combination
    was part of the procedure (B and D); they are the across-splits means of
    the per-split inverse-variance estimates, 0 for terms never selected.
    ``n_splits_selected`` counts the per-split (or per split-and-cohort,
    for procedure C) contributions that were nonzero.
    """

    terms: list[Term]
    z: np.ndarray
    n_splits_selected: np.ndarray
    n_splits: int
    procedure: str
    beta: Optional[np.ndarray] = None
    se: Optional[np.ndarray] = None

    def to_tsv(self, snp_ids: list[str], path: str | Path) -> None:
        header = ["term", "z", "beta", "se", "n_splits_selected"]
        order = sorted(range(len(self.terms)),
                       key=lambda i: term_key(self.terms[i]))
        rows = []
        for i in order:
            rows.append((
                term_str(self.terms[i], snp_ids),
                float(self.z[i]),
                float(self.beta[i]) if self.beta is not None else "NA",
                float(self.se[i]) if self.se is not None else "NA",
                int(self.n_splits_selected[i]),
            ))
        write_tsv(path, header, rows,
                  comments=[f"procedure={self.procedure}",
                            f"n_splits={self.n_splits}"])


def combine_stouffer(z_rows: np.ndarray) -> np.ndarray:
    """Equal-weight z combination across rows: sum / sqrt(#rows)."""
    z = np.atleast_2d(np.asarray(z_rows, dtype=np.float64))
    return z.sum(axis=0) / math.sqrt(z.shape[0])


def combine_inverse_variance(betas: np.ndarray,
                             ses: np.ndarray) -> tuple[float, float]:
    """Precision-weighted mean and its standard error."""
    b = np.asarray(betas, dtype=np.float64)
    s = np.asarray(ses, dtype=np.float64)
    if np.any(s <= 0) or not np.all(np.isfinite(s)):
        raise NonPositiveSE("inverse-variance weights need positive SEs")
    w = 1.0 / (s * s)
    return float((w * b).sum() / w.sum()), float(math.sqrt(1.0 / w.sum()))


def _roundtrip_adjust(z_mean: np.ndarray) -> np.ndarray:
    """Bonferroni the averaged z-scores through the p-value scale.

    m = number of nonzero entries; p = 2 * (1 - Phi(|z|)),
    p_adj = min(1, p * m), back to z with the original sign. Zero entries
    stay zero. |z| never increases.
    """
    z = np.asarray(z_mean, dtype=np.float64)
    nz = z != 0.0
    m = int(nz.sum())
    if m == 0:
        return np.zeros_like(z)
    out = np.zeros_like(z)
    p_raw = 2.0 * stats.norm.sf(np.abs(z[nz]))
    p_adj = np.minimum(1.0, p_raw * m)
    out[nz] = np.sign(z[nz]) * stats.norm.isf(
        np.maximum(p_adj / 2.0, P_HALF_FLOOR))
    return out


def _split_seeds(seed: int, count: int) -> list[int]:
    rng = np.random.default_rng(seed)
    return [int(s) for s in rng.integers(0, 2**63 - 1, size=count)]


def run_procedure_a(cs: CohortSet, w: WeightMatrix, spec: TuneSpec,
                    n_splits: int, seed: int, *,
                    solver: Optional[dict] = None) -> MetaResult:
    """Pool all cohorts, average split-half z over the splits. No final
    adjustment: each split's z is already Bonferroni-adjusted."""
    pooled = cs.pooled()
    universe = term_universe(pooled.n_snps, w)
    z_acc = np.zeros(len(universe))
    selected_counts = np.zeros(len(universe), dtype=np.int64)
    hint = None
    for s in _split_seeds(seed, n_splits):
        sz = split_half_z(pooled, w, spec, s, solver=solver, hint=hint)
        hint = sz.lambda1 or None
        z_acc += sz.z
        selected_counts += sz.z != 0.0
    return MetaResult(
        terms=universe,
        z=z_acc / n_splits,
        n_splits_selected=selected_counts,
        n_splits=n_splits,
        procedure="A",
    )


def run_procedure_b(cs: CohortSet, w: WeightMatrix, spec: TuneSpec,
                    n_splits: int, seed: int, *,
                    solver: Optional[dict] = None) -> MetaResult:
    """Select once per cohort on its full data; per split, take the union
    over a random half of the cohorts and refit it on the other half,
    pooling by inverse variance; average the split z's; final adjustment."""
    if cs.n_cohorts < 2:
        raise EmptyData("procedure B needs at least 2 cohorts")
    cohorts = [residualize(c) if c.covariates is not None else c
               for c in cs.cohorts]
    universe = term_universe(cohorts[0].n_snps, w)
    pos = {t: i for i, t in enumerate(universe)}
    selections = []
    hint = None
    for c in cohorts:
        lam, sol = _solve_for_target(c, w, spec, solver, hint)
        hint = lam or None
        selections.append(sorted(
            (t for t, v in sol.coeffs.items() if v != 0.0), key=term_key))

    rng = np.random.default_rng(seed)
    m_count = cs.n_cohorts
    half = (m_count + 1) // 2
    z_acc = np.zeros(len(universe))
    beta_acc = np.zeros(len(universe))
    se_acc = np.zeros(len(universe))
    sel_counts = np.zeros(len(universe), dtype=np.int64)

    for _ in range(n_splits):
        order = rng.permutation(m_count)
        group1, group2 = order[:half], order[half:]
        union: list[Term] = sorted(
            {t for m in group1 for t in selections[m]}, key=term_key)
        if not union:
            continue
        betas = np.empty((len(group2), len(union)))
        ses = np.empty_like(betas)
        for row, m in enumerate(group2):
            report = ols_refit(cohorts[m], union)
            remap = {t: i for i, t in enumerate(report.terms)}
            for col, t in enumerate(union):
                betas[row, col] = report.beta[remap[t]]
                ses[row, col] = report.se[remap[t]]
        for col, t in enumerate(union):
            b, s = combine_inverse_variance(betas[:, col], ses[:, col])
            i = pos[t]
            z_acc[i] += b / s
            beta_acc[i] += b
            se_acc[i] += s
            sel_counts[i] += 1

    z_mean = z_acc / n_splits
    return MetaResult(
        terms=universe,
        z=_roundtrip_adjust(z_mean),
        n_splits_selected=sel_counts,
        n_splits=n_splits,
        procedure="B",
        beta=np.divide(beta_acc, sel_counts, out=np.zeros_like(beta_acc),
                       where=sel_counts > 0),
        se=np.divide(se_acc, sel_counts, out=np.zeros_like(se_acc),
                     where=sel_counts > 0),
    )


def run_procedure_c(cs: CohortSet, w: WeightMatrix, spec: TuneSpec,
                    n_splits: int, seed: int, *,
                    solver: Optional[dict] = None) -> MetaResult:
    """Each cohort runs its own split-half averaging; cohort z's combine by
    Stouffer; final adjustment."""
    if cs.n_cohorts < 2:
        raise EmptyData("procedure C needs at least 2 cohorts")
    universe = term_universe(cs.cohorts[0].n_snps, w)
    per_cohort = np.zeros((cs.n_cohorts, len(universe)))
    sel_counts = np.zeros(len(universe), dtype=np.int64)
    seeds = _split_seeds(seed, cs.n_cohorts)
    hint = None
    for m, cohort in enumerate(cs.cohorts):
        z_acc = np.zeros(len(universe))
        for s in _split_seeds(seeds[m], n_splits):
            sz = split_half_z(cohort, w, spec, s, solver=solver, hint=hint)
            hint = sz.lambda1 or None
            z_acc += sz.z
            sel_counts += sz.z != 0.0
        per_cohort[m] = z_acc / n_splits
    z_comb = combine_stouffer(per_cohort)
    return MetaResult(
        terms=universe,
        z=_roundtrip_adjust(z_comb),
        n_splits_selected=sel_counts,
        n_splits=n_splits,
        procedure="C",
    )


def run_procedure_d(cs: CohortSet, w: WeightMatrix, spec: TuneSpec,
                    n_splits: int, seed: int, *,
                    solver: Optional[dict] = None) -> MetaResult:
    """Per split: every cohort selects on its own first half; the union is
    refit on every cohort's second half and pooled by inverse variance;
    average the split z's; final adjustment."""
    if cs.n_cohorts < 2:
        raise EmptyData("procedure D needs at least 2 cohorts")
    cohorts = [residualize(c) if c.covariates is not None else c
               for c in cs.cohorts]
    universe = term_universe(cohorts[0].n_snps, w)
    pos = {t: i for i, t in enumerate(universe)}
    rng = np.random.default_rng(seed)

    z_acc = np.zeros(len(universe))
    beta_acc = np.zeros(len(universe))
    se_acc = np.zeros(len(universe))
    sel_counts = np.zeros(len(universe), dtype=np.int64)

    hints: list[Optional[float]] = [None] * len(cohorts)
    for _ in range(n_splits):
        halves = []
        union_set: set[Term] = set()
        for m, cohort in enumerate(cohorts):
            n = cohort.n_samples
            perm = rng.permutation(n)
            n1 = (n + 1) // 2
            d_sel = cohort.subset_samples(perm[:n1])
            d_inf = cohort.subset_samples(perm[n1:])
            lam, sol = _solve_for_target(d_sel, w, spec, solver, hints[m])
            hints[m] = lam or None
            union_set.update(
                t for t, v in sol.coeffs.items() if v != 0.0)
            halves.append(d_inf)
        union = sorted(union_set, key=term_key)
        if not union:
            continue
        betas = np.empty((len(halves), len(union)))
        ses = np.empty_like(betas)
        for row, d_inf in enumerate(halves):
            report = ols_refit(d_inf, union)
            remap = {t: i for i, t in enumerate(report.terms)}
            for col, t in enumerate(union):
                betas[row, col] = report.beta[remap[t]]
                ses[row, col] = report.se[remap[t]]
        for col, t in enumerate(union):
            b, s = combine_inverse_variance(betas[:, col], ses[:, col])
            i = pos[t]
            z_acc[i] += b / s
            beta_acc[i] += b
            se_acc[i] += s
            sel_counts[i] += 1

    z_mean = z_acc / n_splits
    return MetaResult(
        terms=universe,
        z=_roundtrip_adjust(z_mean),
        n_splits_selected=sel_counts,
        n_splits=n_splits,
        procedure="D",
        beta=np.divide(beta_acc, sel_counts, out=np.zeros_like(beta_acc),
                       where=sel_counts > 0),
        se=np.divide(se_acc, sel_counts, out=np.zeros_like(se_acc),
                     where=sel_counts > 0),
    )


PROCEDURES = {
    "A": run_procedure_a,
    "B": run_procedure_b,
    "C": run_procedure_c,
    "D": run_procedure_d,
}


def run_procedure(name: str, cs: CohortSet, w: WeightMatrix, spec: TuneSpec,
                  n_splits: int, seed: int, *,
                  solver: Optional[dict] = None) -> MetaResult:
    if name not in PROCEDURES:
        raise EmptyData(f"unknown procedure {name!r}")
    return PROCEDURES[name](cs, w, spec, n_splits, seed, solver=solver)
