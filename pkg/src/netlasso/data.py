"""Data containers, standardization, and TSV loaders.

A :class:`Dataset` holds raw dosages and the trait; :func:`standardize`
produces the :class:`StandardizedDesign` every downstream fit works on:
each genotype column and the trait are centered and scaled to unit
Euclidean norm, with the centering/scaling constants kept for
back-transforming fitted coefficients to raw units.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import (
    ConstantColumn,
    EmptyData,
    IndexOutOfRange,
    InvalidDosage,
    RankDeficientCovariates,
    SampleMismatch,
)

# Norm below which a centered column counts as constant.
_CONSTANT_TOL = 1e-12


@dataclass
class Dataset:
    """Raw aligned data: dosages in [0, 2], trait, optional covariates."""

    genotypes: np.ndarray          # (n, p) float64
    snp_ids: list[str]
    y: np.ndarray                  # (n,)
    sample_ids: Optional[list[str]] = None
    covariates: Optional[np.ndarray] = None   # (n, q)
    covariate_names: Optional[list[str]] = None

    @property
    def n_samples(self) -> int:
        return self.genotypes.shape[0]

    @property
    def n_snps(self) -> int:
        return self.genotypes.shape[1]

    def subset_samples(self, idx: np.ndarray) -> "Dataset":
        """Row-subset (used by split-half and cohort procedures)."""
        return Dataset(
            genotypes=self.genotypes[idx],
            snp_ids=self.snp_ids,
            y=self.y[idx],
            sample_ids=[self.sample_ids[i] for i in idx] if self.sample_ids else None,
            covariates=self.covariates[idx] if self.covariates is not None else None,
            covariate_names=self.covariate_names,
        )

    def subset_snps(self, cols: np.ndarray) -> "Dataset":
        """Column-subset (used by the stage-wise baseline)."""
        return Dataset(
            genotypes=self.genotypes[:, cols],
            snp_ids=[self.snp_ids[j] for j in cols],
            y=self.y,
            sample_ids=self.sample_ids,
            covariates=self.covariates,
            covariate_names=self.covariate_names,
        )


@dataclass
class StandardizedDesign:
    """Centered, unit-norm design.

    ``x[:, j] = (genotypes[:, j] - x_mean[j]) / x_norm[j]`` with
    ``||x[:, j]|| = 1``, and likewise for ``y``. ``x`` is Fortran-ordered so
    column slices are contiguous in the solver kernels.
    """

    x: np.ndarray                  # (n, p), F-ordered, unit-norm columns
    y: np.ndarray                  # (n,), unit norm
    x_mean: np.ndarray             # (p,)
    x_norm: np.ndarray             # (p,) norms of the centered columns
    y_mean: float
    y_norm: float
    snp_ids: list[str] = field(default_factory=list)

    @property
    def n_samples(self) -> int:
        return self.x.shape[0]

    @property
    def n_snps(self) -> int:
        return self.x.shape[1]


def standardize(ds: Dataset) -> StandardizedDesign:
    """Center and scale every genotype column and the trait to unit norm.

    Raises
    ------
    EmptyData
        if there are no samples or no SNPs.
    ConstantColumn
        if any genotype column (or the trait) is constant after centering.

    Applying this to data that is already centered and unit-norm leaves it
    unchanged up to 1e-12.
    """
    g = np.asarray(ds.genotypes, dtype=np.float64)
    y = np.asarray(ds.y, dtype=np.float64)
    if g.size == 0 or y.size == 0:
        raise EmptyData("dataset has no samples or no SNPs")
    if not np.all(np.isfinite(g)) or not np.all(np.isfinite(y)):
        raise InvalidDosage("non-finite values in genotypes or trait")

    means = g.mean(axis=0)
    centered = g - means
    norms = np.sqrt((centered ** 2).sum(axis=0))
    bad = np.nonzero(norms <= _CONSTANT_TOL)[0]
    if bad.size:
        raise ConstantColumn(ds.snp_ids[bad[0]] if ds.snp_ids else str(bad[0]))

    y_mean = float(y.mean())
    yc = y - y_mean
    y_norm = float(np.sqrt((yc ** 2).sum()))
    if y_norm <= _CONSTANT_TOL:
        raise ConstantColumn("phenotype")

    x = np.asfortranarray(centered / norms)
    return StandardizedDesign(
        x=x,
        y=yc / y_norm,
        x_mean=means,
        x_norm=norms,
        y_mean=y_mean,
        y_norm=y_norm,
        snp_ids=list(ds.snp_ids),
    )


def interaction_column(sd: StandardizedDesign, j: int, k: int) -> np.ndarray:
    """Elementwise product of standardized columns j and k.

    The product is *not* re-centered or re-scaled; its norm shows up
    explicitly in the interaction penalty terms. Symmetric in (j, k).

    Raises IndexOutOfRange for invalid indices or j == k (self-interactions
    are not part of the model).
    """
    p = sd.n_snps
    if not (0 <= j < p and 0 <= k < p):
        raise IndexOutOfRange(f"pair ({j}, {k}) outside [0, {p})")
    if j == k:
        raise IndexOutOfRange(f"self-interaction ({j}, {j}) is not defined")
    return sd.x[:, j] * sd.x[:, k]


def product_scale(sd: StandardizedDesign, j: int, k: int) -> float:
    """Root-mean-square of the centered dosage product for pair (j, k).

    Equals ``||x_j * x_k|| * x_norm[j] * x_norm[k] / sqrt(n)`` and estimates
    the product of the two SNPs' standard deviations (0.5 for two
    independent Binomial(2, 0.5) dosages). Used to translate between the
    unit-norm column scale the solver works on and the per-genotype-unit
    scale that the main-vs-interaction penalty ratio is defined on.
    """
    q = interaction_column(sd, j, k)
    n = sd.n_samples
    return float(np.linalg.norm(q) * sd.x_norm[j] * sd.x_norm[k] / np.sqrt(n))


def residualize(ds: Dataset) -> Dataset:
    """Replace the trait by its residuals on [intercept, covariates].

    The returned dataset has no covariate block: downstream fits see the
    adjusted trait only. The residuals are orthogonal to every covariate
    column. Raises RankDeficientCovariates if [1, covariates] is column
    rank deficient.
    """
    if ds.covariates is None:
        return ds
    n = ds.n_samples
    c = np.asarray(ds.covariates, dtype=np.float64)
    design = np.column_stack([np.ones(n), c])
    rank = np.linalg.matrix_rank(design)
    if rank < design.shape[1]:
        raise RankDeficientCovariates(
            f"covariate design has rank {rank} < {design.shape[1]}"
        )
    coef, *_ = np.linalg.lstsq(design, ds.y, rcond=None)
    resid = ds.y - design @ coef
    return Dataset(
        genotypes=ds.genotypes,
        snp_ids=ds.snp_ids,
        y=resid,
        sample_ids=ds.sample_ids,
        covariates=None,
        covariate_names=None,
    )


# --- TSV loaders -----------------------------------------------------------

def _read_table(path: str | Path) -> tuple[list[str], list[list[str]]]:
    header: list[str] | None = None
    rows: list[list[str]] = []
    with open(path) as fh:
        for raw in fh:
            line = raw.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            fields = line.split("\t")
            if header is None:
                header = fields
            else:
                rows.append(fields)
    if header is None:
        raise EmptyData(f"{path}: empty file")
    return header, rows


def load_genotypes(path: str | Path) -> tuple[np.ndarray, list[str]]:
    """Genotype TSV: header row of SNP ids, one dosage row per sample.

    Dosages must be finite decimals in [0, 2]; anything else (including
    missing fields) is rejected.
    """
    snp_ids, rows = _read_table(path)
    if not rows:
        raise EmptyData(f"{path}: no sample rows")
    p = len(snp_ids)
    mat = np.empty((len(rows), p))
    for i, fields in enumerate(rows):
        if len(fields) != p:
            raise InvalidDosage(
                f"{path}: row {i + 1} has {len(fields)} fields, expected {p}"
            )
        try:
            vals = [float(v) for v in fields]
        except ValueError as exc:
            raise InvalidDosage(f"{path}: row {i + 1}: {exc}") from None
        mat[i] = vals
    if not np.all(np.isfinite(mat)):
        raise InvalidDosage(f"{path}: non-finite dosage")
    if mat.min() < 0.0 or mat.max() > 2.0:
        raise InvalidDosage(f"{path}: dosages outside [0, 2]")
    return mat, snp_ids


def load_phenotype(path: str | Path) -> tuple[list[str], np.ndarray]:
    """Phenotype TSV: columns sample_id, value."""
    header, rows = _read_table(path)
    if len(header) != 2:
        raise SampleMismatch(f"{path}: expected 2 columns, got {len(header)}")
    ids = [r[0] for r in rows]
    try:
        y = np.array([float(r[1]) for r in rows])
    except (ValueError, IndexError) as exc:
        raise InvalidDosage(f"{path}: bad phenotype value: {exc}") from None
    if len(set(ids)) != len(ids):
        raise SampleMismatch(f"{path}: duplicate sample ids")
    return ids, y


def load_covariates(path: str | Path) -> tuple[list[str], np.ndarray, list[str]]:
    """Covariate TSV: sample_id column followed by q covariate columns."""
    header, rows = _read_table(path)
    if len(header) < 2:
        raise SampleMismatch(f"{path}: no covariate columns")
    names = header[1:]
    ids = [r[0] for r in rows]
    if len(set(ids)) != len(ids):
        raise SampleMismatch(f"{path}: duplicate sample ids")
    try:
        mat = np.array([[float(v) for v in r[1:]] for r in rows])
    except ValueError as exc:
        raise InvalidDosage(f"{path}: bad covariate value: {exc}") from None
    if mat.shape[1] != len(names):
        raise SampleMismatch(f"{path}: ragged covariate rows")
    return ids, mat, names


def load_dataset(geno_path: str | Path, pheno_path: str | Path,
                 covar_path: str | Path | None = None) -> Dataset:
    """Assemble a Dataset from genotype/phenotype (and covariate) TSVs.

    Genotype rows pair positionally with phenotype rows (the genotype file
    carries no id column); covariates are joined to phenotype sample ids,
    and any missing, extra, or reordered id is an error.
    """
    geno, snp_ids = load_genotypes(geno_path)
    ids, y = load_phenotype(pheno_path)
    if geno.shape[0] != len(ids):
        raise SampleMismatch(
            f"genotype rows ({geno.shape[0]}) != phenotype rows ({len(ids)})"
        )
    covs = None
    cov_names = None
    if covar_path is not None:
        cov_ids, cov_mat, cov_names = load_covariates(covar_path)
        if cov_ids != ids:
            raise SampleMismatch(
                "covariate sample ids do not match phenotype sample ids"
            )
        covs = cov_mat
    return Dataset(
        genotypes=geno,
        snp_ids=snp_ids,
        y=y,
        sample_ids=ids,
        covariates=covs,
        covariate_names=cov_names,
    )
