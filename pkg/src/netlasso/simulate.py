"""Simulation designs, trait generation, baselines, and evaluation.

Three genetic architectures share 20 true main-effect SNPs:

* M1: mains only.
* M2: mains plus all 10 pairwise interactions among the first 5 SNPs.
* M3: mains plus 10 disjoint interactions (SNP1xSNP2, ..., SNP19xSNP20).

Weight scenarios W1-W6 express what the analyst is assumed to know, from
exactly the true pairs (W1) up to large or wrongly-structured candidate
sets. Effect sizes are calibrated to single-term Wald power at nominal
alpha, and the marginal-free switch rebuilds the mains of interacting SNPs
so their population marginal slopes are exactly zero: a single-SNP scan
has nothing to find, only the interaction terms carry signal.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from ._io import write_tsv, read_tsv
from .data import Dataset, standardize
from .errors import EmptyData, InvalidPower, ModelTooLarge
from .refit import FitReport, ols_refit, select_terms
from .solver import (
    Inter,
    Main,
    SolverConfig,
    Term,
    fit,
    prepare_problem,
    term_key,
)
from .tuning import TuneSpec
from .weights import WeightMatrix, from_pairs

logger = logging.getLogger(__name__)

N_TRUE_MAINS = 20
MAF_LEVELS = (0.1, 0.2, 0.3, 0.4, 0.5)


@dataclass
class SimDesign:
    """One simulation configuration.

    ``maf`` is either a number (shared by all SNPs) or "varying": the 20
    true SNPs then cycle through 0.1..0.5 in blocks (SNP1 and SNP6 at 0.1,
    SNP5 and SNP10 at 0.5, and so on) and every other SNP draws one of the
    five levels at random. ``interaction_power`` defaults to
    ``main_power``. The selection protocol fields (s_target, s_slack, c)
    are what the fitting harness uses on each replicate.
    """

    n: int
    p: int
    maf: float | str
    model: str
    main_power: float = 0.80
    marginal_free: bool = False
    w_scenario: str = "W1"
    replicates: int = 1
    seed: int = 0
    interaction_power: Optional[float] = None
    s_target: int = 20
    s_slack: int = 2
    c: float = 0.5

    def __post_init__(self):
        if self.model not in ("M1", "M2", "M3"):
            raise ModelTooLarge(f"unknown model {self.model!r}")
        if self.w_scenario not in ("W1", "W2", "W3", "W4", "W5", "W6"):
            raise EmptyData(f"unknown weight scenario {self.w_scenario!r}")
        if self.p < N_TRUE_MAINS:
            raise ModelTooLarge(
                f"models need at least {N_TRUE_MAINS} SNPs, got {self.p}"
            )
        if isinstance(self.maf, str) and self.maf != "varying":
            raise InvalidPower(f"maf must be a number or 'varying'")


@dataclass
class Truth:
    """What the generator actually planted."""

    p: int
    true_mains: list[int]
    true_pairs: list[tuple[int, int]]

    @property
    def interacting_mains(self) -> set[int]:
        return {j for pair in self.true_pairs for j in pair}

    def to_tsv(self, snp_ids: list[str], path: str | Path) -> None:
        rows = [("main", snp_ids[j]) for j in self.true_mains]
        rows += [("pair", f"{snp_ids[j]}:{snp_ids[k]}")
                 for j, k in self.true_pairs]
        write_tsv(path, ["kind", "term"], rows, comments=[f"p={self.p}"])


def read_truth_tsv(path: str | Path) -> tuple[int, list[str], list[str]]:
    """Read a truth file; returns (p, main term strings, pair term strings)."""
    header, rows, comments = read_tsv(path)
    p = 0
    for c in comments:
        if c.startswith("p="):
            p = int(c[2:])
    mains = [r[1] for r in rows if r[0] == "main"]
    pairs = [r[1] for r in rows if r[0] == "pair"]
    if p <= 0:
        raise EmptyData(f"{path}: missing p= comment")
    return p, mains, pairs


def model_pairs(model: str) -> list[tuple[int, int]]:
    """True interacting pairs of each architecture (0-based indices)."""
    if model == "M1":
        return []
    if model == "M2":
        return [(j, k) for j in range(5) for k in range(j + 1, 5)]
    return [(2 * i, 2 * i + 1) for i in range(10)]


def true_structure(design: SimDesign) -> Truth:
    return Truth(
        p=design.p,
        true_mains=list(range(N_TRUE_MAINS)),
        true_pairs=model_pairs(design.model),
    )


def maf_vector(design: SimDesign, rng: np.random.Generator) -> np.ndarray:
    """Per-SNP minor-allele frequencies for a design."""
    if design.maf != "varying":
        return np.full(design.p, float(design.maf))
    maf = np.empty(design.p)
    for j in range(N_TRUE_MAINS):
        maf[j] = MAF_LEVELS[j % 5]
    if design.p > N_TRUE_MAINS:
        maf[N_TRUE_MAINS:] = rng.choice(
            MAF_LEVELS, size=design.p - N_TRUE_MAINS)
    return maf


def effect_for_power(n: int, maf: float, power: float, alpha: float = 0.05,
                     is_interaction: bool = False,
                     maf2: Optional[float] = None) -> float:
    """Coefficient giving the requested single-term Wald power.

    Mains: beta = (z_{1-alpha/2} + z_power) / sqrt(n * 2 maf (1 - maf)).
    Interactions use the product-variance analogue, replacing the dosage
    variance by the product of the two dosage variances (maf2 defaults to
    maf), which calibrates a single regression of the trait on the centered
    dosage product.
    """
    if not (0.0 < power < 1.0):
        raise InvalidPower(f"power must be in (0, 1), got {power}")
    if not (0.0 < alpha < 1.0):
        raise InvalidPower(f"alpha must be in (0, 1), got {alpha}")
    if not (0.0 < maf < 1.0) or (maf2 is not None and not 0.0 < maf2 < 1.0):
        raise InvalidPower("maf must be in (0, 1)")
    if n < 2:
        raise InvalidPower("n must be at least 2")
    z = stats.norm.isf(alpha / 2.0) + stats.norm.ppf(power)
    var1 = 2.0 * maf * (1.0 - maf)
    if not is_interaction:
        return float(z / math.sqrt(n * var1))
    m2 = maf if maf2 is None else maf2
    var2 = 2.0 * m2 * (1.0 - m2)
    return float(z / math.sqrt(n * var1 * var2))


def gen_genotypes(design: SimDesign, rng: np.random.Generator,
                  maf: Optional[np.ndarray] = None) -> np.ndarray:
    """Binomial(2, maf_j) dosage matrix (n, p)."""
    if maf is None:
        maf = maf_vector(design, rng)
    return rng.binomial(2, maf, size=(design.n, design.p)).astype(np.float64)


@dataclass
class TraitBetas:
    """Planted coefficients, on raw dosage / dosage-product scale."""

    main: dict[int, float] = field(default_factory=dict)
    pairs: dict[tuple[int, int], float] = field(default_factory=dict)


def design_betas(design: SimDesign, maf: np.ndarray) -> TraitBetas:
    """Calibrated coefficients for a design.

    Mains get the design's main_power. Interactions get interaction_power
    (main_power when unset) through the product-variance analogue, using
    each pair's own allele frequencies. With marginal_free set, every
    interaction coefficient is negated and each interacting SNP's main
    coefficient is rebuilt as |beta_pair| * sum of partners' mean dosages,
    which zeroes that SNP's population marginal slope exactly;
    non-interacting true mains are untouched.
    """
    truth = true_structure(design)
    betas = TraitBetas()
    for j in truth.true_mains:
        betas.main[j] = effect_for_power(design.n, float(maf[j]),
                                         design.main_power)
    ipower = design.interaction_power or design.main_power
    for j, k in truth.true_pairs:
        betas.pairs[(j, k)] = effect_for_power(
            design.n, float(maf[j]), ipower,
            is_interaction=True, maf2=float(maf[k]))

    if design.marginal_free and truth.true_pairs:
        for j, k in truth.true_pairs:
            betas.pairs[(j, k)] = -abs(betas.pairs[(j, k)])
        for j in truth.interacting_mains:
            cancel = 0.0
            for (a, b), bv in betas.pairs.items():
                if j == a:
                    cancel += abs(bv) * 2.0 * float(maf[b])
                elif j == b:
                    cancel += abs(bv) * 2.0 * float(maf[a])
            betas.main[j] = cancel
    return betas


def simulate_trait(genotypes: np.ndarray, design: SimDesign,
                   betas: TraitBetas, rng: np.random.Generator) -> np.ndarray:
    """Trait = planted mains + planted raw-product interactions + N(0,1)."""
    n, p = genotypes.shape
    if p < design.p:
        raise ModelTooLarge(
            f"genotype matrix has {p} SNPs, design needs {design.p}"
        )
    y = rng.standard_normal(n)
    for j, b in betas.main.items():
        if b != 0.0:
            y += b * genotypes[:, j]
    for (j, k), b in betas.pairs.items():
        if b != 0.0:
            y += b * genotypes[:, j] * genotypes[:, k]
    return y


# --- weight scenarios -----------------------------------------------------------

def _pairs_within(groups: Sequence[Sequence[int]]) -> set[tuple[int, int]]:
    out: set[tuple[int, int]] = set()
    for g in groups:
        g = sorted(set(g))
        for a in range(len(g)):
            for b in range(a + 1, len(g)):
                out.add((g[a], g[b]))
    return out


def _noise_pathways(base_groups: list[list[int]], design: SimDesign,
                    rng: np.random.Generator,
                    n_pathways: int = 20, extra_snps: int = 160) -> set:
    """Pad to n_pathways groups, scatter extra SNPs, and pool the pairs.

    The extra SNPs are drawn from outside the base groups and each lands in
    one uniformly chosen pathway (base pathways included), so noise pairs
    can also attach to true SNPs.
    """
    groups = [list(g) for g in base_groups]
    while len(groups) < n_pathways:
        groups.append([])
    used = {j for g in base_groups for j in g}
    pool = np.array(sorted(set(range(design.p)) - used))
    if len(pool) < extra_snps:
        raise ModelTooLarge(
            f"p={design.p} too small for {extra_snps} noise SNPs"
        )
    chosen = rng.choice(pool, size=extra_snps, replace=False)
    assignment = rng.integers(0, len(groups), size=extra_snps)
    for snp, g in zip(chosen, assignment):
        groups[g].append(int(snp))
    return _pairs_within(groups)


def scenario_weights(design: SimDesign,
                     rng: np.random.Generator) -> WeightMatrix:
    """Binary weight matrix for W1-W6 (unit diagonal).

    W1: exactly the true pairs. W2: all pairs among the 20 true SNPs.
    W3/W4: W1/W2 plus noise pathways (padded to 20 pathways, 160 extra
    SNPs scattered over all of them). W5: all pairs among SNPs 1-40.
    W6: pairs within {1-10, 21-30} and within {11-20, 31-40}, a
    misgrouped candidate set that still contains the true pairs but mixes
    each block of true SNPs with a block of noise SNPs.
    """
    s = design.w_scenario
    if s == "W1":
        pairs = set(model_pairs(design.model))
        if not pairs:
            raise EmptyData("W1 has no pairs under model M1")
        return from_pairs(pairs, design.p)
    if s == "W2":
        return from_pairs(_pairs_within([range(N_TRUE_MAINS)]), design.p)
    if s == "W3":
        if design.model == "M2":
            base = [[0, 1, 2, 3, 4]]
        elif design.model == "M3":
            base = [[2 * i, 2 * i + 1] for i in range(10)]
        else:
            base = []
        pairs = set(model_pairs(design.model))
        pairs |= _noise_pathways(base, design, rng)
        return from_pairs(pairs, design.p)
    if s == "W4":
        base = [list(range(N_TRUE_MAINS))]
        pairs = _pairs_within(base) | _noise_pathways(base, design, rng)
        return from_pairs(pairs, design.p)
    if s == "W5":
        if design.p < 40:
            raise ModelTooLarge("W5 needs p >= 40")
        return from_pairs(_pairs_within([range(40)]), design.p)
    if design.p < 40:
        raise ModelTooLarge("W6 needs p >= 40")
    groups = [list(range(0, 10)) + list(range(20, 30)),
              list(range(10, 20)) + list(range(30, 40))]
    return from_pairs(_pairs_within(groups), design.p)


# --- per-replicate pipeline -------------------------------------------------------

def make_replicate(design: SimDesign, rep: int) -> tuple[Dataset, Truth]:
    """Generate one replicate's dataset, deterministically from the seed."""
    rng = np.random.default_rng([design.seed, 1, rep])
    maf = maf_vector(design, rng)
    geno = gen_genotypes(design, rng, maf)
    betas = design_betas(design, maf)
    y = simulate_trait(geno, design, betas, rng)
    snp_ids = [f"SNP{j + 1}" for j in range(design.p)]
    ds = Dataset(genotypes=geno, snp_ids=snp_ids, y=y,
                 sample_ids=[f"s{i + 1}" for i in range(design.n)])
    return ds, true_structure(design)


def design_weights(design: SimDesign) -> WeightMatrix:
    """The scenario weight matrix, drawn once per design from its seed."""
    rng = np.random.default_rng([design.seed, 2])
    return scenario_weights(design, rng)


def run_replicate(design: SimDesign, w: WeightMatrix, rep: int) -> FitReport:
    """Simulate, select (tuning + screening), refit, and rank one replicate."""
    ds, _ = make_replicate(design, rep)
    spec = TuneSpec(s_target=design.s_target, s_slack=design.s_slack,
                    c=design.c)
    selected = select_terms(ds, w, spec)
    return ols_refit(ds, selected)


def _replicate_worker(args) -> FitReport:
    design, w, rep = args
    return run_replicate(design, w, rep)


def run_simulation(design: SimDesign,
                   threads: int = 1) -> tuple[Truth, WeightMatrix,
                                              list[FitReport]]:
    """All replicates of a design; replicate order is deterministic."""
    w = design_weights(design)
    jobs = [(design, w, rep) for rep in range(design.replicates)]
    if threads > 1 and design.replicates > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            reports = list(pool.map(_replicate_worker, jobs))
    else:
        reports = [_replicate_worker(j) for j in jobs]
    return true_structure(design), w, reports


# --- stage-wise baseline -----------------------------------------------------------

def _lambda_for_total(ds: Dataset, w: WeightMatrix, target: int, slack: int,
                      c: float, solver: Optional[dict] = None):
    """Bisection on the *total* selected-term count (baseline stage 2).

    Returns the solution with count closest to the target if the window
    cannot be hit exactly.
    """
    sd = standardize(ds)
    prob = prepare_problem(sd, w)
    overrides = dict(solver or {})
    scores = np.abs(sd.y @ sd.x)
    hi = float(np.max(scores / np.asarray(w.diag)))
    lo = hi * 1e-4
    warm = None

    def probe(lam1):
        nonlocal warm
        cfg = SolverConfig(lambda1=lam1, lambda2=c * lam1, **overrides)
        sol = fit(sd, w, cfg, warm_start=warm, prob=prob)
        warm = sol.coeffs
        return sum(1 for v in sol.coeffs.values() if v != 0.0), sol

    for _ in range(4):
        n_lo, sol_lo = probe(lo)
        if n_lo >= target:
            break
        lo *= 0.1
    best = (abs(n_lo - target), sol_lo)
    if abs(n_lo - target) <= slack:
        return sol_lo
    if n_lo < target:
        return sol_lo   # even the weakest penalty selects too few
    while hi - lo > 1e-6 * hi:
        mid = 0.5 * (lo + hi)
        n_mid, sol_mid = probe(mid)
        if abs(n_mid - target) < best[0]:
            best = (abs(n_mid - target), sol_mid)
        if abs(n_mid - target) <= slack:
            return sol_mid
        if n_mid > target:
            lo = mid
        else:
            hi = mid
    return best[1]


def stagewise_baseline(ds: Dataset, s1: int, s2: int, *, c: float = 0.5,
                       solver: Optional[dict] = None) -> FitReport:
    """Mains-first baseline: select s1 mains, then allow only their pairs.

    Stage 1 fits with every interaction excluded and tunes to s1 main
    effects. Stage 2 restricts the design to the stage-1 SNPs, allows all
    of their pairwise products, and tunes to s2 total terms. The selected
    terms are refit by OLS on the full data and ranked by |t|.
    """
    p = ds.n_snps
    w_empty = WeightMatrix(p=p, diag=np.ones(p), pair_weight={})
    spec1 = TuneSpec(s_target=s1, s_slack=1, c=c)
    mains = [t.j for t in select_terms(ds, w_empty, spec1, solver=solver)
             if isinstance(t, Main)]
    if not mains:
        return ols_refit(ds, [])
    keep = np.array(sorted(mains))
    sub = ds.subset_snps(keep)
    m = len(keep)
    if m >= 2:
        w_all = from_pairs([(a, b) for a in range(m)
                            for b in range(a + 1, m)], m)
        sol = _lambda_for_total(sub, w_all, s2, 1, c, solver)
        terms: list[Term] = []
        for t, v in sol.coeffs.items():
            if v == 0.0:
                continue
            if isinstance(t, Main):
                terms.append(Main(int(keep[t.j])))
            else:
                terms.append(Inter(int(keep[t.j]), int(keep[t.k])))
    else:
        terms = [Main(int(keep[0]))]
    return ols_refit(ds, sorted(terms, key=term_key))


# --- evaluation ---------------------------------------------------------------------

@dataclass
class EvalCurves:
    """Rank-threshold curves plus the main-effect power table."""

    thresholds: list[int]
    one_minus_fdr: np.ndarray
    recall: np.ndarray
    power_table: dict[str, tuple[int, float]]   # category -> (size, rate)

    def to_tsv(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        write_tsv(out / "curves.tsv",
                  ["threshold", "one_minus_fdr", "recall"],
                  [(t, float(self.one_minus_fdr[i]), float(self.recall[i]))
                   for i, t in enumerate(self.thresholds)])
        write_tsv(out / "power.tsv", ["category", "size", "rate"],
                  [(name, size, float(rate))
                   for name, (size, rate) in self.power_table.items()])


POWER_CATEGORIES = ("with_interaction", "without_interaction", "non_active")


def evaluate(reports: Sequence[FitReport], truth: Truth,
             max_threshold: int = 10) -> EvalCurves:
    """Average selection quality over replicates.

    For each rank threshold T the interaction terms of a replicate are
    taken in |t| order; with m selected interactions the top min(T, m) are
    compared against the true pairs. 1-FDR divides true discoveries by
    min(T, m), counting a replicate with no selected interactions as 1.0
    (no discoveries, no false ones); recall divides by the number of true
    pairs. The power table reports the selected fraction per main-effect
    category: true mains that interact, true mains that do not, and
    everything else (the sizes partition p).
    """
    true_pairs = {Inter(j, k) for j, k in truth.true_pairs}
    thresholds = list(range(1, max_threshold + 1))
    fdr_acc = np.zeros(len(thresholds))
    rec_acc = np.zeros(len(thresholds))

    interacting = truth.interacting_mains
    plain = [j for j in truth.true_mains if j not in interacting]
    sizes = {
        "with_interaction": len(interacting),
        "without_interaction": len(plain),
        "non_active": truth.p - len(interacting) - len(plain),
    }
    cat_acc = {name: 0.0 for name in POWER_CATEGORIES}

    for report in reports:
        order = np.argsort(report.rank)
        ranked_pairs = [report.terms[i] for i in order
                        if isinstance(report.terms[i], Inter)]
        m = len(ranked_pairs)
        for i, t in enumerate(thresholds):
            eff = min(t, m)
            if eff == 0:
                fdr_acc[i] += 1.0
                continue
            hits = sum(1 for term in ranked_pairs[:eff] if term in true_pairs)
            fdr_acc[i] += hits / eff
            if true_pairs:
                rec_acc[i] += hits / len(true_pairs)

        selected_mains = {t.j for t in report.terms if isinstance(t, Main)}
        if interacting:
            cat_acc["with_interaction"] += (
                len(selected_mains & interacting) / len(interacting))
        if plain:
            cat_acc["without_interaction"] += (
                len(selected_mains & set(plain)) / len(plain))
        if sizes["non_active"]:
            others = selected_mains - interacting - set(plain)
            cat_acc["non_active"] += len(others) / sizes["non_active"]

    n_rep = max(1, len(reports))
    return EvalCurves(
        thresholds=thresholds,
        one_minus_fdr=fdr_acc / n_rep,
        recall=rec_acc / n_rep,
        power_table={name: (sizes[name], cat_acc[name] / n_rep)
                     for name in POWER_CATEGORIES},
    )


def evaluate_files(results_dir: str | Path, truth_path: str | Path,
                   max_threshold: int = 10) -> EvalCurves:
    """String-keyed evaluation over serialized FitReport TSVs."""
    p, main_names, pair_names = read_truth_tsv(truth_path)
    report_paths = sorted(Path(results_dir).glob("*.tsv"))
    if not report_paths:
        raise EmptyData(f"{results_dir}: no report TSVs")

    name_to_idx: dict[str, int] = {}

    def snp_index(name: str) -> int:
        return name_to_idx.setdefault(name, len(name_to_idx))

    def parse(termtext: str) -> Term:
        if ":" in termtext:
            a, b = termtext.split(":", 1)
            return Inter(snp_index(a), snp_index(b))
        return Main(snp_index(termtext))

    true_main_idx = [snp_index(n) for n in main_names]
    true_pair_idx = []
    for name in pair_names:
        a, b = name.split(":", 1)
        t = Inter(snp_index(a), snp_index(b))
        true_pair_idx.append((t.j, t.k))
    truth = Truth(p=p, true_mains=true_main_idx, true_pairs=true_pair_idx)

    reports = []
    for path in report_paths:
        _, rows, _ = read_tsv(path)
        terms = [parse(r[0]) for r in rows]
        tvals = np.array([float(r[3]) for r in rows]) if rows else np.empty(0)
        ranks = np.array([int(r[4]) for r in rows], dtype=np.int64) \
            if rows else np.empty(0, dtype=np.int64)
        reports.append(FitReport(
            terms=terms,
            beta=np.array([float(r[1]) for r in rows]) if rows else np.empty(0),
            se=np.array([float(r[2]) for r in rows]) if rows else np.empty(0),
            t=tvals,
            rank=ranks,
        ))
    return evaluate(reports, truth, max_threshold=max_threshold)
