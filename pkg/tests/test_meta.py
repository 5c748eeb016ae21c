import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import stats

from netlasso.data import Dataset
from netlasso.errors import EmptyData, NonPositiveSE, SampleMismatch
from netlasso.meta import (
    CohortSet,
    MetaResult,
    _roundtrip_adjust,
    _split_seeds,
    combine_inverse_variance,
    combine_stouffer,
    run_procedure,
)
from netlasso.refit import split_half_z, term_universe
from netlasso.solver import Inter, Main
from netlasso.tuning import TuneSpec
from netlasso.weights import from_pairs
from tests.conftest import make_dataset


def test_stouffer_combination():
    assert_allclose(combine_stouffer(np.ones((4, 1))), [2.0], rtol=1e-12)
    assert_allclose(combine_stouffer(np.array([[1.0], [-1.0]])), [0.0],
                    atol=1e-15)
    row = np.array([[0.3, -1.2, 2.0]])
    assert_allclose(combine_stouffer(row), row[0], rtol=1e-15)


def test_inverse_variance_combination():
    beta, se = combine_inverse_variance(np.array([1.0, 1.0]),
                                        np.array([1.0, 1.0]))
    assert_allclose(beta, 1.0, rtol=1e-12)
    assert_allclose(se, np.sqrt(0.5), rtol=1e-12)
    # precision weighting leans toward the tighter estimate
    beta2, se2 = combine_inverse_variance(np.array([0.0, 1.0]),
                                          np.array([1.0, 0.1]))
    assert beta2 > 0.9
    assert se2 < 0.1
    with pytest.raises(NonPositiveSE):
        combine_inverse_variance(np.array([1.0]), np.array([0.0]))


def test_roundtrip_adjust_identity_for_single_term():
    z = np.array([0.0, 1.7, 0.0])
    out = _roundtrip_adjust(z)
    assert_allclose(out, z, rtol=1e-12)


def test_roundtrip_adjust_never_inflates_and_keeps_zeros():
    z = np.array([2.5, 0.0, -1.1, 3.0, 0.0])
    out = _roundtrip_adjust(z)
    assert out[1] == out[4] == 0.0
    nz = z != 0.0
    assert np.all(np.abs(out[nz]) <= np.abs(z[nz]) + 1e-12)
    assert np.all(np.sign(out[nz]) == np.sign(z[nz]))
    # explicit value: m = 3
    p_adj = min(1.0, 2.0 * stats.norm.sf(2.5) * 3)
    assert_allclose(out[0], stats.norm.isf(p_adj / 2.0), rtol=1e-12)


def test_roundtrip_adjust_saturates_extreme_z():
    out = _roundtrip_adjust(np.array([50.0, -50.0]))
    assert np.all(np.isfinite(out))
    assert 35.0 < out[0] < 39.0
    assert out[1] == -out[0]


def test_cohort_set_validation():
    a = make_dataset(n=30, p=4, seed=1)
    b = make_dataset(n=25, p=4, seed=2)
    cs = CohortSet([a, b])
    assert cs.n_cohorts == 2
    pooled = cs.pooled()
    assert pooled.n_samples == 55
    assert pooled.snp_ids == a.snp_ids
    assert pooled.sample_ids[0].startswith("c0:")
    assert_allclose(pooled.genotypes[:30], a.genotypes)
    assert_allclose(pooled.y[30:], b.y)
    with pytest.raises(EmptyData):
        CohortSet([])
    odd = make_dataset(n=20, p=4, seed=3)
    odd = Dataset(genotypes=odd.genotypes, snp_ids=["x1", "x2", "x3", "x4"],
                  y=odd.y)
    with pytest.raises(SampleMismatch):
        CohortSet([a, odd])


def _cohorts(seed0=0, m=3, n=160, p=10):
    beta = {j: 0.7 for j in range(3)}
    sets = []
    for i in range(m):
        sets.append(make_dataset(n=n, p=p, seed=seed0 + i, beta=beta,
                                 pair_beta={(0, 1): 0.6}, noise=0.6))
    pairs = [(j, k) for j in range(5) for k in range(j + 1, 5)]
    return CohortSet(sets), from_pairs(pairs, p)


def test_run_procedure_rejects_unknown_name():
    cs, w = _cohorts()
    with pytest.raises(EmptyData):
        run_procedure("E", cs, w, TuneSpec(s_target=3, s_slack=1, c=0.5),
                      n_splits=2, seed=0)


def test_procedures_deterministic_and_shaped():
    cs, w = _cohorts(seed0=10)
    spec = TuneSpec(s_target=3, s_slack=1, c=0.5)
    universe = term_universe(10, w)
    for name, has_ivw in (("A", False), ("B", True), ("C", False), ("D", True)):
        r1 = run_procedure(name, cs, w, spec, n_splits=2, seed=7)
        r2 = run_procedure(name, cs, w, spec, n_splits=2, seed=7)
        assert r1.procedure == name
        assert r1.terms == universe
        assert r1.n_splits == 2
        assert_allclose(r1.z, r2.z, rtol=0, atol=0)
        assert np.all(np.isfinite(r1.z))
        assert np.any(r1.z != 0.0)
        assert (r1.beta is not None) == has_ivw
        assert (r1.se is not None) == has_ivw
        if has_ivw:
            assert np.all(np.isfinite(r1.beta))
            assert np.all(r1.se[r1.z != 0.0] > 0.0)
        assert r1.n_splits_selected.min() >= 0


def test_procedure_a_is_average_of_pooled_split_halves():
    cs, w = _cohorts(seed0=20)
    spec = TuneSpec(s_target=3, s_slack=1, c=0.5)
    result = run_procedure("A", cs, w, spec, n_splits=3, seed=11)
    pooled = cs.pooled()
    acc = np.zeros(len(result.terms))
    hint = None
    for s in _split_seeds(11, 3):
        sz = split_half_z(pooled, w, spec, s, hint=hint)
        hint = sz.lambda1 or None
        acc += sz.z
    assert_allclose(result.z, acc / 3.0, rtol=1e-12)


def test_procedure_seed_matters():
    cs, w = _cohorts(seed0=30)
    spec = TuneSpec(s_target=3, s_slack=1, c=0.5)
    r1 = run_procedure("A", cs, w, spec, n_splits=2, seed=1)
    r2 = run_procedure("A", cs, w, spec, n_splits=2, seed=2)
    assert not np.array_equal(r1.z, r2.z)


def test_meta_result_tsv(tmp_path):
    cs, w = _cohorts(seed0=40)
    spec = TuneSpec(s_target=3, s_slack=1, c=0.5)
    res = run_procedure("B", cs, w, spec, n_splits=2, seed=3)
    path = tmp_path / "meta.tsv"
    res.to_tsv(cs.snp_ids, path)
    text = path.read_text()
    assert "# procedure=B" in text
    assert "# n_splits=2" in text
    lines = [l for l in text.splitlines() if l and not l.startswith("#")]
    assert lines[0].split("\t") == ["term", "z", "beta", "se",
                                    "n_splits_selected"]
    assert len(lines) == 1 + len(res.terms)
    # rerun writes byte-identical output
    path2 = tmp_path / "meta2.tsv"
    res.to_tsv(cs.snp_ids, path2)
    assert path.read_text() == path2.read_text()


def test_meta_result_tsv_na_for_stouffer_procedures(tmp_path):
    cs, w = _cohorts(seed0=50)
    spec = TuneSpec(s_target=3, s_slack=1, c=0.5)
    res = run_procedure("A", cs, w, spec, n_splits=2, seed=3)
    path = tmp_path / "meta.tsv"
    res.to_tsv(cs.snp_ids, path)
    body = [l for l in path.read_text().splitlines()
            if l and not l.startswith("#")][1:]
    assert all(l.split("\t")[2] == "NA" and l.split("\t")[3] == "NA"
               for l in body)
