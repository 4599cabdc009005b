import numpy as np
import pytest

from mrfsig.errors import DomainError, InsufficientFeaturesError
from mrfsig.gibbs_core import ParamVector
from mrfsig.pipeline import (
    DimQuad,
    PipelineConfig,
    Signature,
    chi2_matrix,
    chi2_pair,
    classify,
    compute_scores,
    discover_cliques,
    feature_select,
    fit_pair,
    grid_search,
    kl_scan,
    potential_cliques,
    rank_sites,
    scan_correlation,
    ScanRow,
    write_scan_csv,
)
from mrfsig.spectra_io import BinaryDataset, PeakSpectrum
from mrfsig.synthetic import embed, planted_pair


def _ds(X, group):
    X = np.asarray(X, dtype=np.uint8)
    L = X.shape[1]
    return BinaryDataset(X, group, np.arange(1, L + 1), 1000.0 * 1.003 ** np.arange(L), rho=0.003)


def _freq_groups(freq_plus, freq_minus, n=100):
    """Columns with exactly the requested activation counts."""
    cols_p = [np.r_[np.ones(int(f * n)), np.zeros(n - int(f * n))] for f in freq_plus]
    cols_m = [np.r_[np.ones(int(f * n)), np.zeros(n - int(f * n))] for f in freq_minus]
    return _ds(np.column_stack(cols_p), "plus"), _ds(np.column_stack(cols_m), "minus")


class TestSelection:
    def test_ranking_and_presence_rule(self):
        bp, bm = _freq_groups([0.9, 0.5, 0.3, 0.1, 0.25], [0.3, 0.5, 0.6, 0.9, 0.1])
        sel = rank_sites(bp, bm, thr=0.2)
        # site 4 fails min >= 0.2, site 5 too
        assert set(sel.stats) == {1, 2, 3}
        assert sel.plus_order == (1, 2, 3)
        assert sel.minus_order == (3, 2, 1)
        loose = rank_sites(bp, bm, thr=0.2, presence="max")
        assert set(loose.stats) == {1, 2, 3, 4, 5}
        assert loose.plus_order == (1, 5, 2, 3, 4)  # DP 3, 2.5, 1, 0.5, 0.11

    def test_minus_sites_skip_plus_choice(self):
        bp, bm = _freq_groups([0.9, 0.5, 0.3], [0.3, 0.5, 0.6])
        assert feature_select(bp, bm, 0.2, 5, DimQuad(2, 0, 1, 0)) == ((1, 2), (3,))
        assert feature_select(bp, bm, 0.2, 5, DimQuad(1, 0, 2, 0)) == ((1,), (3, 2))

    def test_insufficient(self):
        bp, bm = _freq_groups([0.9, 0.5], [0.3, 0.5])
        with pytest.raises(InsufficientFeaturesError):
            feature_select(bp, bm, 0.2, 5, DimQuad(2, 0, 1, 0))
        with pytest.raises(DomainError):
            feature_select(bp, bm, 0.2, 1, DimQuad(2, 0, 1, 0))

    def test_flat_dp_flagged(self):
        bp, bm = _freq_groups([0.5, 0.5], [0.5, 0.5])
        assert rank_sites(bp, bm).non_discriminative

    def test_dimquad(self):
        dq = DimQuad.parse("4,1;3,0")
        assert dq == (4, 1, 3, 0) and str(dq) == "(4,1;3,0)" and dq.d == 7
        with pytest.raises(DomainError):
            DimQuad.parse("1,2,3")
        with pytest.raises(DomainError):
            DimQuad.parse("0,0,1,0")


class TestChi2:
    def test_against_contingency_table(self, rng):
        from scipy.stats import chi2_contingency

        X = rng.integers(0, 2, (80, 5))
        chi = chi2_matrix(X)
        for s in range(5):
            for t in range(s + 1, 5):
                table = np.array([[np.sum((X[:, s] == a) & (X[:, t] == b)) for b in (0, 1)] for a in (0, 1)])
                ref = chi2_contingency(table, correction=False)[0]
                assert chi[s, t] == pytest.approx(ref, rel=1e-10)
                assert chi2_pair(X[:, s], X[:, t]) == pytest.approx(ref, rel=1e-10)

    def test_empty_margin(self):
        assert chi2_pair([0, 0, 0], [1, 0, 1]) == 0.0

    def test_candidates_ordered(self, rng):
        base = rng.integers(0, 2, 200)
        X = np.column_stack([base, base, rng.integers(0, 2, 200), base ^ (rng.random(200) < 0.2)])
        ds = _ds(X, "g")
        ptc = potential_cliques(ds, [1, 2, 3, 4])
        assert ptc[0].pair == (1, 2)
        assert [c.chi2 for c in ptc] == sorted((c.chi2 for c in ptc), reverse=True)
        assert all(c.chi2 > 3.84 for c in ptc)
        assert discover_cliques(ds, [1, 2, 3, 4], 1) == ptc[:1]
        assert len(discover_cliques(ds, [1, 2, 3, 4], 50)) == len(ptc)


def test_compute_scores():
    tp = ParamVector.from_dicts(2, {0: -1.0, 1: 0.5}, {(0, 1): 0.2})
    tm = ParamVector.from_dicts(2, {0: 0.4, 1: -0.6})
    sco, c0 = compute_scores(tp, tm, 0.9, 0.37)
    assert sco[0] == pytest.approx(0.9 * 0.4 + 1.0)
    assert sco[1] == pytest.approx(-0.54 - 0.5)
    assert sco[0, 1] == pytest.approx(-0.2)
    assert c0 == 0.37


@pytest.fixture(scope="module")
def planted():
    pair = planted_pair()
    bp, bm, sites = embed(pair, 100, seed=4)
    return pair, bp, bm, sites


class TestFitAndSearch:
    def test_fit_pair(self, planted):
        _, bp, bm, sites = planted
        pf = fit_pair(bp, bm, DimQuad(4, 1, 3, 1))
        assert set(pf.sites) == set(sites)
        assert len(pf.cliques_plus) == 1
        assert pf.training.perf > 0.8

    def test_grid_search_small(self, planted):
        _, bp, bm, _ = planted
        dims = [(4, 0, 3, 0), (2, 0, 2, 0), (4, 1, 3, 1)]
        g = grid_search(bp, bm, config=PipelineConfig(H=4), dims=dims)
        assert g.dim_opt in [DimQuad(*d) for d in dims]
        assert all(pf.loo is not None for pf in g.stage2)
        best = max(pf.loo.perf for pf in g.stage2)
        assert g.best.loo.perf == best
        assert g.signature.perf.method == "leave-one-out"

    def test_grid_without_loo(self, planted):
        _, bp, bm, _ = planted
        g = grid_search(bp, bm, config=PipelineConfig(H=2, loo=False))
        assert g.stage2 == []
        assert g.best.training.perf == max(pf.training.perf for pf in g.stage1)

    def test_signature_classifies_like_separator(self, planted):
        _, bp, bm, _ = planted
        g = grid_search(bp, bm, config=PipelineConfig(H=4), dims=[(4, 1, 3, 1)])
        sig = g.signature
        back = Signature.from_json(sig.to_json())
        sep = g.best.separator
        X = bp.vectors[:, np.array(sig.sites) - 1]
        for x, (label, t) in zip(X, classify(back, bp)):
            assert t == pytest.approx(sep.value(x), abs=1e-9)
            assert label == ("+" if t > 0 else "-")

    def test_classify_peak_list(self, planted):
        _, bp, bm, _ = planted
        sig = grid_search(bp, bm, config=PipelineConfig(H=2, loo=False)).signature
        spectrum = PeakSpectrum("x", "?", tuple(b["mz"] for b in sig.biomarkers))
        label, t = classify(sig, spectrum)
        assert t == pytest.approx(sig.tsco(np.ones(len(sig.sites))))

    def test_kl_scan(self, planted, tmp_path):
        _, bp, bm, _ = planted
        rows = kl_scan(bp, bm, H=2)
        assert len(rows) >= 4 and all(r.norkl >= 0 for r in rows)
        write_scan_csv(tmp_path / "s.csv", rows)
        assert (tmp_path / "s.csv").read_text().startswith("d_plus,c_plus,d_minus,c_minus,perf,norkl")
        assert scan_correlation([ScanRow(DimQuad(1, 0, 1, 0), p, k) for p, k in [(0.1, 1), (0.2, 2), (0.3, 3)]]) == 1.0

    def test_config_validation(self):
        with pytest.raises(DomainError):
            PipelineConfig(thr=1.5)
        with pytest.raises(DomainError):
            PipelineConfig(presence="median")
