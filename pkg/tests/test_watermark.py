import warnings

import mpmath
import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from gnnwm import autodiff as ad
from gnnwm.explain import KernelConfig
from gnnwm.graph import SubgraphSet, split_nodes, synth_graph
from gnnwm.models import Scope, init_model, logits_tape, train_classifier
from gnnwm.numeric import Rng, grad_check
from gnnwm.watermark import (STREAM_MODEL, STREAM_SUBGRAPHS, ArchConfig, DesignConfig, DesignInfeasibleError,
                             EmbedConfig, WatermarkObjective, alignment, design_watermark, dumps_secret,
                             embed, generate_w, hinge_op, load_secret, loads_secret, lower_bound_MI,
                             predicted_null, save_secret, select_idx, target_MI, watermark_length,
                             watermark_loss)
from gnnwm.graph import sample_subgraphs

mpmath.mp.dps = 50


def _design_oracle(F, T, alpha):
    """Eqs. for the design evaluated in 50-digit arithmetic."""
    p = 2 * mpmath.mpf(0.5) ** T
    mu = F * p
    sigma = mpmath.sqrt(F * p * (1 - p))
    z = mpmath.findroot(lambda z: mpmath.ncdf(-z) - alpha, 4)
    tgt = min(mu + sigma * z, F)
    lb = max(mu - sigma * z, 0)
    M = int(mpmath.ceil((tgt - lb) * F / (F - tgt)))
    return float(p), float(mu), float(sigma), float(tgt), float(lb), M


def test_design_photo_values_against_oracle():
    d = design_watermark(745, 4, 1e-5, 1e-5)
    p, mu, sigma, tgt, lb, M = _design_oracle(745, 4, mpmath.mpf("1e-5"))
    assert d.p_match == p == 0.125
    assert abs(d.mu_nat_p - 93.125) < 1e-12
    assert abs(d.sigma_nat_p - sigma) < 1e-12 and abs(sigma - 9.0269) < 1e-3
    assert abs(d.mi_tgt - tgt) < 1e-9 and abs(tgt - 131.63) < 0.05
    assert abs(d.mi_lb - lb) < 1e-9 and abs(lb - 54.62) < 0.05
    assert d.M == M == 94


@pytest.mark.parametrize("F,T", [(100, 4), (500, 3), (745, 2), (745, 5), (3000, 6)])
def test_design_M_against_oracle(F, T):
    assert watermark_length(F, T) == min(_design_oracle(F, T, mpmath.mpf("1e-5"))[5], F)


def test_predicted_null_edge_cases():
    assert predicted_null(10, 1)[0] == 1.0 and predicted_null(10, 1)[2] == 0.0
    ps = [predicted_null(100, T)[0] for T in range(1, 12)]
    assert all(b < a for a, b in zip(ps, ps[1:]))
    with pytest.raises(ValueError):
        predicted_null(0, 2)


def test_target_and_lower_bound_boundaries():
    assert target_MI(50, 1, 1e-5) == 50.0
    assert target_MI(745, 4, 0.5) == 93.125
    assert lower_bound_MI(745, 4, 0.5) == 93.125
    assert lower_bound_MI(20, 4, 1e-12) == 0.0


def test_design_infeasible_and_degenerate():
    with pytest.raises(DesignInfeasibleError):
        design_watermark(50, 1)
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        d = design_watermark(745, 4, 0.5, 0.5)
    assert d.M == 1 and any("degenerate" in str(x.message) for x in w)


def test_smaller_T_needs_longer_watermark():
    assert watermark_length(745, 2) > watermark_length(745, 5)


def test_select_idx_tie_break_and_sort_oracle(rng):
    X = np.zeros((9, 4))
    for col, c in enumerate([5, 2, 9, 9]):
        X[:c, col] = 1.0
    sub = SubgraphSet((np.arange(5), np.arange(5, 9)))
    assert_array_equal(select_idx(sub, X, 2), [2, 3])
    assert_array_equal(select_idx(sub, X, 4), [2, 3, 0, 1])
    Y = rng.exponential(size=(30, 25)) * (rng.random((30, 25)) < 0.3)
    sub = SubgraphSet((np.arange(0, 30, 3), np.arange(1, 30, 3)))
    counts = [int(np.count_nonzero(Y[sub.all_nodes(), j])) for j in range(25)]
    oracle = sorted(range(25), key=lambda j: (-counts[j], j))
    M = sum(c > 0 for c in counts)
    assert_array_equal(select_idx(sub, Y, M), oracle[:M])
    with pytest.raises(ValueError):
        select_idx(sub, Y, M + 1)


def test_generate_w(rng):
    assert_array_equal(generate_w(Rng(3), 50), generate_w(Rng(3), 50))
    w = generate_w(rng, 10**4)
    assert set(np.unique(w)) <= {-1, 1}
    assert abs(w.mean()) < 4 / np.sqrt(10**4)


def test_watermark_loss_values(rng):
    w = np.array([1, -1, 1])
    idx = np.array([0, 2, 4])
    sat = np.array([0.5, 0, -0.5, 0, 0.2])
    assert watermark_loss([sat, sat], w, idx, 0.1) == 0.0
    assert abs(watermark_loss([np.zeros(5)] * 4, w, idx, 0.05) - 4 * 3 * 0.05) < 1e-15
    es = [rng.normal(size=8) * 0.1 for _ in range(3)]
    w = generate_w(rng, 5)
    idx = np.array([7, 1, 3, 0, 5])
    ref = 0.0
    for e in es:
        for j in range(5):
            ref += max(0.0, 0.05 - w[j] * e[idx[j]])
    assert abs(watermark_loss(es, w, idx, 0.05) - ref) < 1e-12
    tape = sum(float(hinge_op(ad.const(e), w, idx, 0.05).value) for e in es)
    assert abs(tape - ref) < 1e-12


def test_alignment_extremes():
    w = np.array([1, -1, 1, 1])
    idx = np.array([3, 0, 1, 2])
    b = np.zeros(5, dtype=int)
    b[idx] = w
    assert alignment([b, b], w, idx) == 100.0
    assert alignment([-b], w, idx) == 0.0


def _fixture():
    g = synth_graph(Rng(11), N=24, F=6, C=3, p_intra=0.4, p_inter=0.05, feature_sparsity=0.3)
    split = split_nodes(Rng(1), g, (0.75, 0.125, 0.125))
    sub, clf = sample_subgraphs(Rng(2), split, 3, 0.25)
    return g, sub, clf


@pytest.mark.parametrize("arch", ["GCN", "SGC", "SAGE"])
def test_full_loss_gradient_through_explanations(arch):
    """CE + r * hinge(explanations) against central differences on a 24-node graph."""
    g, sub, clf = _fixture()
    kernel = KernelConfig(sigma_p=0.05)           # held fixed: the width is a stop-gradient
    m = init_model(arch, g.num_features, g.num_classes, Rng(5), layers=2, hidden=5)
    w = generate_w(Rng(6), 4)
    idx = select_idx(sub, g.features, 4)
    obj = WatermarkObjective(g, sub, w, idx, eps=0.5, kernel=kernel)
    scope = Scope(g)
    names = list(m.params)
    r = 10.0

    def loss_fn(ps):
        ts = {k: ad.param(p) for k, p in zip(names, ps)}
        ce = ad.nll_from_logits(logits_tape(m, ts, scope), clf, g.labels[clf])
        wm, _ = obj.terms(m, ts)
        total = ad.total([ce, ad.scale(wm, r)])
        total.backward()
        return float(total.value), [ts[k].grad if ts[k].grad is not None else np.zeros_like(p)
                                    for k, p in zip(names, ps)]

    params = [m.params[k] for k in names]
    # the watermark term must actually contribute a gradient
    assert float(obj.terms(m, {k: ad.const(v) for k, v in m.params.items()})[0].value) > 0
    assert grad_check(loss_fn, params, step=1e-4) < 1e-4


def test_r_zero_matches_plain_training(small_graph, small_split):
    arch = ArchConfig("GCN", 2, 8)
    cfg = EmbedConfig(r=0.0, lr=1e-3, epochs=15)
    rng = Rng(21)
    res = embed(small_graph, small_split, arch, cfg, DesignConfig(T=4, s=0.1), rng, KernelConfig())
    _, clf = sample_subgraphs(rng.spawn(STREAM_SUBGRAPHS), small_split, 4, 0.1)
    m0 = init_model("GCN", small_graph.num_features, 2, rng.spawn(STREAM_MODEL), 2, 8)
    _, hist = train_classifier(m0, small_graph, clf, 15, 1e-3)
    assert_array_equal([h["loss"] for h in res.history], [h["loss"] for h in hist])
    assert_array_equal(res.clf_nodes, clf)
    assert "alignment" in res.history[0]


def test_embed_lowers_watermark_loss_on_small_graph(small_graph, small_split):
    res = embed(small_graph, small_split, ArchConfig("SAGE", 2, 16), EmbedConfig(r=5, epochs=60),
                DesignConfig(T=4, s=0.2), Rng(4))
    assert res.history[-1]["loss_wmk"] < res.history[0]["loss_wmk"]
    assert res.secret.subgraphs.T == 4 and len(res.secret.idx) == res.secret.design.M


def test_secret_round_trip(tmp_path, small_graph, small_split):
    res = embed(small_graph, small_split, ArchConfig("GCN", 2, 4), EmbedConfig(epochs=2),
                DesignConfig(T=4, s=0.1), Rng(8))
    p = tmp_path / "secret.txt"
    save_secret(res.secret, p)
    assert (p.stat().st_mode & 0o777) == 0o600
    back = load_secret(p)
    assert dumps_secret(back) == dumps_secret(res.secret)
    assert_array_equal(back.idx, res.secret.idx)
    assert back.model_hash == res.secret.model_hash
    text = dumps_secret(res.secret).replace("philox4x64-10/v1", "mt19937/v0")
    with pytest.raises(ValueError):
        loads_secret(text)
