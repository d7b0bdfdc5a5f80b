"""Property-based checks of the invariants."""
import itertools

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bipmixed import MultiViewDataset, auc, build_hierarchy, selection_rates, standardize_views
from bipmixed.sampler import decode_model, encode_model, registry_from_counts
from bipmixed.views import ViewState

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@st.composite
def nested_labels(draw):
    n_sites = draw(st.integers(1, 4))
    sizes = draw(st.lists(st.integers(1, 3), min_size=n_sites, max_size=n_sites))
    sites, fams = [], []
    for s, k in enumerate(sizes):
        for f in range(k):
            reps = draw(st.integers(1, 3))
            sites += [f"s{s}"] * reps
            fams += [f"s{s}f{f}"] * reps
    order = draw(st.permutations(range(len(sites))))
    return [sites[i] for i in order], [fams[i] for i in order]


@given(nested_labels())
def test_hierarchy_partitions_rows(labels):
    sites, fams = labels
    h = build_hierarchy(sites, fams)
    assert h.n_fs.sum() == len(sites)
    assert h.n_s.sum() == h.n_families
    rows = np.sort(np.concatenate([idx for _, idx in h.families.values()]))
    np.testing.assert_array_equal(rows, np.arange(len(sites)))
    for i in range(len(sites)):
        assert h.family_ids[h.row_family[i]] == fams[i]
        assert h.site_ids[h.row_site[i]] == sites[i]


@given(arrays(float, st.tuples(st.integers(3, 10), st.integers(1, 4)),
              elements=st.floats(-1e3, 1e3, allow_nan=False, width=64)))
def test_scaler_round_trip(X):
    X = X + np.arange(X.shape[0])[:, None] * (1 + np.abs(X).max())  # no constant columns
    ds = MultiViewDataset((X,), np.arange(X.shape[0], dtype=float), ["s"] * X.shape[0],
                          [str(i) for i in range(X.shape[0])])
    std, scaler = standardize_views(ds)
    np.testing.assert_allclose(std.views[0].mean(axis=0), 0, atol=1e-9)
    np.testing.assert_allclose(std.views[0].std(axis=0, ddof=1), 1, rtol=1e-9)
    np.testing.assert_allclose(scaler.inverse_views(std.views)[0], X, rtol=1e-9, atol=1e-9 * np.abs(X).max())


labelled_scores = st.integers(2, 12).flatmap(
    lambda n: st.tuples(
        arrays(float, n, elements=st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.5, 0.75, 0.9, 1.0])),
        arrays(bool, n, elements=st.booleans()).filter(lambda t: 0 < t.sum() < t.size),
    )
)


@given(labelled_scores)
def test_auc_matches_pair_count(data):
    s, t = data
    pos, neg = s[t], s[~t]
    brute = np.mean([1.0 if a > b else 0.5 if a == b else 0.0 for a, b in itertools.product(pos, neg)])
    assert abs(auc(s, t) - brute) < 1e-12


@given(labelled_scores)
def test_auc_invariant_under_increasing_maps(data):
    s, t = data
    assert abs(auc(s, t) - auc(np.exp(3 * s) - 7, t)) < 1e-12
    assert abs(auc(s, t) + auc(-s, t) - 1) < 1e-12


@given(labelled_scores, st.floats(0, 1))
def test_selection_rates_bounds(data, c):
    s, t = data
    fpr, fnr = selection_rates(s, t, threshold=c)
    assert 0 <= fpr <= 1 and 0 <= fnr <= 1
    assert selection_rates(s, t, threshold=1.0)[0] == 0.0
    # raising the threshold never selects more
    fpr2, fnr2 = selection_rates(s, t, threshold=min(1.0, c + 0.2))
    assert fpr2 <= fpr and fnr2 >= fnr


@given(st.integers(1, 4), st.lists(st.integers(1, 6), min_size=1, max_size=3), st.data())
def test_model_code_round_trip(r, p, data):
    views = [ViewState(np.ones(r, bool), np.ones((r, 1), bool), np.zeros((r, 1)), np.ones(1), True)]
    for pm in p:
        H = data.draw(arrays(bool, (r, pm)))
        g = H.any(axis=1) | data.draw(arrays(bool, r))
        views.append(ViewState(g, H, np.zeros((r, pm)), np.ones(pm)))
    views[0] = ViewState(views[1].gamma.copy(), views[1].gamma.copy()[:, None], np.zeros((r, 1)), np.ones(1), True)
    g, H = decode_model(encode_model(views), r, p)
    for k, v in enumerate(views):
        np.testing.assert_array_equal(g[k], v.gamma)
        np.testing.assert_array_equal(H[k], v.H)


@given(st.lists(st.integers(1, 50), min_size=1, max_size=8))
def test_registry_frequencies_sum_to_one(counts):
    reg = registry_from_counts({bytes([k]): c for k, c in enumerate(counts)}, 1, [1])
    assert abs(sum(e.freq for e in reg) - 1) < 1e-12
    assert [e.count for e in reg] == sorted(counts, reverse=True)
