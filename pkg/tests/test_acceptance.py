"""Acceptance gate: ten criteria, one test and one pass/fail line each.

Every test asserts its quality thresholds and its wall-clock budget. The
three retrieval criteria share one session fixture that runs every
training arm once over three seeds; their reference matrices and seeds
are frozen, so reruns on the same machine reproduce the same numbers.
"""

import time

import numpy as np
import pytest

from joinscout import datagen, matching, projection, repository, training
from joinscout.embedder import EmbedderConfig, make_embedder
from joinscout.index import AnnIndexConfig, VectorStore, build_ann, knn_exact
from joinscout.evaluation import median_ms

REFERENCE_QUERY = np.array([[-0.1, 0.2], [0.2, 0.3], [-0.2, 0.3]])
REFERENCE_NEAR = np.array([[-0.1, 0.25], [0.15, 0.35], [-0.15, 0.3]])
REFERENCE_FAR = np.array([[-0.8, 0.2], [0.3, 0.8], [0.5, 0.3]])
REFERENCE_PROXIES = np.array([[1.0, -1.0], [-1.0, -1.0]])


def _unit_rows(rng, n, d):
    rows = rng.standard_normal((n, d))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def test_c01_reference_values_micro():
    """Hand-checkable joinability and pooled-projection values."""
    start = time.perf_counter()
    cfg = matching.MatchConfig(tau=0.1)
    for column in (REFERENCE_QUERY, REFERENCE_NEAR, REFERENCE_FAR):
        score = matching.joinability(column, REFERENCE_PROXIES, cfg)
        assert score.value == 0.0
    for column, expected in ((REFERENCE_QUERY, -0.30),
                             (REFERENCE_NEAR, -0.50),
                             (REFERENCE_FAR, 0.30)):
        got = projection.pooled_projection(column, REFERENCE_PROXIES)
        assert got == pytest.approx(expected, abs=1e-12)
    elapsed = time.perf_counter() - start
    print(f"criterion 1: reference values exact, {elapsed:.3f}s")
    assert elapsed < 1.0


def _tie_free_instance(rng, n=5, d=8, l=4, m=3):
    """Instance whose argmax routing margins survive the FD step."""
    while True:
        params = rng.standard_normal((l, m, d))
        anchor = _unit_rows(rng, n, d)
        scores = np.einsum("nd,lmd->lnm", anchor, params)
        top2 = np.sort(scores, axis=2)[:, :, -2:]
        if np.min(top2[:, :, 1] - top2[:, :, 0]) > 1e-3:
            return params, anchor


def test_c02_parameter_gradient_matches_finite_differences():
    """Analytic loss gradient vs central differences, every coordinate.

    The headline number is the norm-wise relative error per instance.
    Coordinate-wise checks are gated on magnitude: a float64 central
    difference at h=1e-6 carries cancellation noise near 1e-9, so only
    coordinates the oracle can resolve get the tight tolerance, and
    coordinates the routing never touches must difference to exactly
    zero (the perturbed proxy loses every argmax, bit for bit).
    """
    start = time.perf_counter()
    rng = np.random.default_rng(220)
    t = 0.08
    h = 1e-6
    worst_norm = 0.0
    worst_coord = 0.0
    zero_coords = 0
    for _ in range(20):
        params, anchor = _tie_free_instance(rng)
        pos = [_unit_rows(rng, 1, 4)[0] for _ in range(2)]
        neg = _unit_rows(rng, 4, 4)
        _, grad = training.anchor_loss_and_grad(params, anchor, pos, neg, t)

        def loss_at(p):
            emb = projection.column_embedding(anchor, p)
            return training.rank_aware_loss(emb, pos, neg, t)

        flat = grad.ravel()
        fds = np.empty_like(flat)
        for i in range(params.size):
            bumped = params.copy().ravel()
            bumped[i] += h
            up = loss_at(bumped.reshape(params.shape))
            bumped[i] -= 2 * h
            down = loss_at(bumped.reshape(params.shape))
            fds[i] = (up - down) / (2 * h)
        worst_norm = max(worst_norm,
                         float(np.linalg.norm(fds - flat)
                               / np.linalg.norm(flat)))
        for i in range(params.size):
            if flat[i] == 0.0:
                zero_coords += 1
                assert fds[i] == 0.0
            elif max(abs(fds[i]), abs(flat[i])) >= 1e-3:
                worst_coord = max(worst_coord,
                                  abs(fds[i] - flat[i])
                                  / max(abs(fds[i]), abs(flat[i])))
    elapsed = time.perf_counter() - start
    print(f"criterion 2: norm-wise rel error {worst_norm:.2e}, "
          f"coordinate-wise {worst_coord:.2e}, {zero_coords} exact "
          f"zeros, {elapsed:.1f}s")
    assert worst_norm < 1e-5
    assert worst_coord < 1e-5
    assert elapsed < 30.0


def _exhaustive_matching(weights):
    """Best one-to-one (partial) matching value by bitmask recursion."""
    n, m = weights.shape
    cache = {}

    def best(i, used):
        if i == n:
            return 0.0
        key = (i, used)
        if key in cache:
            return cache[key]
        value = best(i + 1, used)
        for j in range(m):
            if not used & (1 << j):
                value = max(value,
                            weights[i, j] + best(i + 1, used | (1 << j)))
        cache[key] = value
        return value

    return best(0, 0)


def test_c03_embedding_invariance_and_matching_dominance():
    """Permutation invariance at scale plus pooled >= matched score."""
    start = time.perf_counter()
    rng = np.random.default_rng(330)
    params = rng.standard_normal((16, 8, 32))
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 5001))
        rows = _unit_rows(rng, n, 32)
        emb = projection.column_embedding(rows, params)
        assert emb.shape == (16,)
        assert np.all(np.isfinite(emb))
        assert np.linalg.norm(emb) == pytest.approx(1.0, abs=1e-9)
        shuffled = projection.column_embedding(rows[rng.permutation(n)],
                                               params)
        worst = max(worst, float(np.abs(emb - shuffled).max()))
    assert worst < 1e-9
    # matched-score dominance needs every cell's best edge non-negative:
    # the matcher may skip a cell, pooling never does.
    checked = 0
    while checked < 100:
        n = int(rng.integers(1, 9))
        m = int(rng.integers(1, 9))
        col = rng.standard_normal((n, 8))
        proxies = rng.standard_normal((m, 8))
        weights = col @ proxies.T
        if weights.max(axis=1).min() < 0:
            continue
        exhaustive = _exhaustive_matching(weights)
        exact = projection.exact_matching_score(col, proxies)
        assert exact == pytest.approx(exhaustive, abs=1e-9)
        pooled = projection.pooled_projection(col, proxies)
        assert pooled >= exhaustive - 1e-9
        checked += 1
    elapsed = time.perf_counter() - start
    print(f"criterion 3: worst permutation drift {worst:.2e}, "
          f"100 dominance instances, {elapsed:.1f}s")
    assert elapsed < 120.0


def test_c04_threshold_duality_forms_agree():
    """Distance form and similarity form match off the boundary."""
    start = time.perf_counter()
    rng = np.random.default_rng(440)
    cfg = matching.MatchConfig(tau=0.6)
    alpha = cfg.sim_threshold_alpha
    assert alpha == pytest.approx(1.0 - 0.6 * 0.6 / 2.0)
    a = _unit_rows(rng, 10_000, 16)
    b = _unit_rows(rng, 10_000, 16)
    skipped = 0
    for i in range(10_000):
        dist = float(np.linalg.norm(a[i] - b[i]))
        if abs(dist - cfg.tau) < 1e-12:
            skipped += 1
            continue
        by_distance = matching.cells_match(a[i], b[i], cfg)
        by_similarity = matching.joinability_sim_form(
            a[i][None, :], b[i][None, :], alpha).matched == 1
        assert by_distance == by_similarity, f"pair {i} disagrees"
    elapsed = time.perf_counter() - start
    print(f"criterion 4: {10_000 - skipped} pairs agree "
          f"({skipped} boundary), {elapsed:.1f}s")
    assert elapsed < 10.0


# -- shared retrieval arms (criteria 5, 6, 9) --------------------------


_SEEDS = (101, 202, 303)


def _run_seed(seed):
    """All training arms for one seed; returns metrics and arm times."""
    emb = make_embedder(EmbedderConfig(kind="hashed-ngram", dimension=64))
    bench = repository.synth_benchmark(repository.SynthBenchSpec(seed=seed))
    qmats = {c.id: emb.embed_column(list(c.cells)) for c in bench.queries}
    mats = {c.id: emb.embed_column(list(c.cells))
            for c in bench.repo.columns}
    cells_by_id = {c.id: list(c.cells) for c in bench.repo.columns}

    def truth_for(tau):
        mcfg = matching.MatchConfig(tau=tau)
        truth, gains = {}, {}
        for qid, qm in qmats.items():
            ranked = matching.exact_topk(qm, list(mats.items()), 10, mcfg)
            truth[qid] = [r[0] for r in ranked]
            gains[qid] = {r[0]: r[1].value for r in ranked}
        return truth, gains

    def score(embs_by_id, q_embs, truth, gains):
        ids = sorted(embs_by_id)
        mat = np.stack([embs_by_id[i] for i in ids])
        recall_total, ndcg_total = 0.0, 0.0
        for qid, qe in q_embs.items():
            sims = mat @ qe
            got = [ids[i] for i in np.argsort(-sims)[:10]]
            recall_total += len(set(got) & set(truth[qid])) / 10.0
            g = [gains[qid].get(c, 0.0) for c in got]
            dcg = sum(v / np.log2(i + 2) for i, v in enumerate(g))
            ideal = sorted(gains[qid].values(), reverse=True)[:10]
            idcg = sum(v / np.log2(i + 2) for i, v in enumerate(ideal))
            ndcg_total += dcg / idcg if idcg > 0 else 1.0
        return recall_total / len(q_embs), ndcg_total / len(q_embs)

    def pooled(params):
        return ({k: projection.column_embedding(m, params)
                 for k, m in mats.items()},
                {k: projection.column_embedding(m, params)
                 for k, m in qmats.items()})

    def train_arm(s, tau, single_top=False):
        mcfg = matching.MatchConfig(tau=tau)
        cfg = training.TrainConfig(
            momentum_alpha=0.9, queue_len=4, batch_size=32,
            rank_list_len=s, learning_rate=0.01, epochs=30, seed=seed,
            temperature=0.08, num_proxy_sets=16, proxies_per_set=8,
            dimension=64)
        provider = datagen.make_example_provider(
            mats, cells_by_id, 3 if single_top else s,
            datagen.SynthConfig(mode="embedding", seed=seed + 1), mcfg, emb)
        if single_top:
            # Plain-contrastive arm: same ranked lists, truncated to the
            # top positive, so the only difference is the loss shape.
            full = provider

            def provider(anchor_id, epoch):
                ex = full(anchor_id, epoch)
                return training.TrainingExample(
                    anchor=ex.anchor, positives=ex.positives[:1],
                    target_scores=ex.target_scores[:1])
        result = training.train(list(mats.items()), cfg, provider)
        return result.state.target_params

    out = {}
    t0 = time.perf_counter()
    truth2, gains2 = truth_for(0.2)

    def avg_emb(m):
        v = m.mean(axis=0)
        return v / np.linalg.norm(v)

    out["avgp"] = score({k: avg_emb(m) for k, m in mats.items()},
                        {k: avg_emb(m) for k, m in qmats.items()},
                        truth2, gains2)
    cfg0 = training.TrainConfig(num_proxy_sets=16, proxies_per_set=8,
                                dimension=64, seed=seed)
    e_r, e_q = pooled(training.init_state(cfg0).target_params)
    out["untrained"] = score(e_r, e_q, truth2, gains2)

    e_r, e_q = pooled(train_arm(3, 0.2))
    out["trained"] = score(e_r, e_q, truth2, gains2)

    e_r, e_q = pooled(train_arm(1, 0.2, single_top=True))
    out["single_top"] = score(e_r, e_q, truth2, gains2)
    out["tau2_seconds"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    truth0, gains0 = truth_for(0.0)
    e_r, e_q = pooled(train_arm(3, 0.0))
    out["equi"] = score(e_r, e_q, truth0, gains0)
    out["tau0_seconds"] = time.perf_counter() - t0
    return out


@pytest.fixture(scope="session")
def retrieval_arms():
    return [_run_seed(seed) for seed in _SEEDS]


def _mean(arms, key, index):
    return sum(arm[key][index] for arm in arms) / len(arms)


def test_c05_trained_retrieval_beats_baselines(retrieval_arms):
    """Trained proxies outrank both untrained and average pooling."""
    trained = _mean(retrieval_arms, "trained", 0)
    untrained = _mean(retrieval_arms, "untrained", 0)
    avgp = _mean(retrieval_arms, "avgp", 0)
    elapsed = sum(arm["tau2_seconds"] for arm in retrieval_arms)
    print(f"criterion 5: recall@10 trained {trained:.4f} vs untrained "
          f"{untrained:.4f} vs average-pool {avgp:.4f}, {elapsed:.0f}s")
    assert trained >= untrained + 0.10
    assert trained >= avgp + 0.05
    assert elapsed < 900.0


def test_c06_ranked_positives_at_least_single_positive(retrieval_arms):
    """Rank-aware lists do not lose to the single-positive loss."""
    ranked = _mean(retrieval_arms, "trained", 1)
    single = _mean(retrieval_arms, "single_top", 1)
    print(f"criterion 6: ndcg@10 ranked {ranked:.4f} vs single-positive "
          f"{single:.4f} (shares criterion-5 budget)")
    assert ranked >= single


def test_c07_graph_search_recall():
    """Approximate search recall against the exact scan at defaults."""
    start = time.perf_counter()
    rng = np.random.default_rng(4242)
    store = VectorStore(32)
    vecs = _unit_rows(rng, 20_000, 32)
    store.add_many([(f"v{i:05d}", vecs[i]) for i in range(20_000)])
    ann = build_ann(store, AnnIndexConfig())
    assert not ann.exact_mode
    queries = _unit_rows(rng, 100, 32)
    hits = 0
    for q in queries:
        approx = {cid for cid, _ in ann.query(q, 10)}
        exact = {cid for cid, _ in knn_exact(store, q, 10)}
        hits += len(approx & exact)
    recall = hits / 1000.0
    elapsed = time.perf_counter() - start
    print(f"criterion 7: graph recall@10 {recall:.4f}, {elapsed:.0f}s")
    assert recall >= 0.95
    assert elapsed < 120.0


def test_c08_encode_and_search_scaling():
    """Encode time roughly linear; search time sublinear in store size."""
    start = time.perf_counter()
    rng = np.random.default_rng(515)
    proxies = training.init_proxies(16, 8, 64, 7)
    small = _unit_rows(rng, 1000, 64)
    big = _unit_rows(rng, 2000, 64)
    t_small = median_ms(lambda: projection.column_embedding(small, proxies),
                        runs=30)
    t_big = median_ms(lambda: projection.column_embedding(big, proxies),
                      runs=30)
    encode_ratio = t_big / t_small

    cfg = AnnIndexConfig(max_neighbors=8, ef_construction=32, ef_search=64,
                         seed=0)
    queries = _unit_rows(rng, 100, 32)
    search_ms = {}
    for size in (50_000, 100_000):
        vecs = _unit_rows(rng, size, 32)
        store = VectorStore(32)
        store.add_many([(f"v{i:06d}", vecs[i]) for i in range(size)])
        ann = build_ann(store, cfg)
        samples = []
        for q in queries:
            t0 = time.perf_counter()
            ann.query(q, 10)
            samples.append((time.perf_counter() - t0) * 1000.0)
        samples.sort()
        search_ms[size] = 0.5 * (samples[49] + samples[50])
    search_ratio = search_ms[100_000] / search_ms[50_000]
    elapsed = time.perf_counter() - start
    print(f"criterion 8: encode ratio {encode_ratio:.3f} (x2 cells), "
          f"search ratio {search_ratio:.3f} (x2 store), {elapsed:.0f}s")
    assert encode_ratio <= 2.5
    assert search_ratio < 2.0
    assert elapsed < 300.0


def test_c09_equi_join_mode_recall(retrieval_arms):
    """Exact-overlap mode keeps recall close to the threshold mode."""
    equi = _mean(retrieval_arms, "equi", 0)
    trained = _mean(retrieval_arms, "trained", 0)
    elapsed = sum(arm["tau0_seconds"] for arm in retrieval_arms)
    print(f"criterion 9: equi-join recall@10 {equi:.4f} vs threshold-mode "
          f"{trained:.4f}, {elapsed:.0f}s")
    assert equi >= trained - 0.05
    assert elapsed < 900.0


def test_c10_synthesis_fidelity():
    """Synthesized positives hit their target joinability."""
    start = time.perf_counter()
    rng = np.random.default_rng(1010)
    cfg = matching.MatchConfig(tau=0.2)
    synth_cfg = datagen.SynthConfig()
    within_target = 0
    for _ in range(1000):
        kept = _unit_rows(rng, 20, 16)
        residual = _unit_rows(rng, 6, 16)
        x_percent = float(rng.uniform(60.0, 90.0))
        out = datagen.synth_embed_positive(kept, residual, x_percent,
                                           synth_cfg, cfg, rng)
        measured = matching.joinability(kept, out, cfg).value
        if abs(measured - x_percent / 100.0) <= 1.0 / 20.0:
            within_target += 1
        residual_bytes = {row.tobytes() for row in residual}
        for row in out:
            if row.tobytes() in residual_bytes:
                continue
            dists = np.linalg.norm(kept - row, axis=1)
            assert dists.min() <= cfg.tau + 1e-12
    elapsed = time.perf_counter() - start
    print(f"criterion 10: {within_target / 10:.1f}% within tolerance, "
          f"{elapsed:.0f}s")
    assert within_target >= 950
    assert elapsed < 120.0
