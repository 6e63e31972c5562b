import numpy as np
import pytest

from channelwise.claims import build_profiles
from channelwise.embedding import (
    UNK,
    EmbeddingFormatError,
    build_corpus,
    export_table,
    import_table,
    _noise_cdf,
    _sgd_pass,
    infer_event_vector,
    infer_vectors,
    train_channel_tables,
    train_pvdbow,
)
from channelwise.synth import SynthConfig, generate_cohort


def cos(a, b):
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def cluster_corpus(n_events=400, n_clusters=4, codes_per_cluster=12, bag=4, seed=0):
    """Events draw their bag from one of ``n_clusters`` disjoint code pools."""
    rng = np.random.default_rng(seed)
    corpus, cluster = [], []
    for i in range(n_events):
        k = int(rng.integers(n_clusters))
        pool = [f"c{k}_{j}" for j in range(codes_per_cluster)]
        corpus.append((f"e{i}", list(rng.choice(pool, size=bag, replace=False))))
        cluster.append(k)
    return corpus, np.array(cluster)


@pytest.fixture(scope="module")
def clustered():
    corpus, cluster = cluster_corpus()
    twin = ["c0_0", "c0_1", "c0_2", "c0_3"]
    corpus += [("twin_a", twin), ("twin_b", list(twin))]
    cluster = np.append(cluster, [0, 0])
    table = train_pvdbow(corpus, dim=16, epochs=30, seed=3)
    return corpus, cluster, table


def random_pair_cosines(table, n=2000, seed=0):
    rng = np.random.default_rng(seed)
    D = table.doc_vectors
    i, j = rng.integers(len(D), size=(2, n))
    keep = i != j
    return np.array([cos(D[a], D[b]) for a, b in zip(i[keep], j[keep])])


def test_identical_bags_are_near(clustered):
    _, _, table = clustered
    baseline = random_pair_cosines(table)
    sim = cos(table.doc_vector("twin_a"), table.doc_vector("twin_b"))
    assert sim > np.percentile(baseline, 95)


def test_disjoint_clusters_are_far(clustered):
    corpus, cluster, table = clustered
    baseline = random_pair_cosines(table)
    a = next(i for i, k in enumerate(cluster) if k == 1)
    b = next(i for i, k in enumerate(cluster) if k == 2)
    assert cos(table.doc_vectors[a], table.doc_vectors[b]) < np.median(baseline)


def test_same_cluster_beats_cross_cluster_in_bootstrap(clustered):
    _, cluster, table = clustered
    D = table.doc_vectors / np.linalg.norm(table.doc_vectors, axis=1, keepdims=True)
    rng = np.random.default_rng(1)
    wins = 0
    for _ in range(200):
        i, j = rng.integers(len(D), size=(2, 300))
        same = cluster[i] == cluster[j]
        sims = np.einsum("nm,nm->n", D[i], D[j])
        wins += sims[same & (i != j)].mean() > sims[~same].mean()
    assert wins / 200 >= 0.95


def test_determinism_m2_one_epoch():
    corpus, _ = cluster_corpus(n_events=50)
    a = train_pvdbow(corpus, dim=2, epochs=1, seed=9)
    b = train_pvdbow(corpus, dim=2, epochs=1, seed=9)
    assert np.array_equal(a.doc_vectors, b.doc_vectors)
    assert np.array_equal(a.code_vectors, b.code_vectors)


def test_bag_order_does_not_matter():
    corpus, _ = cluster_corpus(n_events=80)
    shuffled = [(e, list(reversed(codes))) for e, codes in corpus]
    a = train_pvdbow(corpus, dim=4, epochs=3, seed=2)
    b = train_pvdbow(shuffled, dim=4, epochs=3, seed=2)
    assert np.array_equal(a.doc_vectors, b.doc_vectors)


def test_rare_codes_become_unk():
    corpus = [("a", ["x", "y"]), ("b", ["x", "z"]), ("c", ["x", "y"])]
    table = train_pvdbow(corpus, dim=2, epochs=1)
    assert table.vocab == [UNK, "x", "y"]
    assert table.counts.tolist() == [1, 3, 2]


@pytest.mark.parametrize("corpus,kwargs,match", [
    ([], {}, "nonempty"),
    ([("a", ["x"])], {}, "vocabulary is empty"),
    ([("a", ["x"]), ("b", ["x"])], {"dim": 1}, "at least 2"),
])
def test_training_errors(corpus, kwargs, match):
    with pytest.raises(ValueError, match=match):
        train_pvdbow(corpus, **kwargs)


def test_inference_degenerate_bags(clustered):
    _, _, table = clustered
    assert np.array_equal(infer_event_vector(table, []), np.zeros(16))
    assert np.array_equal(infer_event_vector(table, ["never", "seen"]), np.zeros(16))


def test_inferred_vector_close_to_stored(clustered):
    corpus, _, table = clustered
    sims = [cos(infer_event_vector(table, codes), table.doc_vector(e)) for e, codes in corpus[:50]]
    assert np.median(sims) > 0.8
    assert cos(infer_event_vector(table, corpus[-1][1]), table.doc_vector("twin_b")) > 0.8


def test_repeated_bags_infer_to_nearly_one_vector(clustered):
    _, _, table = clustered
    bag = ["c1_0", "c1_4", "c1_7"]
    V = infer_vectors(table, [bag] * 40)
    start = (np.random.default_rng(table.seed).random((40, table.dim)) - 0.5) / table.dim

    def spread(X):
        return np.linalg.norm(X - X.mean(0), axis=1).mean()

    # only the uniform start differs between copies, and inference does not widen it
    assert spread(V) <= spread(start)
    assert spread(V) < 0.1 * np.linalg.norm(V.mean(0))


def test_inference_step_is_expected_sampled_step(clustered):
    # one deterministic step equals the Monte Carlo mean of sampled negative-sampling steps
    _, _, table = clustered
    bag = table.encode(["c2_1", "c2_5"])
    start = (np.random.default_rng(table.seed).random((1, table.dim)) - 0.5) / table.dim
    expected = infer_vectors(table, [[table.vocab[i] for i in bag]], steps=1, lr=0.5) - start
    rng = np.random.default_rng(1)
    cdf = _noise_cdf(table.counts)
    doc_idx, code_idx = np.zeros(len(bag), dtype=np.int64), np.array(bag)
    n = 20000
    D = np.repeat(start, n, axis=0)
    _sgd_pass(D, table.code_vectors.copy(), np.repeat(np.arange(n), len(bag)), np.tile(code_idx, n),
              cdf, table.negatives, 0.5, rng, update_codes=False)
    sampled = (D - start).mean(0)
    assert np.abs(sampled - expected[0]).max() < 5 * (D - start).std(0).max() / np.sqrt(n)


def test_vectors_for_mixes_stored_and_inferred(clustered):
    corpus, _, table = clustered
    out = table.vectors_for([corpus[0], ("new", corpus[0][1])])
    assert np.array_equal(out[0], table.doc_vector(corpus[0][0]))
    assert cos(out[0], out[1]) > 0.8


def test_round_trip_is_bitwise(clustered, tmp_path):
    _, _, table = clustered
    export_table(table, tmp_path / "t.emb")
    back = import_table(tmp_path / "t.emb", expected_dim=16, expected_channel="all")
    assert back.vocab == table.vocab and back.doc_ids == table.doc_ids
    assert np.array_equal(back.counts, table.counts)
    assert back.code_vectors.tobytes() == table.code_vectors.tobytes()
    assert back.doc_vectors.tobytes() == table.doc_vectors.tobytes()
    assert (back.seed, back.epochs, back.negatives) == (3, 30, 5)


def test_import_errors(clustered, tmp_path):
    _, _, table = clustered
    path = tmp_path / "t.emb"
    export_table(table, path)
    with pytest.raises(EmbeddingFormatError, match="expected embedding dimension 32, found 16"):
        import_table(path, expected_dim=32)
    with pytest.raises(EmbeddingFormatError, match="expected channel 'rx'"):
        import_table(path, expected_channel="rx")
    data = path.read_bytes()
    (tmp_path / "v.emb").write_bytes(b"CWEMB 2\n" + data[8:])
    with pytest.raises(EmbeddingFormatError, match="version line"):
        import_table(tmp_path / "v.emb")
    (tmp_path / "s.emb").write_bytes(data[:-8])
    with pytest.raises(EmbeddingFormatError, match="matrix block"):
        import_table(tmp_path / "s.emb")


@pytest.fixture(scope="module")
def cohort_tables():
    profiles = build_profiles(generate_cohort(SynthConfig(n_patients=60, seed=2)).records, 2016)
    return profiles, train_channel_tables(profiles, channels=("dx", "px", "rx", "all"), dim=8, epochs=2)


def test_channel_isolation(cohort_tables):
    profiles, tables = cohort_tables
    for ch in ("dx", "px", "rx"):
        own = {c for _, codes in build_corpus(profiles, ch) for c in codes}
        assert set(tables[ch].vocab[1:]) <= own
    assert set(tables["all"].vocab[1:]) == set().union(*(tables[ch].vocab[1:] for ch in ("dx", "px", "rx")))


def test_transfer_to_another_cohort(cohort_tables, tmp_path):
    _, tables = cohort_tables
    export_table(tables["rx"], tmp_path / "rx.emb")
    table = import_table(tmp_path / "rx.emb", expected_dim=8, expected_channel="rx")
    other = build_profiles(generate_cohort(SynthConfig(n_patients=30, seed=99)).records, 2016)
    docs = build_corpus(other, "rx")
    vectors = table.vectors_for(docs)
    assert vectors.shape == (len(docs), 8) and np.all(np.isfinite(vectors))


def test_foreign_table_drops_documents(cohort_tables):
    profiles, tables = cohort_tables
    table = tables["rx"]
    docs = build_corpus(profiles, "rx")
    assert table.covers(d for d, _ in docs)
    bare = table.without_documents()
    assert bare.doc_ids == [] and bare.doc_vectors.shape == (0, 8)
    assert not bare.covers([docs[0][0]])
    assert np.array_equal(bare.code_vectors, table.code_vectors)
    inferred = bare.vectors_for(docs[:3])
    assert not np.array_equal(inferred[0], table.doc_vector(docs[0][0]))
