import numpy as np
import pytest

from cdvslite.evaluation import (
    RankedList,
    compute_map,
    compute_roc,
    average_precision,
    export_csv,
    export_map_table,
    export_rankings,
    export_roc,
    local_matches,
    match_pair,
    read_csv,
    read_ground_truth,
    read_pairs,
    read_table,
    retrieve,
    retrieve_all,
    top_match_accuracy,
    tpr_at_fpr,
)
from cdvslite.pipeline import encode_image
from cdvslite.scfv import ModelMismatch
from cdvslite.synthetic import Transform, noise_image


def ranked(qid, ids):
    return RankedList(qid, tuple((i, float(-k)) for k, i in enumerate(ids)))


# the same 100-pair score set feeds the interpolation test and the acceptance suite
def hundred_pairs():
    pos = [0.50 + 0.01 * i for i in range(50)]
    neg = [0.01 * j for j in range(48)] + [0.955, 0.705]
    return np.array(pos + neg), np.array([1] * 50 + [0] * 50)


@pytest.fixture(scope="module")
def encoded(bundle, eval_images):
    return {f"img{i}": encode_image(img, bundle, "4K") for i, img in enumerate(eval_images[:6])}


def test_ap_worked_examples():
    assert compute_map([ranked("q", ["a", "b", "x", "y"])], {"q": {"a", "b"}}) == 1.0
    ids = ["x", "a"] + [f"n{i}" for i in range(8)]
    assert average_precision(ids, {"a"}) == 0.5
    assert average_precision(["a", "x", "b"], {"a", "b"}) == pytest.approx(0.8333, abs=5e-5)
    assert average_precision(["a", "x", "b"], {"a", "b"}) == (1 / 1 + 2 / 3) / 2


def test_map_is_mean_of_ap():
    r = [ranked("q1", ["a", "x"]), ranked("q2", ["x", "b"])]
    assert compute_map(r, {"q1": {"a"}, "q2": {"b"}}) == 0.75


def test_unretrieved_relevant_counts_zero():
    assert average_precision(["a", "x"], {"a", "b"}) == 0.5


def test_irrelevant_tail_does_not_change_map():
    gt = {"q": {"a", "c"}}
    base = compute_map([ranked("q", ["a", "b", "c"])], gt)
    assert compute_map([ranked("q", ["a", "b", "c", "d", "e", "f"])], gt) == base


def test_query_without_relevant_items_excluded():
    r = [ranked("q1", ["a"]), ranked("q2", ["b"])]
    with pytest.warns(UserWarning, match="q2"):
        assert compute_map(r, {"q1": {"a"}}) == 1.0
    with pytest.raises(ValueError), pytest.warns(UserWarning):
        compute_map([ranked("q3", ["a"])], {})


def test_top_match_accuracy():
    r = [ranked("q1", ["a", "b"]), ranked("q2", ["x", "b"])]
    assert top_match_accuracy(r, {"q1": {"a"}, "q2": {"b"}}) == 0.5


def test_roc_confusion_counts():
    roc = compute_roc([0.9, 0.8, 0.4, 0.1], [1, 1, 0, 0], thresholds=[0.5])
    assert roc.tpr.tolist() == [1.0] and roc.fpr.tolist() == [0.0]


def test_roc_separable_passes_through_corner():
    roc = compute_roc([0.9, 0.8, 0.4, 0.1], [1, 1, 0, 0])
    pts = set(zip(roc.fpr.tolist(), roc.tpr.tolist()))
    assert (0.0, 1.0) in pts and (0.0, 0.0) in pts and (1.0, 1.0) in pts


def test_roc_constant_scores_degenerate():
    roc = compute_roc([0.3] * 6, [1, 0, 1, 0, 0, 1])
    assert list(zip(roc.fpr, roc.tpr)) == [(0.0, 0.0), (1.0, 1.0)]


def test_roc_monotone(rng):
    s = rng.normal(size=300)
    y = (s + rng.normal(size=300) > 0).astype(int)
    roc = compute_roc(s, y)
    assert np.all(np.diff(roc.fpr) >= 0) and np.all(np.diff(roc.tpr) >= 0)


def test_roc_errors():
    with pytest.raises(ValueError):
        compute_roc([0.1, 0.2], [1, 1])
    with pytest.raises(ValueError):
        compute_roc([0.1, 0.2], [1, 2])
    with pytest.raises(ValueError):
        compute_roc([0.1], [1, 0])


def test_tpr_at_fpr_hundred_pairs():
    s, y = hundred_pairs()
    roc = compute_roc(s, y)
    # FPR 0 reaches TPR 4/50; FPR 0.02 reaches 29/50; 0.01 lies halfway
    assert tpr_at_fpr(roc, 0.01) == pytest.approx(0.33, abs=1e-12)
    assert roc.tpr_at_fpr(0.0) == 0.08
    assert roc.tpr_at_fpr(1.0) == 1.0


def test_csv_round_trip(tmp_path):
    p = tmp_path / "map.csv"
    entries = [("4K", 0.1 + 0.2, 1 / 3), ("16K", 0.9, 1.0)]
    export_map_table(p, entries)
    t = read_table(p)
    assert t["mode"] == ["4K", "16K"]
    assert t["map"] == [0.1 + 0.2, 0.9] and t["top_match"] == [1 / 3, 1.0]


def test_csv_empty_and_small_roc(tmp_path):
    p = tmp_path / "empty.csv"
    export_csv(p, ("a", "b"), [])
    assert p.read_text() == "a,b\n"
    q = tmp_path / "roc.csv"
    roc = compute_roc([0.9, 0.1], [1, 0])
    assert len(roc.fpr) == 3
    export_roc(q, roc)
    assert len(q.read_text().splitlines()) == 4


def test_rankings_export(tmp_path):
    p = tmp_path / "r.csv"
    export_rankings(p, [ranked("q", ["a", "b"])])
    header, rows = read_csv(p)
    assert header == ["query_id", "rank", "item_id", "score"]
    assert [r[:3] for r in rows] == [["q", "1", "a"], ["q", "2", "b"]]


def test_ground_truth_and_pairs_readers(tmp_path):
    gt = tmp_path / "gt.csv"
    gt.write_text("query_id,relevant_id\nq1,a\nq1,b\nq2,c\n")
    assert read_ground_truth(gt) == {"q1": {"a", "b"}, "q2": {"c"}}
    gt.write_text("q1,a\n")
    assert read_ground_truth(gt) == {"q1": {"a"}}
    pairs = tmp_path / "p.csv"
    pairs.write_text("id_a,id_b,label\nx,y,1\nx,z,0\n")
    assert read_pairs(pairs) == [("x", "y", 1), ("x", "z", 0)]
    pairs.write_text("x,y,2\n")
    with pytest.raises(ValueError):
        read_pairs(pairs)


def test_self_match(encoded):
    e = encoded["img0"]
    r = match_pair(e, e)
    assert r.global_similarity == 1.0
    assert r.local_match_count == len(e.codes) > 0


def test_match_symmetric_global(encoded):
    a, b = encoded["img1"], encoded["img2"]
    assert match_pair(a, b).global_similarity == match_pair(b, a).global_similarity


def noise_match_fractions(bundle, mode, n=4):
    encs = [encode_image(noise_image(100 + i), bundle, mode) for i in range(n)]
    out = []
    for i in range(n):
        for j in range(i + 1, n):
            r = match_pair(encs[i], encs[j])
            out.append(r.local_match_count / min(r.n_features_a, r.n_features_b))
    return out


def test_noise_pairs_rarely_match(bundle):
    assert max(noise_match_fractions(bundle, "16K")) <= 0.05


@pytest.mark.xfail(strict=True, reason="short 4K codes let about 6% of noise descriptors pass the 0.85 ratio test")
def test_noise_pairs_rarely_match_at_4k(bundle):
    assert max(noise_match_fractions(bundle, "4K")) <= 0.05


def test_transformed_pair_matches_more_than_unrelated(bundle, eval_images, encoded):
    t = Transform(1, 0.75, 0.7)
    q = encode_image(t.apply(eval_images[0]), bundle, "4K")
    same = match_pair(q, encoded["img0"]).local_match_count
    other = max(match_pair(q, encoded[k]).local_match_count for k in encoded if k != "img0")
    assert same > other


def test_matching_requires_same_mode_and_model(bundle, eval_images, encoded):
    e2 = encode_image(eval_images[0], bundle, "2K")
    with pytest.raises(ModelMismatch):
        match_pair(encoded["img0"], e2)
    with pytest.raises(ModelMismatch):
        retrieve(e2, encoded)


def test_local_matches_are_one_to_one(encoded):
    m = local_matches(encoded["img3"], encoded["img4"])
    assert len({i for i, _ in m}) == len(m) == len({j for _, j in m})


def test_retrieve_self_first_and_single_item(encoded):
    for k, e in encoded.items():
        assert retrieve(e, encoded).ids[0] == k
    assert retrieve(encoded["img0"], {"only": encoded["img5"]}).ids == ["only"]
    with pytest.raises(ValueError):
        retrieve(encoded["img0"], {})


def test_rerank_keeps_candidate_membership(encoded):
    q = encoded["img2"]
    for depth in (1, 3, 6):
        glob = retrieve(q, encoded, depth=0).ids
        rer = retrieve(q, encoded, depth=depth).ids
        assert set(rer[:depth]) == set(glob[:depth])
        assert rer[depth:] == glob[depth:]


def test_ranked_scores_non_increasing(encoded):
    r = retrieve(encoded["img1"], encoded, top_r=4)
    scores = [s for _, s in r.items]
    assert len(scores) == 4 and scores == sorted(scores, reverse=True)


def test_retrieve_all_self_map(encoded):
    lists = retrieve_all(encoded, encoded, workers=3)
    assert [r.query_id for r in lists] == sorted(encoded)
    assert compute_map(lists, {k: {k} for k in encoded}) == 1.0
