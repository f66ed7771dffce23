"""Retrieval and pair verification on a small synthetic corpus.

Run: python3 demos/03_retrieval_eval.py
"""

# %% Index 20 synthetic images at 4K
import itertools

from cdvslite import synthetic
from cdvslite.evaluation import compute_map, compute_roc, match_pair, retrieve_all, top_match_accuracy, tpr_at_fpr
from cdvslite.pipeline import default_bundle, encode_image

bundle = default_bundle()
images = synthetic.corpus(20, seed=7)
index = {f"img{i:02d}": encode_image(img, bundle, "4K") for i, img in enumerate(images)}
truth = {k: {k} for k in index}

# %% Queries are rotated, downscaled and blurred copies of the indexed images
tr = synthetic.Transform(quarter_turns=1, scale=0.75, blur=0.7)
queries = {k: encode_image(tr.apply(img), bundle, "4K") for k, img in zip(index, images)}
global_only = retrieve_all(queries, index, depth=0)
reranked = retrieve_all(queries, index)
print(f"global only : mAP {compute_map(global_only, truth):.3f}, top match {top_match_accuracy(global_only, truth):.3f}")
print(f"with rerank : mAP {compute_map(reranked, truth):.3f}, top match {top_match_accuracy(reranked, truth):.3f}")

# %% Pair verification: matching pairs against all non-matching pairs
scores, labels = [], []
for k in index:
    scores.append(match_pair(queries[k], index[k]).local_match_count)
    labels.append(1)
for a, b in itertools.combinations(list(index)[:10], 2):
    scores.append(match_pair(queries[a], index[b]).local_match_count)
    labels.append(0)
roc = compute_roc(scores, labels)
print(f"{sum(labels)} matching / {len(labels) - sum(labels)} non-matching pairs, "
      f"TPR at FPR 1%: {tpr_at_fpr(roc, 0.01):.3f}")
