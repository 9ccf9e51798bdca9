"""
Three training stages on a synthetic cohort
===========================================

Stage 1 trains one graph encoder per modality.  Stage 2 trains a fresh
fusion model whose pooled embeddings are pulled toward the frozen stage-1
teachers and toward each other.  Stage 3 freezes that trunk, clones each
single expert into a mixture and trains only the routing, the experts and
the output layers.  Takes about a minute on a laptop.
"""

# %%
import numpy as np

from m3dbfs import RunConfig
from m3dbfs.braindata import synth_generate, stratified_holdout
from m3dbfs.numcore import no_grad
from m3dbfs.pipeline import (
    build_stage3,
    collate,
    evaluate,
    load_stage1,
    load_stage2,
    report_a,
    report_b,
    routing_counts,
    run_pipeline,
    train_stage3,
)

cfg = RunConfig(n_samples=120, n_regions=20, gcn_hidden=32, embed_dim=32, token_dim=32,
                max_epochs=20, patience=20, seed=0)
data = synth_generate(cfg.synth_config())
train_idx, test_idx = stratified_holdout(data.labels, 0.2, seed=0)
train, test = data.subset(train_idx), data.subset(test_idx)

result = run_pipeline(train, cfg, seed=0)

# %%
# Held-out accuracy of each stage.
stage1 = load_stage1(result.stage1, cfg)
stage2 = load_stage2(result.stage2, cfg)
print("stage 1 SC:", evaluate(stage1, test, "SC").acc)
print("stage 1 FC:", evaluate(stage1, test, "FC").acc)
print("stage 2   :", evaluate(stage2, test).acc)
print("stage 3   :", evaluate(result.model, test).acc)

# %%
# Before any stage-3 step, the mixture model reproduces stage 2: all
# experts are copies and the output layers start from the stage-2 head.
fresh = build_stage3(result.stage2, cfg, seed=1)
batch = collate(list(test))
with no_grad():
    gap = np.abs(fresh(batch).logits.data - stage2(batch).logits.data).max()
print("stage-3 init vs stage 2, max logit difference:", gap)

# %%
# The trunk really stayed frozen.
same = all(result.stage3.tensors[n].tobytes() == result.stage2.tensors[n].tobytes()
           for n in result.stage3.tensors if result.stage3.frozen[n])
print("frozen weights identical to stage 2:", same)

# %%
# Expert usage at inference.  Report A: share of tokens per expert in each
# block.  Report B: for the fusion experts, how many of their tokens came
# from SC regions versus FC regions.
counts = routing_counts(result.model, data)
for row in report_a(counts):
    if row[0] == "Fusion":
        print("fusion layer %d expert %d: %.3f" % (row[1], row[2], row[4]))
for layer, expert, tokens, sc, fc in report_b(counts):
    print(f"layer {layer} expert {expert}: {tokens} tokens, SC:FC = {sc:.2f}:{fc:.2f}")

# %%
# The same stage 3 without the balance term.  Routing tends to concentrate
# on fewer experts; compare the importance CV^2 over the last epochs.
ablated = train_stage3(train, result.stage2, cfg.replace(moe_loss=False), seed=0)
last = lambda h: np.mean([row["fusion_cv2"] for row in h[-10:]])  # noqa: E731
print("fusion CV^2, balance term on :", last(result.stage3.history))
print("fusion CV^2, balance term off:", last(ablated.history))
