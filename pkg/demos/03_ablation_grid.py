"""A small ablation: which design choices carry the planted signal?

Four cells cross two axes, with attention on in all of them:

  channel_wise   vs single_channel   (separate dx/px/rx streams, or one mixed stream)
  pretrained     vs trainable        (PV-DBOW tables, or embeddings learned with the model)

Each cell is trained on the same two train/validation/test shuffles.  The
report gives MAPE by entropy quintile, and a paired Wilcoxon test on
per-patient percentage errors compares the first cell with each of the others.

With a few hundred patients the shuffle-to-shuffle spread swamps the
differences between cells, so this uses 2000.

Watch the pretrained cells.  They all share one PV-DBOW table, so the
shuffles do not average over the table's own randomness.  On this cohort
the table drawn with seed 0 is an unlucky one: the channel-wise pretrained
cell lands around 42 MAPE, while tables trained with seeds 1 and 2 give
about 35 and 37 and put it back ahead of the trainable cell.  Set
``ModelConfig(seed=...)`` to draw a different table.

Run:  python3 demos/03_ablation_grid.py      (about five minutes on one core)
"""

from channelwise.claims import build_profiles
from channelwise.metrics import SplitPlan
from channelwise.predictor import ModelConfig, TrainConfig, ablation_grid, run_ablation
from channelwise.predictor.ablation import Cell
from channelwise.strata import stratify
from channelwise.synth import SynthConfig, condition_map, generate_cohort

config = SynthConfig(n_patients=2000, seed=11)
cohort = generate_cohort(config)
profiles = build_profiles(cohort.records, 2016)
strata = {a.patient_id: a for a in stratify(profiles, condition_map(config))}

cells = ablation_grid(("mode", "embedding"), base=Cell(attention=True))
print("cells:")
for c in cells:
    print("  ", c.name)

result = run_ablation(
    profiles, cells, SplitPlan(seed=0, n_shuffles=2),
    model_config=ModelConfig(embed_dim=32, hidden=16, attn_dim=16, attended_dim=16, n_layers=1),
    train_config=TrainConfig(epochs=40, patience=8),
    strata=strata,
)
if result.failures:
    print("failed cells:", result.failures)

print()
print(result.report.format_table("entropy_quintile"))

print("\npooled Wilcoxon tests against", cells[0].name)
for t in result.report.tests:
    if t["shuffle"] is None:
        print(f"  {t['other']:<45} n={t['n_pairs']:<5} p={t['p_value']:.2g}")

ref = cells[0].name
print("\ngain of the reference over each cell, top vs bottom entropy quintile (MAPE points):")
for c in cells[1:]:
    gains = {r["stratum"]: r["mape_improvement"]
             for r in result.report.improvements(c.name, ref) if r["group_by"] == "entropy_quintile"}
    print(f"  vs {c.name:<42} Q1 {gains.get('1', float('nan')):+5.1f}   Q5 {gains.get('5', float('nan')):+5.1f}")
