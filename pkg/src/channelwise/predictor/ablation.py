"""Ablation grid: train and evaluate one model per cell per shuffle."""

from __future__ import annotations

import itertools
import logging
import time
from dataclasses import dataclass, field, replace

from ..claims import aggregate_events
from ..embedding import train_channel_tables
from ..metrics import (
    GROUPINGS,
    EvaluationReport,
    SplitPlan,
    absolute_percentage_errors,
    compare_models,
    make_splits,
    stratified_report,
)
from .inputs import CHANNEL_ORDER, build_vocab, prepare_inputs
from .model import ChannelModel, ModelConfig
from .training import TrainConfig, predict, train

logger = logging.getLogger(__name__)

AXES = {
    "mode": ("channel_wise", "single_channel"),
    "embedding": ("pretrained", "trainable"),
    "attention": (True, False),
    "granularity": ("day", "week", "month"),
}


@dataclass(frozen=True)
class Cell:
    mode: str = "channel_wise"
    embedding: str = "pretrained"
    attention: bool = True
    granularity: str = "day"

    @property
    def name(self):
        att = "attention" if self.attention else "no_attention"
        return f"{self.mode}+{self.embedding}+{att}+{self.granularity}"


def ablation_grid(axes=("mode", "embedding", "attention"), base: Cell = Cell()):
    """Cells of the cartesian product over ``axes``; other fields come from ``base``."""
    for a in axes:
        if a not in AXES:
            raise ValueError(f"unknown ablation axis {a!r}; choose from {sorted(AXES)}")
    cells = []
    for values in itertools.product(*(AXES[a] for a in axes)):
        cells.append(replace(base, **dict(zip(axes, values))))
    return cells


@dataclass
class AblationResult:
    cells: list
    report: EvaluationReport
    errors: dict = field(default_factory=dict)        # (cell name, shuffle) -> {patient_id: |A-P|/A}
    predictions: dict = field(default_factory=dict)   # (cell name, shuffle) -> [Prediction]
    failures: list = field(default_factory=list)      # (cell name, shuffle, message)
    timings: dict = field(default_factory=dict)

    def mean_mape(self, cell, group_by="overall", stratum="all"):
        return self.report.mean_mape(cell.name if isinstance(cell, Cell) else cell, group_by, stratum)


def _cell_config(base: ModelConfig, cell: Cell, shuffle):
    return replace(base, mode=cell.mode, embedding=cell.embedding, attention=cell.attention,
                   granularity=cell.granularity, seed=base.seed * 1000 + shuffle)


def run_ablation(profiles, cells, plan: SplitPlan, model_config: ModelConfig = ModelConfig(),
                 train_config: TrainConfig = TrainConfig(), strata=None, tables=None,
                 group_by=GROUPINGS, embed_options=None, reference=None, keep_predictions=False):
    """Train every cell on every shuffle of ``plan`` and collect a stratified report.

    Pretrained cells share one set of PV-DBOW tables per granularity
    (trained on the whole cohort unless ``tables`` is given).  A cell that
    raises is recorded in ``failures`` and the run continues.  Wilcoxon
    tests compare ``reference`` (default: the first cell) against every
    other cell, per shuffle and pooled over shuffles.
    """
    cells = list(cells)
    if not cells:
        raise ValueError("ablation grid is empty")
    by_id = {p.patient_id: i for i, p in enumerate(profiles)}
    partitions = plan.partitions or make_splits(list(by_id), plan)
    strata = strata or {}
    groupings = tuple(g for g in group_by if g == "cost_level" or strata)
    result = AblationResult(cells, EvaluationReport())
    table_cache = {}
    input_cache = {}
    m = model_config.embed_dim

    def tables_for(granularity):
        if tables is not None:
            return tables
        if granularity not in table_cache:
            agg = [aggregate_events(p, granularity) for p in profiles]
            needed = tuple(sorted({ch for c in cells if c.embedding == "pretrained"
                                   for ch in CHANNEL_ORDER[c.mode] if ch != "cost"}))
            table_cache[granularity] = train_channel_tables(
                agg, channels=needed, dim=m, seed=model_config.seed, **(embed_options or {}))
        return table_cache[granularity]

    for s, (train_ids, val_ids, test_ids) in enumerate(partitions):
        for cell in cells:
            key = (cell.name, s)
            t0 = time.perf_counter()
            try:
                cfg = _cell_config(model_config, cell, s)
                channels = CHANNEL_ORDER[cell.mode]
                if cell.embedding == "pretrained":
                    ck = (cell.mode, cell.granularity)
                    if ck not in input_cache:
                        input_cache[ck] = prepare_inputs(
                            profiles, cell.mode, m, tables=tables_for(cell.granularity),
                            granularity=cell.granularity, seq_cap=cfg.seq_cap)
                    items = input_cache[ck]
                    vocab_sizes = None
                else:
                    train_profiles = [profiles[by_id[i]] for i in train_ids]
                    vocabs = {ch: build_vocab(train_profiles, ch) for ch in channels if ch != "cost"}
                    items = prepare_inputs(profiles, cell.mode, m, vocabs=vocabs,
                                           granularity=cell.granularity, seq_cap=cfg.seq_cap)
                    vocab_sizes = {ch: max(len(v), 1) for ch, v in vocabs.items()}
                model = ChannelModel.init(cfg, channels, vocab_sizes)
                tcfg = replace(train_config, seed=train_config.seed * 1000 + s)
                model, _ = train(model, [items[by_id[i]] for i in train_ids],
                                 [items[by_id[i]] for i in val_ids], tcfg)
                preds = predict(model, [items[by_id[i]] for i in test_ids])
            except Exception as exc:  # recorded, the grid goes on
                logger.exception("cell %s shuffle %d failed", cell.name, s)
                result.failures.append((cell.name, s, f"{type(exc).__name__}: {exc}"))
                continue
            result.timings[key] = time.perf_counter() - t0
            result.report.extend(stratified_report(preds, strata, groupings, model=cell.name, shuffle=s))
            result.errors[key] = absolute_percentage_errors(preds)
            if keep_predictions:
                result.predictions[key] = preds
            logger.info("shuffle %d %s: %.1fs", s, cell.name, result.timings[key])
    result.report.tests = significance_tests(result, reference or cells[0])
    return result


def significance_tests(result: AblationResult, reference):
    """Wilcoxon tests of ``reference`` against every other cell, per shuffle and pooled."""
    ref = reference.name if isinstance(reference, Cell) else reference
    tests = []
    shuffles = sorted({s for _, s in result.errors})
    for cell in result.cells:
        if cell.name == ref:
            continue
        pooled_a, pooled_b = {}, {}
        for s in shuffles:
            a = result.errors.get((ref, s))
            b = result.errors.get((cell.name, s))
            if a is None or b is None:
                continue
            pooled_a.update({(s, k): v for k, v in a.items()})
            pooled_b.update({(s, k): v for k, v in b.items()})
            t = _safe_compare(a, b, f"shuffle {s}")
            t.update(reference=ref, other=cell.name, shuffle=s)
            tests.append(t)
        if pooled_a:
            t = _safe_compare(pooled_a, pooled_b, "pooled")
            t.update(reference=ref, other=cell.name, shuffle=None)
            tests.append(t)
    return tests


def _safe_compare(a, b, scope):
    try:
        return compare_models(a, b, scope)
    except ValueError as exc:
        return dict(scope=scope, n_pairs=len(set(a) & set(b)), n_nonzero=None, statistic=None,
                    p_value=None, method="unavailable", flagged=True, note=str(exc))
