"""Command-line pipeline: generate, embed, train, evaluate, stratify, ablate.

Settings come from :class:`RunConfig`.  A config file holds one
``key = value`` pair per line (``#`` starts a comment, tuples are
comma-separated); ``--set key=value`` and the dedicated flags override it.
Every command writes its artifacts into ``--out-dir`` together with a
``manifest_<command>.json`` that embeds the resolved config.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import subprocess
import sys
import time
import typing
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from . import __version__
from .claims import (
    GRANULARITIES,
    ClaimsFormatError,
    aggregate_events,
    build_profiles,
    ingest_claims,
    journey_stats,
)
from .embedding import (
    EmbeddingFormatError,
    build_corpus,
    export_table,
    import_table,
    train_channel_tables,
)
from .metrics import GROUPINGS, EvaluationReport, SplitPlan, make_splits, stratified_report
from .nn import CheckpointError
from .predictor import (
    CHANNEL_ORDER,
    ChannelModel,
    ModelConfig,
    TrainConfig,
    TrainingDivergedError,
    ablation_grid,
    build_vocab,
    code_channels,
    export_attention,
    predict,
    prepare_inputs,
    run_ablation,
    train,
)
from .predictor.ablation import AXES, Cell
from .predictor.model import EMBEDDINGS, MAX_CODE_CHANNELS, MODES
from .strata import ConditionMap, stratify, write_strata
from .synth import DEFAULT_SEVERITY_MIX, SynthConfig, generate_cohort

logger = logging.getLogger("channelwise")

COMMANDS = ("generate", "embed", "train", "evaluate", "stratify", "ablate")


class CliError(Exception):
    """A user-facing failure: printed as one line, exit status 2."""


@dataclass
class RunConfig:
    # paths; empty means "inside out_dir"
    out_dir: str = "run"
    medical: str = ""
    pharmacy: str = ""
    condition_map: str = ""
    embeddings: str = ""
    model: str = ""
    # years
    observation_year: int = 2016
    result_year: int = 2017
    # synthetic cohort
    n_patients: int = 2000
    severity_mix: tuple = DEFAULT_SEVERITY_MIX
    signal_strength: float = 0.8
    # model
    seed: int = 0
    mode: str = "channel_wise"
    embedding: str = "pretrained"
    attention: bool = True
    granularity: str = "day"
    embed_dim: int = 32
    hidden: int = 16
    attn_dim: int = 16
    attended_dim: int = 16
    n_layers: int = 1
    seq_cap: int = 256
    codes: tuple = ()
    loss: str = "mse_log1p"
    optimizer: str = "adam"
    lr: float = 0.005
    epochs: int = 40
    batch_size: int = 64
    patience: int = 8
    calibrate: bool = True
    # PV-DBOW
    embed_epochs: int = 40
    embed_lr: float = 0.05
    # splits
    split_seed: int = 0
    n_shuffles: int = 20
    fractions: tuple = (0.6, 0.2, 0.2)
    shuffle: int = 0
    # ablation
    grid: tuple = ("mode", "embedding", "attention")

    def path(self, name, default):
        value = getattr(self, name)
        return Path(value) if value else Path(self.out_dir) / default

    def validate(self):
        def positive(*names):
            for n in names:
                if getattr(self, n) < 1:
                    raise CliError(f"{n} must be positive, got {getattr(self, n)}")

        positive("n_patients", "embed_dim", "hidden", "attn_dim", "attended_dim", "n_layers", "seq_cap",
                 "epochs", "batch_size", "patience", "embed_epochs", "n_shuffles")
        if self.mode not in MODES:
            raise CliError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.embedding not in EMBEDDINGS:
            raise CliError(f"embedding must be one of {EMBEDDINGS}, got {self.embedding!r}")
        if self.granularity not in GRANULARITIES:
            raise CliError(f"granularity must be one of {GRANULARITIES}, got {self.granularity!r}")
        if self.mode == "per_code" and not 0 < len(self.codes) <= MAX_CODE_CHANNELS:
            raise CliError(f"per_code mode needs between 1 and {MAX_CODE_CHANNELS} entries in codes")
        if self.loss != "mse_log1p":
            raise CliError(f"loss must be 'mse_log1p', got {self.loss!r}")
        if self.optimizer != "adam":
            raise CliError(f"optimizer must be 'adam', got {self.optimizer!r}")
        if self.lr <= 0:
            raise CliError(f"lr must be positive, got {self.lr}")
        if self.result_year != self.observation_year + 1:
            raise CliError("result_year must be observation_year + 1")
        if len(self.severity_mix) != 6 or min(self.severity_mix) < 0 or abs(sum(self.severity_mix) - 1) > 1e-9:
            raise CliError(f"severity_mix must be six nonnegative values summing to 1, "
                           f"got sum {sum(self.severity_mix):g}")
        if len(self.fractions) != 3 or min(self.fractions) < 0 or abs(sum(self.fractions) - 1) > 1e-9:
            raise CliError(f"fractions must be three nonnegative values summing to 1, got {self.fractions}")
        if not 0 <= self.shuffle < self.n_shuffles:
            raise CliError(f"shuffle must lie in [0, n_shuffles), got {self.shuffle}")
        for axis in self.grid:
            if axis not in AXES:
                raise CliError(f"grid axis {axis!r} unknown; choose from {sorted(AXES)}")
        return self

    def model_config(self):
        return ModelConfig(mode=self.mode, embedding=self.embedding, attention=self.attention,
                           granularity=self.granularity, embed_dim=self.embed_dim, hidden=self.hidden,
                           attn_dim=self.attn_dim, attended_dim=self.attended_dim, n_layers=self.n_layers,
                           seq_cap=self.seq_cap, seed=self.seed)

    def train_config(self):
        return TrainConfig(lr=self.lr, epochs=self.epochs, batch_size=self.batch_size,
                           patience=self.patience, seed=self.seed, calibrate=self.calibrate)

    def split_plan(self):
        return SplitPlan(seed=self.split_seed, n_shuffles=self.n_shuffles, fractions=tuple(self.fractions))


# ---------------------------------------------------------------- config parsing

_HINTS = typing.get_type_hints(RunConfig)


def _convert(key, text):
    if key not in _HINTS:
        raise CliError(f"unknown config key {key!r}")
    kind = _HINTS[key]
    text = text.strip()
    try:
        if kind is bool:
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        if kind is tuple:
            items = [t.strip() for t in text.split(",") if t.strip()]
            numeric = key in ("severity_mix", "fractions")
            return tuple(float(t) for t in items) if numeric else tuple(items)
        return text
    except ValueError:
        raise CliError(f"config key {key}: cannot parse {text!r} as {getattr(kind, '__name__', kind)}") from None


def read_config_file(path):
    """``{key: value}`` from a ``key = value`` file."""
    p = Path(path)
    if not p.is_file():
        raise CliError(f"config file not found: {p}")
    values = {}
    for lineno, raw in enumerate(p.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{p}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key] = _convert(key, value)
    return values


def write_config_file(config: RunConfig, path):
    with open(path, "w") as fh:
        for f in fields(RunConfig):
            value = getattr(config, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            fh.write(f"{f.name} = {value}\n")


def resolve_config(args) -> RunConfig:
    values = read_config_file(args.config) if args.config else {}
    for item in args.set or []:
        if "=" not in item:
            raise CliError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        values[key.strip()] = _convert(key.strip(), value)
    flags = dict(seed=args.seed, out_dir=args.out_dir, n_patients=getattr(args, "n", None),
                 signal_strength=getattr(args, "signal_strength", None),
                 n_shuffles=getattr(args, "shuffles", None))
    if getattr(args, "severity_mix", None) is not None:
        flags["severity_mix"] = _convert("severity_mix", args.severity_mix)
    if getattr(args, "grid", None) is not None:
        flags["grid"] = _convert("grid", args.grid)
    values.update({k: v for k, v in flags.items() if v is not None})
    return RunConfig(**values).validate()


# ---------------------------------------------------------------- helpers


def version_string():
    """``v<version>[-g<commit>[-dirty]]`` in the style of ``git describe``."""
    base = f"v{__version__}"
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--abbrev=7"],
                             cwd=Path(__file__).parent, capture_output=True, text=True, timeout=5)
    except (OSError, subprocess.SubprocessError):
        return base
    tag = out.stdout.strip()
    return f"{base}-g{tag}" if out.returncode == 0 and tag else base


def require(path, what):
    p = Path(path)
    if not p.exists():
        raise CliError(f"missing {what}: {p}")
    return p


def write_manifest(out_dir, command, config, artifacts, started, extra=None):
    manifest = dict(command=command, config=asdict(config), seed=config.seed, version=version_string(),
                    artifacts=sorted(str(a) for a in artifacts),
                    wall_time_seconds=round(time.perf_counter() - started, 3))
    if extra:
        manifest.update(extra)
    path = Path(out_dir) / f"manifest_{command}.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_profiles(config: RunConfig):
    medical = require(config.path("medical", "medical.csv"), "medical claims file")
    pharmacy = require(config.path("pharmacy", "pharmacy.csv"), "pharmacy claims file")
    records = ingest_claims(medical, pharmacy)
    profiles = build_profiles(records, config.observation_year, config.result_year)
    if len(profiles) < 10:
        raise CliError(f"only {len(profiles)} patients with observation-year claims; need at least 10")
    return profiles


def load_condition_map(config: RunConfig):
    if config.condition_map:
        return ConditionMap.read(require(config.condition_map, "condition map"))
    local = Path(config.out_dir) / "condition_map.csv"
    return ConditionMap.read(local) if local.exists() else ConditionMap.demo()


def embedding_dir(config: RunConfig):
    return config.path("embeddings", "embeddings") / config.granularity


def table_channels(mode):
    return tuple(ch for ch in CHANNEL_ORDER.get(mode, ()) if ch != "cost")


def load_tables(config: RunConfig):
    folder = embedding_dir(config)
    tables = {}
    for ch in table_channels(config.mode):
        path = require(folder / f"{ch}.emb", f"{ch} embedding table (run 'embed' first)")
        tables[ch] = import_table(path, expected_dim=config.embed_dim, expected_channel=ch)
    return tables


def build_inputs(config: RunConfig, profiles, vocabs=None):
    if config.mode == "per_code":
        return prepare_inputs(profiles, "per_code", config.embed_dim, granularity=config.granularity,
                              seq_cap=config.seq_cap, codes=list(config.codes))
    if config.embedding == "pretrained":
        tables = load_tables(config)
        agg = [aggregate_events(p, config.granularity) for p in profiles]
        for ch, table in tables.items():
            if not table.covers(d for d, _ in build_corpus(agg, ch)):
                logger.info("%s table was trained on another cohort; inferring every event vector", ch)
                tables[ch] = table.without_documents()
        return prepare_inputs(profiles, config.mode, config.embed_dim, tables=tables,
                              granularity=config.granularity, seq_cap=config.seq_cap)
    return prepare_inputs(profiles, config.mode, config.embed_dim, vocabs=vocabs,
                          granularity=config.granularity, seq_cap=config.seq_cap)


def _fmt(x):
    return repr(float(x))


# ---------------------------------------------------------------- commands


def cmd_generate(config: RunConfig):
    started = time.perf_counter()
    try:
        synth = SynthConfig(n_patients=config.n_patients, severity_mix=config.severity_mix, seed=config.seed,
                            signal_strength=config.signal_strength, observation_year=config.observation_year)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    cohort = generate_cohort(synth)
    paths = cohort.write(config.out_dir)
    manifest = write_manifest(config.out_dir, "generate", config, paths.values(), started,
                              dict(n_records=len(cohort.records)))
    n_med = sum(r.claim_kind == "medical" for r in cohort.records)
    print(f"generated {config.n_patients} patients: {n_med} medical and "
          f"{len(cohort.records) - n_med} pharmacy claims")
    for name, p in paths.items():
        print(f"  {name}: {p}")
    print(f"  manifest: {manifest}")
    return 0


def cmd_embed(config: RunConfig):
    started = time.perf_counter()
    channels = table_channels(config.mode)
    if not channels:
        raise CliError(f"mode {config.mode!r} uses no embedding tables")
    profiles = load_profiles(config)
    agg = [aggregate_events(p, config.granularity) for p in profiles]
    tables = train_channel_tables(agg, channels=channels, dim=config.embed_dim, seed=config.seed,
                                  epochs=config.embed_epochs, lr=config.embed_lr)
    folder = embedding_dir(config)
    folder.mkdir(parents=True, exist_ok=True)
    written = []
    for ch, table in tables.items():
        path = folder / f"{ch}.emb"
        export_table(table, path)
        vec_path = folder / f"{ch}_code_vectors.csv"
        with open(vec_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["code", "count"] + [f"v{k}" for k in range(table.dim)])
            for code, n, vec in zip(table.vocab, table.counts, table.code_vectors):
                w.writerow([code, int(n)] + [_fmt(v) for v in vec])
        written += [path, vec_path]
        print(f"{ch}: {len(table.vocab) - 1} codes, {len(table.doc_ids)} events -> {path}")
    write_manifest(config.out_dir, "embed", config, written, started)
    return 0


def cmd_train(config: RunConfig):
    started = time.perf_counter()
    profiles = load_profiles(config)
    plan = config.split_plan()
    train_ids, val_ids, test_ids = make_splits([p.patient_id for p in profiles], plan)[config.shuffle]
    by_id = {p.patient_id: i for i, p in enumerate(profiles)}
    vocabs, vocab_sizes = None, None
    if config.mode != "per_code" and config.embedding == "trainable":
        train_profiles = [profiles[by_id[i]] for i in train_ids]
        vocabs = {ch: build_vocab(train_profiles, ch) for ch in table_channels(config.mode)}
        vocab_sizes = {ch: max(len(v), 1) for ch, v in vocabs.items()}
    items = build_inputs(config, profiles, vocabs)
    channels = code_channels(config.codes) if config.mode == "per_code" else CHANNEL_ORDER[config.mode]
    model = ChannelModel.init(config.model_config(), channels, vocab_sizes)
    model, log = train(model, [items[by_id[i]] for i in train_ids], [items[by_id[i]] for i in val_ids],
                       config.train_config())
    out = config.path("model", "model.cwm")
    out.parent.mkdir(parents=True, exist_ok=True)
    Path(config.out_dir).mkdir(parents=True, exist_ok=True)
    extra = dict(test_ids=test_ids, shuffle=config.shuffle,
                 vocabs={ch: sorted(v, key=v.get) for ch, v in (vocabs or {}).items()},
                 codes=list(config.codes))
    model.save(out, extra)
    log_path = Path(config.out_dir) / "training_log.csv"
    with open(log_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss"])
        for e, (a, b) in enumerate(zip(log.train_loss, log.val_loss)):
            w.writerow([e, _fmt(a), _fmt(b)])
    write_manifest(config.out_dir, "train", config, [out, log_path], started,
                   dict(best_epoch=log.best_epoch, stopped_early=log.stopped_early, bias_shift=log.bias_shift,
                        n_parameters=model.count_parameters()))
    print(f"trained {model.count_parameters()} parameters; best epoch {log.best_epoch}, "
          f"validation loss {min(log.val_loss):.4f} -> {out}")
    return 0


def cmd_evaluate(config: RunConfig):
    started = time.perf_counter()
    path = require(config.path("model", "model.cwm"), "trained model (run 'train' first)")
    model = ChannelModel.load(path)
    from .nn import load_tensors
    extra = load_tensors(path)[1].get("extra", {})
    mc = model.config
    config = dataclasses.replace(config, mode=mc.mode, embedding=mc.embedding, attention=mc.attention,
                                 granularity=mc.granularity, embed_dim=mc.embed_dim, seq_cap=mc.seq_cap,
                                 codes=tuple(extra.get("codes", ())))
    profiles = load_profiles(config)
    by_id = {p.patient_id: i for i, p in enumerate(profiles)}
    test_ids = extra.get("test_ids") or []
    missing = [i for i in test_ids if i not in by_id]
    if not test_ids or missing:
        raise CliError(f"{path}: test patients {missing[:3]} not found in the claims files")
    vocabs = {ch: {c: i for i, c in enumerate(codes)} for ch, codes in extra.get("vocabs", {}).items()}
    items = build_inputs(config, profiles, vocabs or None)
    test_items = [items[by_id[i]] for i in test_ids]
    preds = predict(model, test_items)
    strata = {a.patient_id: a for a in stratify(profiles, load_condition_map(config), config.granularity)}
    report = EvaluationReport()
    name = f"{mc.mode}+{mc.embedding}+{'attention' if mc.attention else 'no_attention'}"
    report.extend(stratified_report(preds, strata, GROUPINGS, model=name, shuffle=extra.get("shuffle", 0)))
    attention_rows = []
    if mc.attention:
        for item in test_items:
            for ch, pairs in export_attention(model, item).items():
                attention_rows += [(item.patient_id, ch, day.isoformat(), w) for day, w in pairs]

    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pred_path = out / "predictions.csv"
    with open(pred_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["patient_id", "actual_cost", "predicted_cost", "raw_output"])
        for p in preds:
            w.writerow([p.patient_id, _fmt(p.actual_cost), _fmt(p.predicted_cost), _fmt(p.raw_output)])
    written = [pred_path, out / "report.csv", out / "report.json"]
    report.write_csv(out / "report.csv")
    report.write_json(out / "report.json")
    if attention_rows:
        att_path = out / "attention.csv"
        with open(att_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["patient_id", "channel", "day", "weight"])
            for pid, ch, day, weight in attention_rows:
                w.writerow([pid, ch, day, _fmt(weight)])
        written.append(att_path)
    write_manifest(out, "evaluate", config, written, started, dict(model_path=str(path)))
    for gb in ("entropy_quintile", "severity", "cost_level"):
        print(report.format_table(gb))
        print()
    return 0


def cmd_stratify(config: RunConfig):
    started = time.perf_counter()
    profiles = load_profiles(config)
    assignments = stratify(profiles, load_condition_map(config), config.granularity)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    strata_path = out / "strata.csv"
    write_strata(assignments, strata_path)
    _, averages = journey_stats(profiles)
    journey_path = out / "journey.csv"
    with open(journey_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["granularity", "providers", "codes", "claims", "events"])
        for g, s in averages.items():
            w.writerow([g, _fmt(s.providers), _fmt(s.codes), _fmt(s.claims), _fmt(s.events)])
    write_manifest(out, "stratify", config, [strata_path, journey_path], started)
    counts = {}
    for a in assignments:
        counts[a.severity] = counts.get(a.severity, 0) + 1
    print(f"stratified {len(assignments)} patients -> {strata_path}")
    for sev, n in sorted(counts.items()):
        print(f"  {sev:28s} {n}")
    return 0


def cmd_ablate(config: RunConfig):
    started = time.perf_counter()
    profiles = load_profiles(config)
    strata = {a.patient_id: a for a in stratify(profiles, load_condition_map(config), config.granularity)}
    base = Cell(config.mode, config.embedding, config.attention, config.granularity)
    cells = ablation_grid(config.grid, base)
    result = run_ablation(profiles, cells, config.split_plan(), config.model_config(), config.train_config(),
                          strata=strata, embed_options=dict(epochs=config.embed_epochs, lr=config.embed_lr),
                          reference=base)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result.report.write_csv(out / "ablation_report.csv")
    result.report.write_json(out / "ablation.json",
                             dict(cells=[c.name for c in cells], failures=[list(f) for f in result.failures]))
    write_manifest(out, "ablate", config, [out / "ablation_report.csv", out / "ablation.json"], started)
    print(f"{len(cells)}-cell ablation over {config.n_shuffles} shuffles")
    for c in cells:
        print(f"  {c.name:50s} MAPE {result.mean_mape(c):7.2f}")
    for name, s, msg in result.failures:
        print(f"  failed: {name} shuffle {s}: {msg}")
    return 0 if not result.failures else 1


HANDLERS = dict(generate=cmd_generate, embed=cmd_embed, train=cmd_train, evaluate=cmd_evaluate,
                stratify=cmd_stratify, ablate=cmd_ablate)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    common.add_argument("--seed", type=int)
    common.add_argument("--out-dir")
    common.add_argument("--serial", action="store_true",
                        help="single-threaded numerics for bit-reproducible artifacts")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="channelwise", parents=[common],
                                     description="Channel-wise healthcare cost prediction pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    gen = sub.add_parser("generate", parents=[common], help="write a synthetic claims cohort")
    gen.add_argument("--n", type=int, help="number of patients")
    gen.add_argument("--severity-mix", help="six comma-separated tier probabilities")
    gen.add_argument("--signal-strength", type=float)
    sub.add_parser("embed", parents=[common], help="train PV-DBOW tables")
    sub.add_parser("train", parents=[common], help="train one predictor on one split")
    sub.add_parser("evaluate", parents=[common], help="stratified report for a trained predictor")
    sub.add_parser("stratify", parents=[common], help="entropy quintiles and severity per patient")
    abl = sub.add_parser("ablate", parents=[common], help="train the ablation grid over shuffles")
    abl.add_argument("--grid", help="comma-separated axes, e.g. mode,embedding,attention")
    abl.add_argument("--shuffles", type=int)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = resolve_config(args)
        return HANDLERS[args.command](config)
    except (CliError, ValueError, ClaimsFormatError, CheckpointError, EmbeddingFormatError,
            TrainingDivergedError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
