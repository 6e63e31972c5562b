"""Per-channel input sequences for the cost model.

Channel-wise mode emits four sequences per patient, in this fixed order::

    dx:   [V_dx(event); dt]        medical days
    px:   [V_px(event); dt]        medical days
    rx:   [V_rx(event); dt]        pharmacy days
    cost: [log1p(medical $); log1p(pharmacy $); dt]   every claim day

Single-channel mode emits one ``all`` sequence of
``[V_all(event); log1p(total $); dt]``.  ``dt`` is ``log1p`` of the gap to the
previous event of the same channel (0 for the first).  A channel without
events becomes one all-zero step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..claims import PatientProfile, aggregate_events, unit_gap
from ..embedding import event_id

CHANNEL_ORDER = {"channel_wise": ("dx", "px", "rx", "cost"), "single_channel": ("all",)}
CODE_CHANNELS = ("dx", "px", "rx", "all")


@dataclass
class ChannelSequence:
    values: np.ndarray            # (L, width); embedding slot is zero in trainable mode
    days: list                    # event day per step (empty for the sentinel step)
    bags: list | None = None      # code-id lists per step (trainable mode)


@dataclass
class PatientInputs:
    patient_id: str
    channels: dict[str, ChannelSequence]
    target: float


def input_width(channel, embed_dim):
    if channel.startswith("code:"):
        return 2
    if channel == "cost":
        return 3
    if channel == "all":
        return embed_dim + 2
    return embed_dim + 1


def code_channels(codes):
    """Channel names of one-channel-per-code mode: one per code, then the cost channel."""
    return tuple(f"code:{c}" for c in codes) + ("cost",)


def _events_for(profile, channel):
    if channel.startswith("code:"):
        code = channel[5:]
        return [e for e in profile.events if code in e.codes]
    return profile.events if channel in ("cost", "all") else profile.channel_events(channel)


def _gaps(profile, events):
    return [0] + [unit_gap(a.day, b.day, profile.granularity) for a, b in zip(events, events[1:])]


def prepare_inputs(profiles, mode, embed_dim, tables=None, vocabs=None, granularity="day",
                   seq_cap=256, infer_steps=20, codes=None):
    """Inputs for every profile.

    ``tables`` (channel -> EmbeddingTable) selects pretrained mode;
    ``vocabs`` (channel -> {code: id}) selects trainable mode.  Exactly one
    must be given, except in ``per_code`` mode, which takes the code list
    ``codes`` and feeds each channel ``[log1p(count of the code); dt]``.
    """
    if mode == "per_code":
        if not codes:
            raise ValueError("per_code mode needs a code list")
        channels = code_channels(codes)
    else:
        if (tables is None) == (vocabs is None):
            raise ValueError("pass either pretrained tables or trainable vocabularies")
        channels = CHANNEL_ORDER[mode]
    profiles = [aggregate_events(p, granularity) for p in profiles]
    seqs = {}
    for ch in channels:
        width = input_width(ch, embed_dim)
        per_patient = []
        docs = []
        for p in profiles:
            evs = _events_for(p, ch)[-seq_cap:]
            gaps = _gaps(p, _events_for(p, ch))[-seq_cap:]
            vals = np.zeros((max(len(evs), 1), width))
            if evs:
                vals[:, -1] = np.log1p(gaps)
                if ch.startswith("code:"):
                    vals[:, 0] = np.log1p([list(e.codes).count(ch[5:]) for e in evs])
                elif ch == "cost":
                    vals[:, 0] = np.log1p([e.medical_cost for e in evs])
                    vals[:, 1] = np.log1p([e.pharmacy_cost for e in evs])
                elif ch == "all":
                    vals[:, -2] = np.log1p([e.total_cost for e in evs])
            bags = None
            if ch in CODE_CHANNELS:
                bags_codes = [e.channel_codes(ch) for e in evs]
                if vocabs is not None:
                    vocab = vocabs[ch]
                    bags = [[vocab[c] for c in sorted(b) if c in vocab] for b in bags_codes] or [[]]
                else:
                    docs.append([(event_id(p.patient_id, e.day), b) for e, b in zip(evs, bags_codes)])
            per_patient.append(ChannelSequence(vals, [e.day for e in evs], bags))
        if tables is not None and ch in CODE_CHANNELS:
            flat = [d for patient_docs in docs for d in patient_docs]
            vecs = tables[ch].vectors_for(flat, steps=infer_steps) if flat else np.zeros((0, embed_dim))
            if vecs.shape[1] != embed_dim:
                raise ValueError(f"{ch} table has dimension {vecs.shape[1]}, model expects {embed_dim}")
            k = 0
            for seq, patient_docs in zip(per_patient, docs):
                n = len(patient_docs)
                seq.values[:n, :embed_dim] = vecs[k:k + n]
                k += n
        seqs[ch] = per_patient
    return [
        PatientInputs(p.patient_id, {ch: seqs[ch][i] for ch in channels}, p.target_cost)
        for i, p in enumerate(profiles)
    ]


def build_vocab(profiles, channel, min_count=1):
    """Trainable-embedding vocabulary: code -> row id, sorted by code."""
    counts = {}
    for p in profiles:
        for e in p.events:
            for c in e.channel_codes(channel):
                counts[c] = counts.get(c, 0) + 1
    return {c: i for i, c in enumerate(sorted(c for c, n in counts.items() if n >= min_count))}


@dataclass
class Batch:
    X: np.ndarray                 # (C, B, T, I)
    mask: np.ndarray              # (C, B, T)
    lengths: np.ndarray           # (C, B)
    bag_mats: dict                # channel -> CSR (B*T, V) averaging matrix
    targets: np.ndarray           # (B,)
    patient_ids: list


def collate(items, channels, embed_dim, vocab_sizes=None):
    C, B = len(channels), len(items)
    lengths = np.array([[len(it.channels[ch].values) for it in items] for ch in channels])
    T = int(lengths.max())
    I = max(input_width(ch, embed_dim) for ch in channels)
    X = np.zeros((C, B, T, I))
    for c, ch in enumerate(channels):
        for b, it in enumerate(items):
            v = it.channels[ch].values
            X[c, b, : len(v), : v.shape[1]] = v
    mask = np.arange(T)[None, None, :] < lengths[..., None]
    bag_mats = {}
    if vocab_sizes:
        for ch in channels:
            if ch not in vocab_sizes:
                continue
            rows, cols, vals = [], [], []
            for b, it in enumerate(items):
                for t, bag in enumerate(it.channels[ch].bags or []):
                    if bag:
                        w = 1.0 / len(bag)
                        rows.extend([b * T + t] * len(bag))
                        cols.extend(bag)
                        vals.extend([w] * len(bag))
            bag_mats[ch] = sp.csr_matrix((vals, (rows, cols)), shape=(B * T, vocab_sizes[ch]))
    targets = np.log1p(np.array([it.target for it in items], dtype=float))
    return Batch(X, mask, lengths, bag_mats, targets, [it.patient_id for it in items])


def build_channel_inputs(profile: PatientProfile, mode, embed_dim, tables=None, vocabs=None, **kwargs):
    """Inputs of a single patient; see :func:`prepare_inputs`."""
    return prepare_inputs([profile], mode, embed_dim, tables=tables, vocabs=vocabs, **kwargs)[0]
