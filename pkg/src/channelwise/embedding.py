"""PV-DBOW event embeddings: each claim event is a document, its codes are the words.

A document vector is trained to predict every code in its bag through
negative sampling against a shared output matrix of code vectors.  Codes in
a bag are sorted before any sampling, so a bag's order never matters.

Table file layout (all integers decimal, floats little-endian float64)::

    CWEMB 1\\n
    <JSON header>\\n       channel, dim, vocab_size, n_docs, seed, epochs,
                           negatives, min_count
    vocab_size lines       <code>\\t<count>\\n     (row 0 is the UNK token)
    n_docs lines           <doc id>\\n
    vocab_size*dim float64 code (output) vectors, row-major
    n_docs*dim float64     document vectors, row-major
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

logger = logging.getLogger(__name__)

UNK = "<UNK>"
MAGIC = b"CWEMB 1\n"
EMBED_CHANNELS = ("dx", "px", "rx", "all")


class EmbeddingFormatError(ValueError):
    pass


@dataclass
class EmbeddingTable:
    channel: str
    dim: int
    vocab: list[str]
    counts: np.ndarray
    code_vectors: np.ndarray
    doc_ids: list[str] = field(default_factory=list)
    doc_vectors: np.ndarray | None = None
    seed: int = 0
    epochs: int = 0
    negatives: int = 5
    min_count: int = 2

    def __post_init__(self):
        if self.doc_vectors is None:
            self.doc_vectors = np.zeros((0, self.dim))
        if self.code_vectors.shape != (len(self.vocab), self.dim):
            raise EmbeddingFormatError(
                f"code matrix {self.code_vectors.shape} does not match vocab {len(self.vocab)} x dim {self.dim}")
        if self.doc_vectors.shape != (len(self.doc_ids), self.dim):
            raise EmbeddingFormatError(
                f"doc matrix {self.doc_vectors.shape} does not match {len(self.doc_ids)} docs x dim {self.dim}")
        self._code_index = {c: i for i, c in enumerate(self.vocab)}
        self._doc_index = {d: i for i, d in enumerate(self.doc_ids)}

    def code_id(self, code):
        return self._code_index.get(code, 0)

    def encode(self, codes):
        """Sorted known-code ids of a bag; unknown codes (UNK) are dropped."""
        ids = (self.code_id(c) for c in sorted(codes))
        return [i for i in ids if i != 0]

    def doc_vector(self, doc_id):
        i = self._doc_index.get(doc_id)
        return None if i is None else self.doc_vectors[i]

    def without_documents(self):
        """Copy that keeps only the code side, so every vector is inferred.

        Use it when the table comes from another cohort: document ids are
        ``patient|day`` and may collide with unrelated events there.
        """
        return replace(self, doc_ids=[], doc_vectors=None)

    def covers(self, doc_ids):
        return all(d in self._doc_index for d in doc_ids)

    def vectors_for(self, docs, steps=20):
        """Vectors for ``(doc_id, codes)`` pairs: stored when known, inferred otherwise."""
        out = np.zeros((len(docs), self.dim))
        missing = []
        for k, (doc_id, codes) in enumerate(docs):
            i = self._doc_index.get(doc_id)
            if i is None:
                missing.append(k)
            else:
                out[k] = self.doc_vectors[i]
        if missing:
            out[missing] = infer_vectors(self, [docs[k][1] for k in missing], steps=steps)
        return out


def _noise_cdf(counts):
    weights = counts.astype(float) ** 0.75
    weights[0] = 0.0
    cdf = np.cumsum(weights)
    return cdf / cdf[-1]


def _sgd_pass(D, W, doc_idx, code_idx, cdf, negatives, lr, rng, update_codes=True):
    """One negative-sampling update for a batch of (doc, code) pairs."""
    d = D[doc_idx]
    neg = np.searchsorted(cdf, rng.random((len(code_idx), negatives)), side="right")
    neg = np.minimum(neg, len(cdf) - 1)
    targets = np.concatenate([code_idx[:, None], neg], axis=1)
    labels = np.zeros(targets.shape)
    labels[:, 0] = 1.0
    keep = np.ones(targets.shape)
    keep[:, 1:] = neg != code_idx[:, None]
    w = W[targets]
    score = np.einsum("nm,nkm->nk", d, w)
    g = (labels - 1.0 / (1.0 + np.exp(-np.clip(score, -30, 30)))) * keep * lr
    np.add.at(D, doc_idx, np.einsum("nk,nkm->nm", g, w))
    if update_codes:
        np.add.at(W, targets.ravel(), (g[:, :, None] * d[:, None, :]).reshape(-1, d.shape[1]))


def _pairs(bags):
    doc_idx = np.fromiter((i for i, b in enumerate(bags) for _ in b), dtype=np.int64)
    code_idx = np.fromiter((c for b in bags for c in b), dtype=np.int64)
    return doc_idx, code_idx


def train_pvdbow(events, dim=64, epochs=40, negatives=5, seed=0, min_count=2, channel="all",
                 lr=0.05, min_lr=0.0001, batch_size=512):
    """Train document vectors for ``events``, a sequence of ``(event_id, codes)``.

    Runs serially in a fixed order, so the result is a pure function of the
    inputs and ``seed``.  Codes seen fewer than ``min_count`` times become UNK.
    """
    events = list(events)
    if not events:
        raise ValueError("train_pvdbow needs a nonempty corpus")
    if dim < 2:
        raise ValueError("embedding dimension must be at least 2")
    counts = Counter(c for _, codes in events for c in codes)
    kept = sorted(c for c, n in counts.items() if n >= min_count)
    if not kept:
        raise ValueError(f"vocabulary is empty after dropping codes seen fewer than {min_count} times")
    vocab = [UNK] + kept
    unk_count = sum(n for c, n in counts.items() if n < min_count)
    count_arr = np.array([unk_count] + [counts[c] for c in kept], dtype=np.int64)
    rng = np.random.default_rng(seed)
    D = (rng.random((len(events), dim)) - 0.5) / dim
    W = np.zeros((len(vocab), dim))
    table = EmbeddingTable(channel=channel, dim=dim, vocab=vocab, counts=count_arr, code_vectors=W,
                           doc_ids=[str(e) for e, _ in events], doc_vectors=D, seed=seed,
                           epochs=epochs, negatives=negatives, min_count=min_count)
    bags = [table.encode(codes) for _, codes in events]
    for i, b in enumerate(bags):
        if not b:
            D[i] = 0.0
    doc_idx, code_idx = _pairs(bags)
    cdf = _noise_cdf(count_arr)
    n = len(doc_idx)
    total = max(epochs * n, 1)
    seen = 0
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            sel = order[start:start + batch_size]
            rate = lr - (lr - min_lr) * seen / total
            _sgd_pass(D, W, doc_idx[sel], code_idx[sel], cdf, negatives, rate, rng)
            seen += len(sel)
    return table


def infer_vectors(table: EmbeddingTable, bags, steps=20, lr=0.025, min_lr=0.0001, chunk=8192):
    """Fit fresh document vectors for code bags against the frozen code matrix.

    Each step is one full-batch gradient step on the negative-sampling
    objective, with the sampled negatives replaced by their expectation under
    the noise distribution (a bag's own code is excluded, as in training).
    Sampling negatives here left identical bags scattered around a third of
    their norm apart.  Vectors start from the same uniform draw as training.
    Bags with no known code get the zero vector.
    """
    encoded = [table.encode(b) for b in bags]
    rng = np.random.default_rng(table.seed)
    D = (rng.random((len(encoded), table.dim)) - 0.5) / table.dim
    W = table.code_vectors
    noise = np.diff(_noise_cdf(table.counts), prepend=0.0)
    for start in range(0, len(encoded), chunk):
        part = encoded[start:start + chunk]
        C = np.zeros((len(part), len(W)))
        doc_idx, code_idx = _pairs(part)
        np.add.at(C, (doc_idx, code_idx), 1.0)
        negative = table.negatives * (C.sum(1, keepdims=True) - C) * noise
        d = D[start:start + chunk]
        for k in range(steps):
            rate = lr - (lr - min_lr) * k / max(steps, 1)
            p = expit(d @ W.T)
            d += rate * ((C * (1.0 - p) - negative * p) @ W)
    D[[not b for b in encoded]] = 0.0
    return D


def infer_event_vector(table: EmbeddingTable, codes, steps=20):
    """Vector of length ``table.dim`` for one bag of codes."""
    return infer_vectors(table, [list(codes)], steps=steps)[0]


def event_id(patient_id, day):
    return f"{patient_id}|{day.isoformat()}"


def build_corpus(profiles, channel):
    """``(event_id, codes)`` documents of one channel; events with an empty bag are skipped."""
    corpus = []
    for p in profiles:
        for e in p.events:
            codes = e.channel_codes(channel)
            if codes:
                corpus.append((event_id(p.patient_id, e.day), codes))
    return corpus


def train_channel_tables(profiles, channels=("dx", "px", "rx"), **kwargs):
    """One table per channel, each trained on its own corpus with the same settings."""
    return {ch: train_pvdbow(build_corpus(profiles, ch), channel=ch, **kwargs) for ch in channels}


def export_table(table: EmbeddingTable, path):
    header = dict(channel=table.channel, dim=table.dim, vocab_size=len(table.vocab),
                  n_docs=len(table.doc_ids), seed=table.seed, epochs=table.epochs,
                  negatives=table.negatives, min_count=table.min_count)
    for token in table.vocab + table.doc_ids:
        if "\n" in token or "\t" in token:
            raise EmbeddingFormatError(f"identifier {token!r} contains a tab or newline")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode())
        for code, n in zip(table.vocab, table.counts):
            fh.write(f"{code}\t{int(n)}\n".encode())
        for d in table.doc_ids:
            fh.write(f"{d}\n".encode())
        fh.write(np.ascontiguousarray(table.code_vectors, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(table.doc_vectors, dtype="<f8").tobytes())


def import_table(path, expected_dim=None, expected_channel=None):
    """Read a table written by :func:`export_table`.

    Raises :class:`EmbeddingFormatError` on a wrong version line, a header
    whose dimension or channel differs from the expectation, or a matrix
    block whose size disagrees with the header.
    """
    with open(path, "rb") as fh:
        magic = fh.readline()
        if magic != MAGIC:
            raise EmbeddingFormatError(f"{path}: expected version line {MAGIC!r}, found {magic[:20]!r}")
        header = json.loads(fh.readline())
        dim, V, n_docs = header["dim"], header["vocab_size"], header["n_docs"]
        if expected_dim is not None and dim != expected_dim:
            raise EmbeddingFormatError(f"{path}: expected embedding dimension {expected_dim}, found {dim}")
        if expected_channel is not None and header["channel"] != expected_channel:
            raise EmbeddingFormatError(
                f"{path}: expected channel {expected_channel!r}, found {header['channel']!r}")
        vocab, counts = [], []
        for _ in range(V):
            code, n = fh.readline().decode().rstrip("\n").split("\t")
            vocab.append(code)
            counts.append(int(n))
        doc_ids = [fh.readline().decode().rstrip("\n") for _ in range(n_docs)]
        blob = fh.read()
    need = (V + n_docs) * dim * 8
    if len(blob) != need:
        raise EmbeddingFormatError(
            f"{path}: matrix block has {len(blob)} bytes, header (dim {dim}) implies {need}")
    mats = np.frombuffer(blob, dtype="<f8").astype(np.float64)
    return EmbeddingTable(
        channel=header["channel"], dim=dim, vocab=vocab, counts=np.array(counts, dtype=np.int64),
        code_vectors=mats[: V * dim].reshape(V, dim).copy(),
        doc_ids=doc_ids, doc_vectors=mats[V * dim:].reshape(n_docs, dim).copy(),
        seed=header["seed"], epochs=header["epochs"], negatives=header["negatives"],
        min_count=header["min_count"],
    )
