"""Text ingestion for word-level language modeling.

Tokenization is whitespace splitting with an end-of-sentence marker
substituted for every newline, the usual convention for one-sentence-
per-line corpora. The vocabulary is built from the training split:
the `max_vocab` most frequent tokens (ties broken lexicographically),
with the unknown marker forced in if it did not make the cut. Every
out-of-vocabulary token encodes to the unknown id.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Dict, Iterator, Optional

import numpy as np

from .errors import CorpusError, ValidationError

UNK = "<unk>"
EOS = "<eos>"

SPLIT_NAMES = ("train", "valid", "test")


@dataclass
class Vocab:
    """Dense bijective token<->id map with distinguished unk and eos."""

    id_to_token: list
    token_to_id: Dict[str, int]
    unk_id: int
    eos_id: int

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def encode(self, tokens) -> np.ndarray:
        unk = self.unk_id
        get = self.token_to_id.get
        return np.array([get(t, unk) for t in tokens], dtype=np.int64)

    def decode(self, ids) -> list:
        return [self.id_to_token[int(i)] for i in ids]


def _make_vocab(id_to_token: list) -> Vocab:
    token_to_id = {t: i for i, t in enumerate(id_to_token)}
    if len(token_to_id) != len(id_to_token):
        raise CorpusError("duplicate token in vocabulary")
    if UNK not in token_to_id or EOS not in token_to_id:
        raise CorpusError(f"vocabulary must contain {UNK} and {EOS}")
    return Vocab(id_to_token=id_to_token, token_to_id=token_to_id,
                 unk_id=token_to_id[UNK], eos_id=token_to_id[EOS])


def build_vocab(tokens, max_vocab: int) -> Vocab:
    """Most frequent max_vocab tokens, ties lexicographic, unk forced."""
    if max_vocab < 1:
        raise ValidationError(f"max_vocab must be >= 1, got {max_vocab}")
    counts = Counter(tokens)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = [t for t, _ in ranked[:max_vocab]]
    if UNK not in kept:
        kept.append(UNK)
    if EOS not in kept:
        kept.append(EOS)
    return _make_vocab(sorted(kept, key=lambda t: (-counts.get(t, 0), t)))


def _read_tokens(path: str, lowercase: bool) -> list:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as e:
        raise CorpusError(f"cannot read {path}: {e}") from e
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise CorpusError(
            f"{path}: undecodable byte at offset {e.start}") from e
    if lowercase:
        text = text.lower()
    return text.replace("\n", f" {EOS} ").split()


@dataclass
class Corpus:
    """Immutable id-encoded splits sharing one vocabulary."""

    splits: Dict[str, np.ndarray]
    vocab: Vocab


def build_corpus(paths: Dict[str, str], max_vocab: int,
                 lowercase: bool = False,
                 vocab: Optional[Vocab] = None) -> Corpus:
    """Read the named split files and encode them.

    paths maps split names (train/valid/test) to files. When vocab is
    None it is built from the train split, which must then be present
    and non-empty; a provided vocab lifts that requirement.
    """
    for name in paths:
        if name not in SPLIT_NAMES:
            raise ValidationError(f"unknown split name {name!r}")
    if not paths:
        raise ValidationError("no split files given")
    split_tokens = {name: _read_tokens(path, lowercase)
                    for name, path in paths.items()}
    if vocab is None:
        if "train" not in split_tokens:
            raise ValidationError("building a vocabulary needs a train split")
        if not any(t != EOS for t in split_tokens["train"]):
            raise CorpusError("train split is empty")
        vocab = build_vocab(split_tokens["train"], max_vocab)
    splits = {name: vocab.encode(toks) for name, toks in split_tokens.items()}
    return Corpus(splits=splits, vocab=vocab)


def save_vocab(vocab: Vocab, path: str) -> None:
    """Write `id<TAB>token` lines in id order."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i, tok in enumerate(vocab.id_to_token):
            fh.write(f"{i}\t{tok}\n")


def load_vocab(path: str) -> Vocab:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = [ln for ln in fh.read().split("\n") if ln]
    except OSError as e:
        raise CorpusError(f"cannot read vocabulary: {e}") from e
    id_to_token = []
    for ln in lines:
        parts = ln.split("\t")
        if len(parts) != 2:
            raise CorpusError(f"bad vocabulary line {ln!r}")
        idx, tok = parts
        if int(idx) != len(id_to_token):
            raise CorpusError(f"non-dense vocabulary id {idx}")
        id_to_token.append(tok)
    return _make_vocab(id_to_token)


class BatchIter:
    """Windows over contiguous streams: yields (inputs, targets), both
    batch x unroll, where targets are inputs shifted by one."""

    def __init__(self, ids: np.ndarray, batch: int, unroll: int):
        if batch < 1 or unroll < 1:
            raise ValidationError("batch and unroll must be >= 1")
        ids = np.asarray(ids)
        if ids.size < batch * (unroll + 1):
            raise CorpusError(
                f"split of {ids.size} tokens cannot fill one "
                f"{batch}x{unroll} window")
        per = ids.size // batch
        self.streams = ids[: batch * per].reshape(batch, per)
        self.unroll = unroll

    def __iter__(self) -> Iterator:
        M = self.streams.shape[1]
        T = self.unroll
        for t0 in range(0, M - T, T):
            yield (self.streams[:, t0:t0 + T],
                   self.streams[:, t0 + 1:t0 + T + 1])


def batches(corpus: Corpus, split: str, batch: int, unroll: int) -> BatchIter:
    if split not in corpus.splits:
        raise ValidationError(f"corpus has no split {split!r}")
    return BatchIter(corpus.splits[split], batch, unroll)
