"""Deterministic synthetic corpus for desk-scale experiments.

The generator emits pseudo-word sentences from a two-level source:

* a single shared bigram successor table supplies most transitions, so
  the text is dominated by local structure that any small recurrent
  model can learn from abundant evidence (every word is visited many
  times per epoch);
* a slowly switching latent topic occasionally injects a word from its
  own content pool, adding a long-range signal (the topic persists for
  ~70 words) that rewards models able to retain state across sentences.

A unigram model is far from optimal on this text, while the sequential
structure is equally accessible to different cell types: the learnable
mass sits in the shared table, not in per-topic memorization.

Everything is a pure function of the seed.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import ValidationError
from .numkit import Rng

_ONSETS = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r",
           "s", "t", "v", "z", "br", "dr", "gr", "kl", "pl", "tr"]
_VOWELS = ["a", "e", "i", "o", "u", "ai", "or", "un"]
_CODAS = ["", "n", "s", "t", "m", "r"]

# shared successor-choice weights, most likely first
_SUCC_PROBS = (0.7, 0.2, 0.07, 0.03)
_BREAK_PROB = 1.0 / 12.0     # sentence end after each word
_TOPIC_SWITCH = 0.015        # topic change chance per word
_TOPIC_INJECT = 0.25         # chance the topic pool overrides the bigram
_POOL_WORDS = 48             # content words per topic
_N_TOPICS = 8
_N_STARTS = 16


def word_list(vocab_words: int) -> list:
    """First vocab_words distinct pseudo-words, deterministic order.
    Collisions like onset+'or' vs onset+'o'+coda 'r' are skipped."""
    syllables = [o + v for o in _ONSETS for v in _VOWELS]
    words = []
    seen = set()

    def add(w):
        if w not in seen:
            seen.add(w)
            words.append(w)
        return len(words) == vocab_words

    for first in syllables:
        for coda in _CODAS:
            if add(first + coda):
                return words
    for first in syllables:
        for second in syllables:
            if add(first + second):
                return words
    raise ValidationError(f"cannot build {vocab_words} distinct words")


def toy_text(n_tokens: int = 110_000, vocab_words: int = 1200,
             seed: int = 0) -> str:
    """Generate one corpus as newline-separated sentences."""
    if n_tokens < 10 or vocab_words < _N_STARTS:
        raise ValidationError("corpus too small to generate")
    words = word_list(vocab_words)
    rng = Rng(seed)

    succ = rng.integers(0, vocab_words,
                        vocab_words * len(_SUCC_PROBS)).reshape(
        vocab_words, len(_SUCC_PROBS))
    pools = rng.integers(0, vocab_words, _N_TOPICS * _POOL_WORDS).reshape(
        _N_TOPICS, _POOL_WORDS)
    starts = rng.integers(0, vocab_words, _N_STARTS)

    u_succ = rng.uniform(0.0, 1.0, n_tokens)
    u_break = rng.uniform(0.0, 1.0, n_tokens)
    u_topic = rng.uniform(0.0, 1.0, n_tokens)
    u_inject = rng.uniform(0.0, 1.0, n_tokens)
    start_pick = rng.integers(0, _N_STARTS, n_tokens)
    topic_pick = rng.integers(0, _N_TOPICS, n_tokens)
    pool_pick = rng.integers(0, _POOL_WORDS, n_tokens)

    cum = np.cumsum(_SUCC_PROBS)
    lines = []
    line = []
    topic = 0
    w = int(starts[0])
    for t in range(n_tokens):
        line.append(words[w])
        if u_topic[t] < _TOPIC_SWITCH:
            topic = int(topic_pick[t])
        if u_break[t] < _BREAK_PROB:
            lines.append(" ".join(line))
            line = []
            w = int(starts[start_pick[t]])
        elif u_inject[t] < _TOPIC_INJECT:
            w = int(pools[topic, pool_pick[t]])
        else:
            choice = int(np.searchsorted(cum, u_succ[t], side="right"))
            choice = min(choice, len(_SUCC_PROBS) - 1)
            w = int(succ[w, choice])
    if line:
        lines.append(" ".join(line))
    return "\n".join(lines) + "\n"


def write_toy_corpus(directory: str, n_tokens: int = 110_000,
                     vocab_words: int = 1200, seed: int = 0,
                     valid_fraction: float = 0.08) -> dict:
    """Write train.txt / valid.txt under directory; returns their paths.

    The validation split is the trailing fraction of sentences, so the
    two files never share text.
    """
    if not 0.0 < valid_fraction < 0.5:
        raise ValidationError(
            f"valid_fraction must be in (0, 0.5), got {valid_fraction}")
    text = toy_text(n_tokens, vocab_words, seed)
    lines = text.strip("\n").split("\n")
    cut = int(len(lines) * (1.0 - valid_fraction))
    if cut < 1 or cut >= len(lines):
        raise ValidationError("not enough sentences to split")
    os.makedirs(directory, exist_ok=True)
    paths = {"train": os.path.join(directory, "train.txt"),
             "valid": os.path.join(directory, "valid.txt")}
    with open(paths["train"], "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines[:cut]) + "\n")
    with open(paths["valid"], "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines[cut:]) + "\n")
    return paths
