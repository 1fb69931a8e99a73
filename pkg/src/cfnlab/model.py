"""Scikit-learn-style facade over the trainable language model.

The estimator wraps stack construction, normalized-SGD training, and
perplexity evaluation behind fit/predict/score so the model composes
with sklearn tooling (get_params, set_params, clone, grid search over
hyperparameters). X everywhere is a 1-d stream of integer token ids,
as produced by the corpus module.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator

from .errors import ValidationError
from .numkit import Rng
from .stack import forward_window, init_stack, zero_state
from .training import evaluate, train
from .validation import as_id_stream, ensure_fitted


class RecurrentLanguageModel(BaseEstimator):
    """Word-level recurrent language model with normalized SGD.

    Parameters mirror the training recipe: `cell` is one of
    "cfn" / "lstm" / "gru"; `between_rate` drops activations between
    layers while `gate_rate` drops gate inputs inside each layer;
    `schedule` is "div3" (lr/3 each epoch) or "adaptive". `vocab`
    left at None is inferred from the fitted stream as max id + 1.
    """

    def __init__(self, cell: str = "cfn", depth: int = 2,
                 hidden: int = 64, vocab: Optional[int] = None,
                 unroll: int = 35, batch_size: int = 20,
                 lr0: float = 0.5, schedule: str = "div3",
                 epochs: int = 5, between_rate: float = 0.0,
                 gate_rate: float = 0.0, resample_masks: bool = False,
                 weight_scale: float = 0.07, seed: int = 0):
        self.cell = cell
        self.depth = depth
        self.hidden = hidden
        self.vocab = vocab
        self.unroll = unroll
        self.batch_size = batch_size
        self.lr0 = lr0
        self.schedule = schedule
        self.epochs = epochs
        self.between_rate = between_rate
        self.gate_rate = gate_rate
        self.resample_masks = resample_masks
        self.weight_scale = weight_scale
        self.seed = seed

    def fit(self, X, y=None, validation=None):
        """Train on a token-id stream.

        `validation` is an optional held-out stream used for the
        per-epoch perplexity column and the adaptive schedule; without
        one the training stream itself is reused.
        """
        ids = as_id_stream(X)
        val = ids if validation is None else as_id_stream(validation,
                                                          "validation")
        vocab = self.vocab
        if vocab is None:
            vocab = int(max(ids.max(), val.max())) + 1
        elif max(int(ids.max()), int(val.max())) >= vocab:
            raise ValidationError("token id outside the declared vocab")
        rng = Rng(self.seed)
        self.stack_ = init_stack(self.cell, self.depth, self.hidden,
                                 vocab, rng, scale=self.weight_scale)
        self.vocab_size_ = vocab
        self.n_params_ = self.stack_.param_count()
        self.history_ = train(
            self.stack_, ids, val, epochs=self.epochs, lr0=self.lr0,
            schedule=self.schedule, unroll=self.unroll,
            batch_size=self.batch_size, between_rate=self.between_rate,
            gate_rate=self.gate_rate,
            rng=rng if (self.between_rate or self.gate_rate) else None,
            resample_masks=self.resample_masks)
        return self

    def perplexity(self, X) -> float:
        """exp(mean negative log likelihood) over the stream."""
        ensure_fitted(self)
        return evaluate(self.stack_, as_id_stream(X))

    def score(self, X, y=None) -> float:
        """Mean log likelihood in nats (negated NLL, higher is better)."""
        return -math.log(self.perplexity(X))

    def predict(self, X) -> np.ndarray:
        """Greedy next-token id after each position of the stream."""
        ensure_fitted(self)
        ids = as_id_stream(X)
        logits, _, _ = forward_window(self.stack_,
                                      zero_state(self.stack_, batch=1),
                                      ids[None, :])
        return np.argmax(logits[0], axis=-1)

    def predict_proba(self, X) -> np.ndarray:
        """Next-token distribution after each position, rows sum to 1."""
        ensure_fitted(self)
        ids = as_id_stream(X)
        logits, _, _ = forward_window(self.stack_,
                                      zero_state(self.stack_, batch=1),
                                      ids[None, :])
        z = logits[0] - logits[0].max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)
