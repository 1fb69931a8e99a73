"""cfnlab: a small laboratory for gated recurrent networks.

Exact cell recurrences (CFN, LSTM, GRU), a layered word-level language
model with hand-written truncated-backprop gradients and normalized SGD,
and a dynamical-systems toolkit for studying the autonomous behaviour of
trained and hand-picked cells.
"""

__version__ = "0.1.0"

from .cells import (
    CfnParams,
    GruParams,
    LstmParams,
    LstmState,
    cfn_step,
    gru_step,
    lstm_step,
    random_cfn_params,
)
from .corpus import Corpus, Vocab, build_corpus, load_vocab, save_vocab
from .dynamics import (
    DecayCertificate,
    DivergenceTrace,
    InducedMap,
    Orbit,
    attractor_sample,
    chaotic_gru_params,
    chaotic_lstm_params,
    divergence_experiment,
    driven_distance_trace,
    henon_map,
    impulse_response,
    induced_from_model,
    iterate,
    lemma1_suite,
    lyapunov_estimate,
    run_cfn_traces,
    verify_lemma1,
    verify_multilayer_decay,
    verify_zero_attractor,
)
from .errors import CfnLabError, NumericsError, ValidationError
from .model import RecurrentLanguageModel
from .numkit import Rng
from .stack import (
    ModelStack,
    forward_window,
    init_stack,
    load_checkpoint,
    save_checkpoint,
    zero_state,
)
from .training import (
    AdaptiveLr,
    div3_lr,
    evaluate,
    gradcheck_stack,
    normalized_sgd_update,
    train,
    unigram_perplexity,
)

__all__ = [
    "AdaptiveLr",
    "CfnLabError",
    "CfnParams",
    "Corpus",
    "DecayCertificate",
    "DivergenceTrace",
    "GruParams",
    "InducedMap",
    "LstmParams",
    "LstmState",
    "ModelStack",
    "NumericsError",
    "Orbit",
    "RecurrentLanguageModel",
    "Rng",
    "ValidationError",
    "Vocab",
    "__version__",
    "attractor_sample",
    "build_corpus",
    "cfn_step",
    "chaotic_gru_params",
    "chaotic_lstm_params",
    "div3_lr",
    "divergence_experiment",
    "driven_distance_trace",
    "evaluate",
    "forward_window",
    "gradcheck_stack",
    "gru_step",
    "henon_map",
    "impulse_response",
    "induced_from_model",
    "init_stack",
    "iterate",
    "lemma1_suite",
    "load_checkpoint",
    "load_vocab",
    "lstm_step",
    "lyapunov_estimate",
    "normalized_sgd_update",
    "random_cfn_params",
    "run_cfn_traces",
    "save_checkpoint",
    "save_vocab",
    "train",
    "unigram_perplexity",
    "verify_lemma1",
    "verify_multilayer_decay",
    "verify_zero_attractor",
    "zero_state",
]
