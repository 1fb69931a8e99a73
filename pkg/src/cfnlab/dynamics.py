"""Autonomous dynamics of recurrent cells, plus verification suites.

Zeroing every input term of a recurrent cell leaves an autonomous map
on its state space. For the chaos-free cell that map is
    u' = sigmoid(U_theta u + b_theta) * tanh(u),
which contracts every orbit to the origin; for hand-picked LSTM and GRU
weights of two units it is chaotic. This module builds those induced
maps (for single cells, whole stacks, and the classic quadratic
reference map), iterates them, samples attractors, measures trajectory
divergence and Lyapunov exponents, and certifies the decay inequalities
that make the chaos-free cell predictable:

  * per-unit decay certificates: |h(i)| after k zero-ish-input steps is
    bounded by Theta^k |h_T(i)| + H/(1-Theta) * max|drive|, with Theta
    and H the window maxima of the two gates;
  * zero-state attraction with a geometric step-count bound derived
    from the contraction constant sigmoid(||U_theta||_inf + ||b||_inf);
  * multi-layer retention: layer l decays within an envelope
    C (1+k)^(l-1) Theta^k, higher layers holding information longer.

Every experiment is a pure function of (map, seed, config). Trials are
independent: trial j draws from rng.derive(j), and batched trial blocks
have a fixed size so results are identical however many threads run.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .cells import (
    CfnParams,
    GruParams,
    LstmParams,
    LstmState,
    cfn_core,
    gru_core,
    lstm_core,
)
from .errors import NumericsError, ValidationError
from .numkit import Rng, sigmoid
from .stack import ModelStack, StackState, forward_window, zero_state

_TRIAL_BLOCK = 128   # fixed vectorization block, keeps threading exact


@dataclass
class InducedMap:
    """Autonomous state map u -> step(u); batch-polymorphic."""

    kind: str
    dim: int
    h_indices: np.ndarray    # projection used for attractor clouds
    step: object             # callable
    params: object


@dataclass
class Orbit:
    kind: str
    u0: np.ndarray
    states: np.ndarray       # kept states, one row per kept step
    t_start: int
    t_end: int
    stride: int


@dataclass
class DivergenceTrace:
    distances: np.ndarray    # ||perturbed_t - reference_t||, t = 0..steps
    perturbation_scale: float

    @property
    def max_distance(self) -> float:
        return float(self.distances.max())


@dataclass
class DecayCertificate:
    """One verified instance of the per-unit decay inequality."""

    unit: int
    start: int               # window is [start, start+span]
    span: int
    theta_max: float
    eta_max: float
    bound: float
    observed: float
    satisfied: bool


def induced_from_model(model) -> InducedMap:
    """Autonomous map of a cell or a whole stack (inputs zeroed)."""
    if isinstance(model, CfnParams):
        return _cfn_induced(model)
    if isinstance(model, LstmParams):
        return _lstm_induced(model)
    if isinstance(model, GruParams):
        return _gru_induced(model)
    if isinstance(model, ModelStack):
        return _stack_induced(model)
    raise ValidationError(f"cannot induce a map from {type(model).__name__}")


def _cfn_induced(p: CfnParams) -> InducedMap:
    n = p.hidden

    def step(u):
        theta = sigmoid(u @ p.U_theta.T + p.b_theta)
        return theta * np.tanh(u)

    return InducedMap(kind="cfn", dim=n, h_indices=np.arange(n),
                      step=step, params=p)


def _lstm_induced(p: LstmParams) -> InducedMap:
    n = p.hidden
    d = p.input

    def step(u):
        h, c = u[..., :n], u[..., n:]
        x = np.zeros(u.shape[:-1] + (d,))
        h2, c2, *_ = lstm_core(p, c, h, h, x, x)
        return np.concatenate([h2, c2], axis=-1)

    return InducedMap(kind="lstm", dim=2 * n, h_indices=np.arange(n),
                      step=step, params=p)


def _gru_induced(p: GruParams) -> InducedMap:
    n = p.hidden
    d = p.input

    def step(u):
        x = np.zeros(u.shape[:-1] + (d,))
        h2, *_ = gru_core(p, u, u, x, x)
        return h2

    return InducedMap(kind="gru", dim=n, h_indices=np.arange(n),
                      step=step, params=p)


def _stack_induced(stack: ModelStack) -> InducedMap:
    n = stack.hidden
    per = 2 * n if stack.kind == "lstm" else n
    h_idx = np.concatenate([np.arange(n) + li * per
                            for li in range(stack.depth)])

    def step(u):
        x = np.zeros(u.shape[:-1] + (n,))
        out = []
        for li, p in enumerate(stack.layers):
            block = u[..., li * per:(li + 1) * per]
            if stack.kind == "cfn":
                h2, *_ = cfn_core(p, block, block, x, x)
                out.append(h2)
            elif stack.kind == "gru":
                h2, *_ = gru_core(p, block, block, x, x)
                out.append(h2)
            else:
                h, c = block[..., :n], block[..., n:]
                h2, c2, *_ = lstm_core(p, c, h, h, x, x)
                out.append(np.concatenate([h2, c2], axis=-1))
                h2 = out[-1][..., :n]
            x = h2 if stack.kind != "lstm" else out[-1][..., :n]
        return np.concatenate(out, axis=-1)

    return InducedMap(kind=f"stack-{stack.kind}", dim=stack.depth * per,
                      h_indices=h_idx, step=step, params=stack)


def henon_map(a: float = 1.4, b: float = 0.3) -> InducedMap:
    """The classic quadratic map (x, y) -> (y + 1 - a x^2, b x)."""

    def step(u):
        x, y = u[..., 0], u[..., 1]
        return np.stack([y + 1.0 - a * x * x, b * x], axis=-1)

    return InducedMap(kind="henon", dim=2, h_indices=np.arange(2),
                      step=step, params=(a, b))


def chaotic_lstm_params() -> LstmParams:
    """Two-unit zero-bias LSTM whose autonomous map is chaotic."""
    z = np.zeros((2, 1))
    b = np.zeros(2)
    return LstmParams(
        W_i=np.array([[-1.0, -4.0], [-3.0, -2.0]]), V_i=z.copy(),
        b_i=b.copy(),
        W_f=np.array([[-2.0, 6.0], [0.0, -6.0]]), V_f=z.copy(),
        b_f=b.copy(),
        W_o=np.array([[4.0, 1.0], [-9.0, -7.0]]), V_o=z.copy(),
        b_o=b.copy(),
        W_g=np.array([[-1.0, -6.0], [6.0, -9.0]]), V_g=z.copy(),
        b_g=b.copy(),
    )


def chaotic_gru_params() -> GruParams:
    """Two-unit zero-bias GRU whose autonomous map is chaotic."""
    z = np.zeros((2, 1))
    return GruParams(
        W_z=np.array([[0.0, 1.0], [1.0, 1.0]]), V_z=z.copy(),
        b_z=np.zeros(2),
        W_r=np.array([[0.0, 1.0], [1.0, 0.0]]), V_r=z.copy(),
        b_r=np.zeros(2),
        U=np.array([[-5.0, -8.0], [8.0, 5.0]]), V_u=z.copy(),
    )


def iterate(imap: InducedMap, u0, steps: int, keep_from: int = 0,
            stride: int = 1) -> Orbit:
    """Forward orbit; stores states at t = keep_from, keep_from+stride,
    ..., up to steps. Non-finite states are fatal with their step."""
    u = np.asarray(u0, dtype=float)
    if u.shape != (imap.dim,):
        raise ValidationError(
            f"u0 must have shape {(imap.dim,)}, got {u.shape}")
    if steps < keep_from:
        raise ValidationError("steps must be >= keep_from")
    if stride < 1:
        raise ValidationError("stride must be >= 1")
    kept = []
    if keep_from == 0:
        kept.append(u.copy())
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(1, steps + 1):
            u = imap.step(u)
            if not np.all(np.isfinite(u)):
                raise NumericsError(f"non-finite state at step {t}")
            if t >= keep_from and (t - keep_from) % stride == 0:
                kept.append(u.copy())
    return Orbit(kind=imap.kind, u0=np.asarray(u0, dtype=float),
                 states=np.array(kept), t_start=keep_from, t_end=steps,
                 stride=stride)


def _as_box(init_box, dim: int) -> np.ndarray:
    box = np.asarray(init_box, dtype=float)
    if box.shape == (2,):
        box = np.tile(box, (dim, 1))
    if box.shape != (dim, 2) or np.any(box[:, 0] > box[:, 1]):
        raise ValidationError(f"init_box must be {dim} (lo, hi) pairs")
    return box


def attractor_sample(imap: InducedMap, n_init: int, init_box,
                     burn_in: int, keep: int, rng: Rng,
                     threads: int = 1):
    """Long-run point cloud in the h-projection.

    Each initial state j is drawn from rng.derive(j) uniformly in
    init_box, iterated burn_in steps, then sampled for keep steps.
    Escaping orbits are dropped whole and counted. Returns
    (points, n_skipped) with points ordered by (initial state, step).
    """
    if burn_in < 1:
        raise ValidationError("burn_in must be >= 1")
    box = _as_box(init_box, imap.dim)

    def run_block(j0: int, j1: int):
        rows = []
        for j in range(j0, j1):
            r = rng.derive(j)
            draws = r.uniform(0.0, 1.0, imap.dim)
            rows.append(box[:, 0] + draws * (box[:, 1] - box[:, 0]))
        u = np.array(rows)
        with np.errstate(over="ignore", invalid="ignore"):
            for _ in range(burn_in):
                u = imap.step(u)
            trace = np.empty((j1 - j0, keep, imap.h_indices.size))
            for k in range(keep):
                u = imap.step(u)
                trace[:, k, :] = u[..., imap.h_indices]
        ok = np.all(np.isfinite(trace.reshape(j1 - j0, -1)), axis=1)
        return trace[ok].reshape(-1, imap.h_indices.size), int((~ok).sum())

    spans = [(j0, min(j0 + _TRIAL_BLOCK, n_init))
             for j0 in range(0, n_init, _TRIAL_BLOCK)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda s: run_block(*s), spans))
    else:
        results = [run_block(*s) for s in spans]
    points = np.concatenate([r[0] for r in results]) if results else \
        np.empty((0, imap.h_indices.size))
    skipped = sum(r[1] for r in results)
    return points, skipped


def divergence_experiment(imap: InducedMap, u0, perturb: float = 1e-7,
                          steps: int = 200, trials: int = 100,
                          rng: Optional[Rng] = None,
                          threads: int = 1) -> list:
    """Distance traces between a reference orbit and trials whose start
    is jittered by a uniform [-perturb, perturb] offset per component.

    perturb = 0 yields identically zero traces (still needs rng=None
    allowed); otherwise trial j draws its offset from rng.derive(j).
    """
    if perturb < 0:
        raise ValidationError("perturb must be >= 0")
    if perturb > 0 and rng is None:
        raise ValidationError("a positive perturbation needs an rng")
    base = np.asarray(u0, dtype=float)
    if base.shape != (imap.dim,):
        raise ValidationError(
            f"u0 must have shape {(imap.dim,)}, got {base.shape}")

    ref = np.empty((steps + 1, imap.dim))
    ref[0] = base
    for t in range(steps):
        ref[t + 1] = imap.step(ref[t])

    def run_block(j0: int, j1: int):
        if perturb == 0.0:
            # identical starts share the reference orbit forever; the
            # batched recomputation would only add matmul-shape noise
            return np.zeros((j1 - j0, steps + 1))
        offs = [rng.derive(j).uniform(-perturb, perturb, imap.dim)
                for j in range(j0, j1)]
        u = base + np.array(offs)
        dist = np.empty((j1 - j0, steps + 1))
        dist[:, 0] = np.linalg.norm(u - ref[0], axis=1)
        for t in range(steps):
            u = imap.step(u)
            dist[:, t + 1] = np.linalg.norm(u - ref[t + 1], axis=1)
        return dist

    spans = [(j0, min(j0 + _TRIAL_BLOCK, trials))
             for j0 in range(0, trials, _TRIAL_BLOCK)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            blocks = list(pool.map(lambda s: run_block(*s), spans))
    else:
        blocks = [run_block(*s) for s in spans]
    traces = []
    for block in blocks:
        for row in block:
            traces.append(DivergenceTrace(distances=row.copy(),
                                          perturbation_scale=perturb))
    return traces


@dataclass
class ImpulseTrace:
    """Response of a driven cell to one spike on one unit's drive.

    Row t of theta/eta/drive describes the transition producing h[t];
    row 0 is unused padding so all arrays share the time axis.
    """

    h: np.ndarray
    theta: np.ndarray
    eta: np.ndarray
    drive: np.ndarray        # the effective per-unit input (W x)(i)
    unit: int
    spike_time: int


def impulse_response(p: CfnParams, unit: int, spike_time: int,
                     amplitude: float = 10.0,
                     horizon: int = 100) -> ImpulseTrace:
    """Drive a zero-initialized cell with (W x_t)(unit) = amplitude at
    t = spike_time and zero otherwise, injecting on the effective
    drive channel while the gates see x = 0."""
    n = p.hidden
    if not 0 <= unit < n:
        raise ValidationError(f"unit {unit} outside [0, {n})")
    if not 1 <= spike_time <= horizon:
        raise ValidationError("spike_time must lie in [1, horizon]")
    h = np.zeros((horizon + 1, n))
    theta = np.zeros((horizon + 1, n))
    eta = np.zeros((horizon + 1, n))
    drive = np.zeros((horizon + 1, n))
    drive[spike_time, unit] = amplitude
    for t in range(1, horizon + 1):
        theta[t] = sigmoid(h[t - 1] @ p.U_theta.T + p.b_theta)
        eta[t] = sigmoid(h[t - 1] @ p.U_eta.T + p.b_eta)
        h[t] = theta[t] * np.tanh(h[t - 1]) + eta[t] * np.tanh(drive[t])
    return ImpulseTrace(h=h, theta=theta, eta=eta, drive=drive,
                        unit=unit, spike_time=spike_time)


def verify_lemma1(h_i: np.ndarray, theta_i: np.ndarray, eta_i: np.ndarray,
                  drive_i: np.ndarray, start: int, span: int,
                  unit: int = 0) -> DecayCertificate:
    """Certify the one-unit decay bound over the window
    [start, start+span].

    All four traces are 1-d and share the convention that index t's
    theta/eta/drive produced h[t]. The bound is
        theta_max^span * |h[start]|
        + eta_max / (1 - theta_max) * max|drive|
    with the maxima taken over the transitions inside the window.
    A gate maximum >= 1 means the trace cannot have come from a
    sigmoid and is fatal.
    """
    if span < 0 or start < 0:
        raise ValidationError("window must satisfy start >= 0, span >= 0")
    if start + span >= h_i.size:
        raise ValidationError("traces do not cover the window")
    observed = abs(float(h_i[start + span]))
    if span == 0:
        bound = abs(float(h_i[start]))
        return DecayCertificate(unit=unit, start=start, span=span,
                                theta_max=0.0, eta_max=0.0, bound=bound,
                                observed=observed, satisfied=True)
    window = slice(start + 1, start + span + 1)
    theta_max = float(theta_i[window].max())
    eta_max = float(eta_i[window].max())
    if theta_max >= 1.0 or eta_max >= 1.0:
        raise NumericsError(
            f"gate maximum >= 1 in window [{start}, {start + span}]; "
            "trace is not sigmoid output")
    drive_max = float(np.abs(drive_i[window]).max())
    bound = (theta_max ** span * abs(float(h_i[start]))
             + eta_max / (1.0 - theta_max) * drive_max)
    return DecayCertificate(unit=unit, start=start, span=span,
                            theta_max=theta_max, eta_max=eta_max,
                            bound=bound, observed=observed,
                            satisfied=observed <= bound + 1e-12)


@dataclass
class CfnTraces:
    """Driven chaos-free trajectory with everything a decay certificate
    needs: h[t] plus the gates and effective drive that produced it
    (row 0 of those is padding)."""

    h: np.ndarray            # (steps+1, n)
    theta: np.ndarray        # (steps+1, n)
    eta: np.ndarray          # (steps+1, n)
    drive: np.ndarray        # (steps+1, n), rows of (W x_t)

    def certificate(self, unit: int, start: int,
                    span: int) -> DecayCertificate:
        return verify_lemma1(self.h[:, unit], self.theta[:, unit],
                             self.eta[:, unit], self.drive[:, unit],
                             start, span, unit=unit)


def run_cfn_traces(p: CfnParams, h0: np.ndarray,
                   xs: np.ndarray) -> CfnTraces:
    """Drive a cell from h0 with the input rows xs, recording traces."""
    steps, n = xs.shape[0], p.hidden
    h = np.zeros((steps + 1, n))
    theta = np.zeros((steps + 1, n))
    eta = np.zeros((steps + 1, n))
    drive = np.zeros((steps + 1, n))
    h[0] = h0
    drive[1:] = xs @ p.W.T
    for t in range(1, steps + 1):
        h[t], theta[t], eta[t], _, _ = cfn_core(
            p, h[t - 1], h[t - 1], xs[t - 1], xs[t - 1])
    return CfnTraces(h=h, theta=theta, eta=eta, drive=drive)


@dataclass
class Lemma1Report:
    all_satisfied: bool
    n_certificates: int
    n_failures: int
    failures: list           # (trial, unit, start, span), first few


def _window_bounds(traces: CfnTraces, start: int, span_max: int):
    """Vectorized bounds for every (unit, span) at a fixed start.

    Returns (bound, observed) arrays of shape (span_max, n) where row
    k-1 covers span k. Running maxima over the window reproduce the
    single-certificate arithmetic exactly.
    """
    h0 = np.abs(traces.h[start])
    theta_run = np.maximum.accumulate(
        traces.theta[start + 1:start + span_max + 1], axis=0)
    eta_run = np.maximum.accumulate(
        traces.eta[start + 1:start + span_max + 1], axis=0)
    drive_run = np.maximum.accumulate(
        np.abs(traces.drive[start + 1:start + span_max + 1]), axis=0)
    if np.any(theta_run >= 1.0) or np.any(eta_run >= 1.0):
        raise NumericsError("gate maximum >= 1; trace is not sigmoid output")
    spans = np.arange(1, span_max + 1)[:, None]
    bound = (theta_run ** spans * h0
             + eta_run / (1.0 - theta_run) * drive_run)
    observed = np.abs(traces.h[start + 1:start + span_max + 1])
    return bound, observed


def lemma1_suite(n_trials: int, rng: Rng, *, dim_max: int = 16,
                 input_dim_max: int = 8, weight_lo: float = -2.0,
                 weight_hi: float = 2.0, start_max: int = 8,
                 span_max: int = 50, threads: int = 1) -> Lemma1Report:
    """Randomized certification of the decay bound.

    Each trial derives its own stream, draws a cell with uniform
    weights in [weight_lo, weight_hi] and a random dimension, drives it
    with uniform inputs, and checks the bound for every unit, every
    start in [0, start_max], and every span in [1, span_max].
    """
    from .cells import random_cfn_params

    def run_trial(j: int):
        r = rng.derive(j)
        dim = int(r.integers(1, dim_max + 1, 1)[0])
        input_dim = int(r.integers(1, input_dim_max + 1, 1)[0])
        p = random_cfn_params(dim, input_dim, r,
                              lo=weight_lo, hi=weight_hi)
        h0 = r.uniform(-1.0, 1.0, dim)
        xs = r.uniform(weight_lo, weight_hi,
                       (start_max + span_max) * input_dim)
        traces = run_cfn_traces(p, h0,
                                xs.reshape(start_max + span_max,
                                           input_dim))
        bad = []
        count = 0
        for start in range(start_max + 1):
            bound, observed = _window_bounds(traces, start, span_max)
            count += bound.size + traces.h.shape[1]   # spans 1.. + span 0
            viol = observed > bound + 1e-12
            if np.any(viol):
                for k, unit in zip(*np.nonzero(viol)):
                    bad.append((j, int(unit), start, int(k) + 1))
        return count, bad

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_trial, range(n_trials)))
    else:
        results = [run_trial(j) for j in range(n_trials)]
    failures = [f for _, bad in results for f in bad]
    return Lemma1Report(all_satisfied=not failures,
                        n_certificates=sum(c for c, _ in results),
                        n_failures=len(failures),
                        failures=failures[:20])


@dataclass
class ZeroAttractorReport:
    """Outcome of driving the input-free map from random states."""

    passed: bool
    n_orbits: int
    contraction: float       # sigmoid(||U_theta||_inf + ||b_theta||_inf)
    steps: np.ndarray        # first step with ||u||_inf < tol, per orbit
    allowed: np.ndarray      # geometric step budget, per orbit
    worst_steps: int
    tol: float


def _steps_allowed(m0: float, contraction: float, tol: float) -> float:
    """Geometric budget for ||u||_inf to pass below tol.

    While ||u||_inf <= 1, each step multiplies it by at most
    contraction * tanh(1)/1 <= contraction... more simply tanh is
    1-Lipschitz with |tanh(v)| <= |v|, so ||u'||_inf <= contraction
    * ||u||_inf once inside the unit box; one extra step enters the
    box from anywhere since |tanh| < 1.
    """
    if m0 < tol:
        return 0.0
    if contraction >= 1.0:
        return float("inf")
    lead = 0.0 if m0 <= 1.0 else 1.0
    base = min(m0, 1.0) if m0 <= 1.0 else 1.0
    return lead + np.ceil(np.log(tol / base) / np.log(contraction))


def verify_zero_attractor(p: CfnParams, n_init: int, rng: Rng,
                          tol: float = 1e-8, max_steps: int = 100_000,
                          threads: int = 1) -> ZeroAttractorReport:
    """Check that every orbit of the input-free map reaches the origin
    within the geometric budget set by its contraction constant.

    Draws n_init states from [-1, 1]^n and n_init more from
    [-10, 10]^n (orbit 2j small, 2j+1 large, each from its own derived
    stream) and iterates until ||u||_inf < tol.
    """
    n = p.hidden
    contraction = float(sigmoid(
        np.abs(p.U_theta).sum(axis=1).max() + np.abs(p.b_theta).max()))
    imap = _cfn_induced(p)

    def run_block(j0: int, j1: int):
        rows = []
        for j in range(j0, j1):
            width = 1.0 if j % 2 == 0 else 10.0
            rows.append(rng.derive(j).uniform(-width, width, n))
        u = np.array(rows)
        m0 = np.abs(u).max(axis=1)
        steps = np.full(j1 - j0, -1, dtype=int)
        steps[m0 < tol] = 0
        t = 0
        while np.any(steps < 0) and t < max_steps:
            t += 1
            u = imap.step(u)
            hit = (steps < 0) & (np.abs(u).max(axis=1) < tol)
            steps[hit] = t
        allowed = np.array([_steps_allowed(m, contraction, tol)
                            for m in m0])
        return steps, allowed

    spans = [(j0, min(j0 + _TRIAL_BLOCK, 2 * n_init))
             for j0 in range(0, 2 * n_init, _TRIAL_BLOCK)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda s: run_block(*s), spans))
    else:
        results = [run_block(*s) for s in spans]
    steps = np.concatenate([r[0] for r in results])
    allowed = np.concatenate([r[1] for r in results])
    converged = steps >= 0
    passed = bool(np.all(converged)
                  and np.all(steps[converged] <= allowed[converged]))
    worst = int(steps.max()) if np.all(converged) else -1
    return ZeroAttractorReport(passed=passed, n_orbits=2 * n_init,
                               contraction=contraction, steps=steps,
                               allowed=allowed, worst_steps=worst,
                               tol=tol)


@dataclass
class LayerDecay:
    """Retention profile of one layer after the input is switched off."""

    trace: np.ndarray        # (horizon+1, hidden), |h| not taken
    envelope: np.ndarray     # (horizon+1,), max_i |h_k(i)|
    anchor: float            # envelope[0]
    theta_fit: float         # tightest geometric rate under the
                             # anchor * (1+k)^(layer) * theta^k envelope
    slowest: list            # (unit, last_above_cutoff, half_life)
    half_life: int           # slowest unit's half-life
    degenerate: bool         # layer was exactly zero at switch-off


@dataclass
class MultilayerDecayReport:
    layers: list             # LayerDecay, bottom first
    horizon: int
    warm_len: int
    cutoff: float

    @property
    def half_lives(self) -> list:
        return [layer.half_life for layer in self.layers]

    @property
    def retention_ordered(self) -> bool:
        """Higher layers hold state at least as long as lower ones."""
        hl = self.half_lives
        return all(a <= b for a, b in zip(hl, hl[1:]))


def _unit_half_life(trace_i: np.ndarray, horizon: int) -> int:
    """First free-running step where |h(i)| halves; horizon+1 if the
    halving never happens inside the horizon."""
    start = abs(float(trace_i[0]))
    if start == 0.0:
        return 0
    below = np.nonzero(np.abs(trace_i) <= 0.5 * start)[0]
    return int(below[0]) if below.size else horizon + 1


def verify_multilayer_decay(stack: ModelStack, warm_tokens: np.ndarray,
                            horizon: int, slow_units: int = 10,
                            cutoff: float = 1e-3) -> MultilayerDecayReport:
    """Warm a stack on real tokens, cut the input to zero, and profile
    how long each layer retains state.

    Layer l (1-based) is fitted against anchor * (1+k)^(l-1) * theta^k;
    theta_fit is the smallest rate that keeps the whole trace under
    that envelope. Reports the slow_units units per layer that stay
    above cutoff longest, with their half-lives.
    """
    if stack.depth < 2:
        raise ValidationError("retention comparison needs depth >= 2")
    warm_tokens = np.asarray(warm_tokens)
    if warm_tokens.ndim != 1 or warm_tokens.size == 0:
        raise ValidationError("warm_tokens must be a non-empty id vector")
    if horizon < 1:
        raise ValidationError("horizon must be >= 1")
    n = stack.hidden
    _, _, state = forward_window(stack, zero_state(stack, batch=1),
                                 warm_tokens[None, :])

    def layer_h(li):
        s = state.layers[li]
        return s.h if stack.kind == "lstm" else s

    traces = [np.zeros((horizon + 1, n)) for _ in range(stack.depth)]
    for li in range(stack.depth):
        traces[li][0] = layer_h(li)[0]
    for k in range(1, horizon + 1):
        x = np.zeros((1, n))
        new_layers = []
        for li, p in enumerate(stack.layers):
            s = state.layers[li]
            if stack.kind == "cfn":
                h2, *_ = cfn_core(p, s, s, x, x)
                new_layers.append(h2)
            elif stack.kind == "gru":
                h2, *_ = gru_core(p, s, s, x, x)
                new_layers.append(h2)
            else:
                h2, c2, *_ = lstm_core(p, s.c, s.h, s.h, x, x)
                new_layers.append(LstmState(h=h2, c=c2))
            traces[li][k] = h2[0]
            x = h2
        state = StackState(layers=new_layers)

    layers = []
    for li in range(stack.depth):
        trace = traces[li]
        envelope = np.abs(trace).max(axis=1)
        anchor = float(envelope[0])
        degenerate = anchor == 0.0
        if degenerate:
            theta_fit = 0.0
        else:
            ks = np.arange(1, horizon + 1)
            poly = anchor * (1.0 + ks) ** li
            ratios = envelope[1:] / poly
            theta_fit = float(np.max(
                np.where(ratios > 0, ratios, 0.0) ** (1.0 / ks)))
        last_above = np.full(n, -1, dtype=int)
        for i in range(n):
            above = np.nonzero(np.abs(trace[:, i]) > cutoff)[0]
            if above.size:
                last_above[i] = int(above[-1])
        order = sorted(range(n), key=lambda i: (-last_above[i], i))
        slowest = [(i, int(last_above[i]),
                    _unit_half_life(trace[:, i], horizon))
                   for i in order[:slow_units] if last_above[i] >= 0]
        half_life = max((hl for _, _, hl in slowest), default=0)
        layers.append(LayerDecay(trace=trace, envelope=envelope,
                                 anchor=anchor, theta_fit=theta_fit,
                                 slowest=slowest, half_life=half_life,
                                 degenerate=degenerate))
    return MultilayerDecayReport(layers=layers, horizon=horizon,
                                 warm_len=int(warm_tokens.size),
                                 cutoff=cutoff)


def lyapunov_estimate(imap: InducedMap, u0, steps: int,
                      renorm_interval: int = 10, burn_in: int = 100,
                      d0: float = 1e-9) -> float:
    """Largest Lyapunov exponent by periodic renormalization of a
    companion orbit offset by d0."""
    if renorm_interval < 1 or steps < renorm_interval:
        raise ValidationError("need steps >= renorm_interval >= 1")
    if d0 <= 0:
        raise ValidationError("d0 must be positive")
    u = np.asarray(u0, dtype=float)
    if u.shape != (imap.dim,):
        raise ValidationError(
            f"u0 must have shape {(imap.dim,)}, got {u.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(burn_in):
            u = imap.step(u)
            if not np.all(np.isfinite(u)):
                raise NumericsError(
                    f"orbit escaped during burn-in, step {t + 1}")
        v = u + d0 / np.sqrt(imap.dim)
        acc = 0.0
        used = 0
        for _ in range(steps // renorm_interval):
            for _ in range(renorm_interval):
                u = imap.step(u)
                v = imap.step(v)
            if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
                raise NumericsError(f"orbit escaped at step {used}")
            d = max(float(np.linalg.norm(v - u)), 1e-300)
            acc += np.log(d / d0)
            used += renorm_interval
            v = u + (v - u) * (d0 / d)
    return acc / used


def driven_distance_trace(stack: ModelStack, tokens: np.ndarray,
                          state_a: StackState,
                          state_b: StackState) -> np.ndarray:
    """Full-state Euclidean distance between two runs of the same
    stack fed the same tokens from different starting states."""
    from .stack import stack_forward

    def vec(state):
        parts = []
        for s in state.layers:
            if isinstance(s, LstmState):
                parts.extend([s.h, s.c])
            else:
                parts.append(s)
        return np.concatenate(parts)

    tokens = np.asarray(tokens)
    if tokens.ndim != 1:
        raise ValidationError("tokens must be a 1-d id vector")
    dist = np.empty(tokens.size + 1)
    dist[0] = np.linalg.norm(vec(state_a) - vec(state_b))
    a, b = state_a, state_b
    for t, tok in enumerate(tokens):
        _, a = stack_forward(stack, a, int(tok))
        _, b = stack_forward(stack, b, int(tok))
        dist[t + 1] = np.linalg.norm(vec(a) - vec(b))
    return dist
