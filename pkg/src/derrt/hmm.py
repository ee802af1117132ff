"""Gaussian-emission HMM used as a steering model.

Forward values are kept in log space and normalised after each step, with the
accumulated log-likelihood carried separately, so long tree paths never
underflow.  A tree node stores only its :class:`ForwardState`.
"""
import math
from dataclasses import dataclass

import numpy as np
from scipy.cluster.vq import kmeans2

from .numerics.gaussian import LOG_2PI, logsumexp
from .numerics.rng import rng_stream

LOG_FLOOR = -700.0  # log of "zero" probability; keeps every entry finite
VAR_FLOOR = 1e-4


def _normalize_log(v, axis=-1):
    v = np.asarray(v, float)
    out = v - np.expand_dims(logsumexp(v, axis=axis), axis)
    return np.maximum(out, LOG_FLOOR)


@dataclass(frozen=True)
class HmmModel:
    log_pi: np.ndarray  # (K,)
    log_A: np.ndarray  # (K, K), row = from-state
    means: np.ndarray  # (K, F)
    log_stds: np.ndarray  # (K, F)
    train_loglik: tuple = ()

    def __post_init__(self):
        for name in ("log_pi", "log_A", "means", "log_stds"):
            a = np.array(getattr(self, name), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        K, F = self.means.shape
        if self.log_pi.shape != (K,) or self.log_A.shape != (K, K) or self.log_stds.shape != (K, F):
            raise ValueError("inconsistent HMM parameter shapes")

    @property
    def n_states(self) -> int:
        return self.means.shape[0]

    @property
    def n_features(self) -> int:
        return self.means.shape[1]

    def check(self, tol=1e-9) -> None:
        if abs(logsumexp(self.log_pi)) > tol:
            raise ValueError("initial distribution does not normalise")
        if np.any(np.abs(logsumexp(self.log_A, axis=1)) > tol):
            raise ValueError("transition rows do not normalise")

    def emission_logprob(self, feats) -> np.ndarray:
        """(N, F) features -> (N, K) per-state emission log densities."""
        feats = np.atleast_2d(np.asarray(feats, float))
        if feats.shape[-1] != self.n_features:
            raise ValueError(f"feature dimension {feats.shape[-1]} does not match model F={self.n_features}")
        inv = np.exp(-self.log_stds)  # K, F
        z = (feats[:, None, :] - self.means[None]) * inv[None]
        return -0.5 * np.sum(z * z, axis=-1) - np.sum(self.log_stds, axis=1)[None] - 0.5 * self.n_features * LOG_2PI

    def to_params(self) -> dict:
        out = {"pi": np.exp(self.log_pi), "A": np.exp(self.log_A)}
        for k in range(self.n_states):
            out[f"emission_mean_{k}"] = self.means[k]
            out[f"emission_logstd_{k}"] = self.log_stds[k]
        return out

    @classmethod
    def from_params(cls, params: dict) -> "HmmModel":
        K = len(params["pi"])
        with np.errstate(divide="ignore"):
            log_pi = np.maximum(np.log(params["pi"]), LOG_FLOOR)
            log_A = np.maximum(np.log(params["A"]), LOG_FLOOR)
        means = np.stack([params[f"emission_mean_{k}"] for k in range(K)])
        log_stds = np.stack([params[f"emission_logstd_{k}"] for k in range(K)])
        return cls(log_pi, log_A, means, log_stds)


@dataclass(frozen=True)
class ForwardState:
    log_alpha: np.ndarray  # filtered state distribution, normalised
    loglik: float = 0.0  # log P(observations so far)
    steps: int = 0


def emission_feature(x_nearest, x_next, mu, obs, n_features=None) -> np.ndarray:
    """``[x_next - mu, obs]``: the deviation from the RRT* target plus environment features."""
    delta = np.asarray(x_next, float)[:2] - np.asarray(mu, float)[:2]
    feat = np.concatenate([delta, np.asarray(obs, float).ravel()])
    if n_features is not None and feat.shape[0] != n_features:
        raise ValueError(f"feature has {feat.shape[0]} entries, model expects {n_features}")
    return feat


def forward_init(model: HmmModel) -> ForwardState:
    return ForwardState(_normalize_log(model.log_pi), 0.0, 0)


def _predict(model, state):
    if state.steps == 0:
        return state.log_alpha
    return logsumexp(state.log_alpha[:, None] + model.log_A, axis=0)


def forward_step(model: HmmModel, state: ForwardState, feature):
    """Advance the forward recursion by one observation.

    Returns ``(new_state, delta)`` where ``delta = log P(feature | previous features)``.
    """
    feature = np.asarray(feature, float)
    if not np.all(np.isfinite(feature)):
        raise ValueError("non-finite feature")
    pred = _predict(model, state)
    joint = pred + model.emission_logprob(feature[None])[0]
    delta = logsumexp(joint)
    new = ForwardState(np.maximum(joint - delta, LOG_FLOOR), state.loglik + delta, state.steps + 1)
    return new, float(delta)


def score_features(model: HmmModel, state: ForwardState, feats) -> np.ndarray:
    """Vectorised :func:`forward_step` deltas for a stack of candidate features (no state change)."""
    pred = _predict(model, state)
    return logsumexp(pred[None, :] + model.emission_logprob(feats), axis=1)


def score_candidate(model: HmmModel, state: ForwardState, x_nearest, x_next, mu, obs) -> float:
    feat = emission_feature(x_nearest, x_next, mu, obs, model.n_features)
    return float(score_features(model, state, feat[None])[0])


def sequence_loglik(model: HmmModel, feats) -> float:
    state = forward_init(model)
    for f in feats:
        state, _ = forward_step(model, state, f)
    return state.loglik


def sample_sequence(model: HmmModel, T: int, rng: np.random.Generator):
    """Draw ``(features, states)`` of length ``T`` from the model."""
    pi = np.exp(model.log_pi)
    A = np.exp(model.log_A)
    states = np.empty(T, dtype=int)
    states[0] = rng.choice(model.n_states, p=pi / pi.sum())
    for t in range(1, T):
        row = A[states[t - 1]]
        states[t] = rng.choice(model.n_states, p=row / row.sum())
    noise = rng.standard_normal((T, model.n_features))
    feats = model.means[states] + np.exp(model.log_stds[states]) * noise
    return feats, states


# ----------------------------------------------------------------------------
# Baum-Welch


def _e_step(model, seq):
    T = len(seq)
    K = model.n_states
    logB = model.emission_logprob(seq)
    la = np.empty((T, K))
    lb = np.zeros((T, K))
    la[0] = model.log_pi + logB[0]
    for t in range(1, T):
        la[t] = logsumexp(la[t - 1][:, None] + model.log_A, axis=0) + logB[t]
    for t in range(T - 2, -1, -1):
        lb[t] = logsumexp(model.log_A + (logB[t + 1] + lb[t + 1])[None, :], axis=1)
    ll = logsumexp(la[-1])
    gamma = np.exp(la + lb - ll)
    xi = np.zeros((K, K))
    for t in range(T - 1):
        xi += np.exp(la[t][:, None] + model.log_A + (logB[t + 1] + lb[t + 1])[None, :] - ll)
    return ll, gamma, xi


def _kmeans_init(X, K, rng):
    if K == 1:
        return np.zeros(len(X), dtype=int)
    scale = X.std(axis=0)
    scale[scale < 1e-12] = 1.0
    Z = (X - X.mean(axis=0)) / scale
    _, labels = kmeans2(Z, K, minit="++", seed=rng)
    return labels


def _params_from_labels(seqs, labels, K, var_floor):
    X = np.concatenate(seqs)
    F = X.shape[1]
    means = np.empty((K, F))
    var = np.empty((K, F))
    for k in range(K):
        sel = X[labels == k]
        if len(sel) == 0:
            sel = X
        means[k] = sel.mean(axis=0)
        var[k] = np.maximum(sel.var(axis=0), var_floor)
    pi = np.ones(K)
    A = np.ones((K, K))
    pos = 0
    for s in seqs:
        lab = labels[pos : pos + len(s)]
        pi[lab[0]] += 1
        np.add.at(A, (lab[:-1], lab[1:]), 1)
        pos += len(s)
    return pi / pi.sum(), A / A.sum(axis=1, keepdims=True), means, var


def _model(pi, A, means, var, history=()):
    with np.errstate(divide="ignore"):
        return HmmModel(
            _normalize_log(np.log(pi)),
            _normalize_log(np.log(A), axis=1),
            means,
            0.5 * np.log(var),
            tuple(history),
        )


def em_fit(sequences, n_states=3, seed=0, max_iters=100, tol=1e-6, var_floor=VAR_FLOOR) -> HmmModel:
    """Fit a diagonal-Gaussian HMM to feature sequences by Baum-Welch.

    ``sequences`` is a list of (T_i, F) arrays with T_i >= 2.  Initial
    emissions come from seeded k-means.  Iteration stops after ``max_iters``
    or once the total log-likelihood improves by less than ``tol`` (pass
    ``tol=None`` to always run ``max_iters``).  Per-iteration log-likelihoods
    are kept in ``train_loglik``.
    """
    seqs = [np.asarray(s, float) for s in sequences]
    if not seqs:
        raise ValueError("no training sequences")
    if any(s.ndim != 2 or len(s) < 2 for s in seqs):
        raise ValueError("every training sequence needs shape (T, F) with T >= 2")
    F = seqs[0].shape[1]
    if any(s.shape[1] != F for s in seqs):
        raise ValueError("inconsistent feature dimension across sequences")
    rng = rng_stream(seed, 0xE3)
    labels = _kmeans_init(np.concatenate(seqs), n_states, rng)
    pi, A, means, var = _params_from_labels(seqs, labels, n_states, var_floor)
    model = _model(pi, A, means, var)
    history = []
    for _ in range(max_iters):
        total = 0.0
        g0 = np.zeros(n_states)
        xi_sum = np.zeros((n_states, n_states))
        w = np.zeros(n_states)
        wx = np.zeros((n_states, F))
        wxx = np.zeros((n_states, F))
        for s in seqs:
            ll, gamma, xi = _e_step(model, s)
            total += ll
            g0 += gamma[0]
            xi_sum += xi
            w += gamma.sum(axis=0)
            wx += gamma.T @ s
            wxx += gamma.T @ (s * s)
        history.append(float(total))
        if tol is not None and len(history) > 1 and history[-1] - history[-2] < tol:
            break
        pi = g0 / g0.sum()
        A = np.exp(model.log_A).copy()
        rows = xi_sum.sum(axis=1)
        ok = rows > 1e-300
        A[ok] = xi_sum[ok] / rows[ok, None]
        means = model.means.copy()
        var = np.exp(2.0 * model.log_stds)
        live = w > 1e-10
        means[live] = wx[live] / w[live, None]
        var[live] = np.maximum(wxx[live] / w[live, None] - means[live] ** 2, var_floor)
        model = _model(pi, A, means, var)
    return HmmModel(model.log_pi, model.log_A, model.means, model.log_stds, tuple(history))


def random_model(rng: np.random.Generator, n_states: int, n_features: int) -> HmmModel:
    """A random well-formed model, handy for tests and demos."""
    pi = rng.dirichlet(np.ones(n_states))
    A = rng.dirichlet(np.ones(n_states), size=n_states)
    means = rng.normal(0.0, 2.0, size=(n_states, n_features))
    log_stds = rng.uniform(math.log(0.3), math.log(2.0), size=(n_states, n_features))
    return HmmModel(np.log(pi), np.log(A), means, log_stds)
