"""Shared numeric kernel: activations, seeded randomness, norm clipping,
and the central-difference gradient oracle.

All arrays are float64 numpy ndarrays.  Matrices are row-major, vectors are
1-D.  Every public function is a pure function of its inputs plus (where
present) an explicit RNG argument, so results are bit-reproducible.
"""

import math

import numpy as np


class NonFiniteError(FloatingPointError):
    """Raised when a value that must be finite contains NaN or Inf."""


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def _relu(v):
    return np.maximum(v, 0.0)


def _relu_deriv(v):
    # derivative at exactly 0 is defined as 0
    return (v > 0.0).astype(np.float64)


_ACTIVATIONS = {
    "tanh": (np.tanh, lambda v: 1.0 - np.tanh(v) ** 2),
    "sigmoid": (
        lambda v: 1.0 / (1.0 + np.exp(-v)),
        lambda v: (lambda s: s * (1.0 - s))(1.0 / (1.0 + np.exp(-v))),
    ),
    "relu": (_relu, _relu_deriv),
    "identity": (lambda v: np.asarray(v, dtype=np.float64),
                 lambda v: np.ones_like(v, dtype=np.float64)),
}

ACTIVATION_KINDS = tuple(_ACTIVATIONS)


def activate(kind, v):
    """Apply the named activation elementwise."""
    try:
        fn, _ = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None
    return fn(np.asarray(v, dtype=np.float64))


def activate_deriv(kind, pre_activation):
    """Elementwise derivative of the named activation at `pre_activation`."""
    try:
        _, dfn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None
    return dfn(np.asarray(pre_activation, dtype=np.float64))


def sigmoid(v):
    return 1.0 / (1.0 + np.exp(-v))


# ---------------------------------------------------------------------------
# randomness
# ---------------------------------------------------------------------------

class SeededRng:
    """Deterministic random stream backed by numpy's Philox generator.

    Philox is a counter-based generator, so the stream produced by a given
    (seed, stream) pair is identical across runs and platforms.  Independent
    child streams are derived through SeedSequence spawn keys, keeping all
    randomness in a run reproducible from the single recorded seed.
    """

    def __init__(self, seed, _seq=None):
        self.seed = int(seed)
        self._seq = _seq if _seq is not None else np.random.SeedSequence(self.seed)
        self._gen = np.random.Generator(np.random.Philox(self._seq))

    def child(self, index):
        """Independent stream number `index` derived from this one."""
        seq = np.random.SeedSequence(
            entropy=self._seq.entropy,
            spawn_key=self._seq.spawn_key + (int(index),),
        )
        return SeededRng(self.seed, _seq=seq)

    def uniform(self, low, high, shape=None):
        return self._gen.uniform(low, high, shape)

    def integers(self, low, high):
        return int(self._gen.integers(low, high))

    def signs(self, shape):
        """Independent uniform +-1 entries."""
        return self._gen.integers(0, 2, shape).astype(np.float64) * 2.0 - 1.0

    def permutation(self, count):
        return self._gen.permutation(count)

    def standard_normal(self, shape=None):
        return self._gen.standard_normal(shape)


def init_uniform(rng, rows, cols, bound=0.054):
    """Weight matrix with entries drawn from U(-bound, bound)."""
    if bound <= 0:
        raise ValueError("bound must be positive")
    return rng.uniform(-bound, bound, (rows, cols))


# ---------------------------------------------------------------------------
# gradient clipping
# ---------------------------------------------------------------------------

def global_norm(tensors):
    """L2 norm over the concatenation of all entries of all tensors."""
    return math.sqrt(math.fsum(float(np.sum(t * t)) for t in tensors))


def clip_global_norm(grads, max_norm=13.0):
    """Rescale a list of gradient tensors so their global L2 norm is at most
    `max_norm`.

    Below-threshold inputs are returned unchanged (same objects), which makes
    the operation exactly idempotent.  Non-finite inputs indicate diverged
    training and raise.
    """
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("non-finite gradient: training diverged")
    norm = global_norm(grads)
    if not math.isfinite(norm):
        raise NonFiniteError("gradient norm overflow: training diverged")
    # tolerance keeps clip(clip(g)) bitwise equal to clip(g)
    if norm <= max_norm * (1.0 + 5e-14):
        return list(grads)
    scale = max_norm / norm
    return [g * scale for g in grads]


# ---------------------------------------------------------------------------
# finite-difference oracle
# ---------------------------------------------------------------------------

def finite_diff_grad(f, params, epsilon=1e-5):
    """Central-difference gradient of scalar `f` w.r.t. a list of arrays.

    This is the independent oracle every analytic gradient path in the
    package is validated against; it must stay a plain two-point central
    difference, evaluated in float64.
    """
    if not (1e-7 <= epsilon <= 1e-4):
        raise ValueError("epsilon must lie in [1e-7, 1e-4]")
    params = [np.array(p, dtype=np.float64) for p in params]
    grads = [np.zeros_like(p) for p in params]
    for p, g in zip(params, grads):
        flat_p = p.reshape(-1)
        flat_g = g.reshape(-1)
        for i in range(flat_p.size):
            orig = flat_p[i]
            flat_p[i] = orig + epsilon
            f_plus = float(f(params))
            flat_p[i] = orig - epsilon
            f_minus = float(f(params))
            flat_p[i] = orig
            if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
                raise NonFiniteError("objective returned non-finite value")
            flat_g[i] = (f_plus - f_minus) / (2.0 * epsilon)
    return grads


def max_relative_error(analytic, numeric):
    """Worst-case relative disagreement between two gradient tensor lists.

    Per component: |a - n| / max(|a|, |n|, floor), with floor set to 1e-3 of
    the largest numeric-gradient magnitude so that components that are tiny
    relative to the gradient's own scale are compared absolutely (the
    central-difference oracle carries ~1e-10 absolute noise).
    """
    if isinstance(analytic, np.ndarray):
        analytic, numeric = [analytic], [numeric]
    gmax = max((float(np.max(np.abs(n))) for n in numeric), default=0.0)
    floor = max(1e-3 * gmax, 1e-12)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst
