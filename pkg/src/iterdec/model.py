"""The hybrid estimator: a linear embedding of nine quantized neighbor
patches, one of five state functions, and a linear reconstruction head,
unrolled over K refinement steps.

Shapes use a leading batch axis B throughout:
    inputs  (B, N, d2)   quantized symbols
    e       (B, n)       embedding, computed once per episode
    s, c    (B, n)       hidden / LSTM cell state
    p~      (B, d2)      reconstruction per step

Episodes start from s_0 = 0 (and c_0 = 0); the embedding is constant across
the K steps because the quantized input does not change while refining.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .codec import CodecFormatError
from .numerics import activate, init_uniform, sigmoid

CELL_KINDS = ("elman", "lstm", "gru", "delta", "mlp")

# state-parameter tensors per cell, in flattening / checkpoint order
STATE_PARAM_ORDER = {
    "elman": ("V", "b"),
    "lstm": ("V_f", "V_i", "V_c", "V_o", "b_f", "b_i", "b_c", "b_o"),
    "gru": ("V_z", "V_r", "V_s", "b_z", "b_r", "b_s"),
    "delta": ("V", "b", "b_r", "alpha", "beta1", "beta2"),
    "mlp": ("b",),
}


@dataclass
class DecoderConfig:
    cell: str = "lstm"
    n: int = 512          # hidden units
    d: int = 8            # patch side
    n_inputs: int = 9     # neighbor patches per block
    steps: int = 4        # refinement passes K
    state_activation: str = "tanh"  # Elman only; other cells fix tanh

    def __post_init__(self):
        if self.cell not in CELL_KINDS:
            raise ValueError(f"unknown cell kind {self.cell!r}")
        if self.steps < 1 or self.n < 1:
            raise ValueError("steps and n must be >= 1")

    @property
    def d2(self):
        return self.d * self.d

    def phi_s(self):
        return self.state_activation if self.cell == "elman" else "tanh"


@dataclass
class DecoderParams:
    """All trainable tensors.  Gradient sets reuse this container with the
    same shapes."""
    transform: list          # W_1..W_N, each (n, d2)
    state: dict              # cell-specific, see STATE_PARAM_ORDER
    out_w: np.ndarray        # (d2, n)
    out_b: np.ndarray        # (d2,)

    def tensors(self, order):
        """All tensors in canonical order for the given cell kind."""
        return (list(self.transform)
                + [self.state[k] for k in STATE_PARAM_ORDER[order]]
                + [self.out_w, self.out_b])

    def zeros_like(self, cell):
        return DecoderParams(
            transform=[np.zeros_like(w) for w in self.transform],
            state={k: np.zeros_like(self.state[k]) for k in STATE_PARAM_ORDER[cell]},
            out_w=np.zeros_like(self.out_w),
            out_b=np.zeros_like(self.out_b),
        )

    def copy(self):
        return DecoderParams(
            transform=[w.copy() for w in self.transform],
            state={k: v.copy() for k, v in self.state.items()},
            out_w=self.out_w.copy(),
            out_b=self.out_b.copy(),
        )


GradientSet = DecoderParams


def _state_shapes(cfg):
    n = cfg.n
    mats = {"V": (n, n), "V_f": (n, n), "V_i": (n, n), "V_c": (n, n),
            "V_o": (n, n), "V_z": (n, n), "V_r": (n, n), "V_s": (n, n)}
    shapes = {}
    for name in STATE_PARAM_ORDER[cfg.cell]:
        shapes[name] = mats.get(name, (n,))
    return shapes


def init_params(cfg, rng, weight_bound=0.054, mid_gray_bias=True):
    """Fresh parameters: weight matrices ~ U(-bound, bound), biases zero.

    The reconstruction bias starts at mid-gray (0.5) so an untrained decoder
    emits mean luminance instead of black; pass mid_gray_bias=False for a
    zero start.  Delta-cell mixing vectors start at alpha=0, beta1=beta2=1,
    which reduces the cell to a plain gated RNN at initialization.
    """
    n, d2 = cfg.n, cfg.d2
    transform = [init_uniform(rng, n, d2, weight_bound) for _ in range(cfg.n_inputs)]
    state = {}
    for name, shape in _state_shapes(cfg).items():
        if len(shape) == 2:
            state[name] = init_uniform(rng, shape[0], shape[1], weight_bound)
        else:
            state[name] = np.zeros(shape)
    if cfg.cell == "delta":
        state["beta1"] = np.ones(n)
        state["beta2"] = np.ones(n)
    out_w = init_uniform(rng, d2, n, weight_bound)
    out_b = np.full(d2, 0.5) if mid_gray_bias else np.zeros(d2)
    return DecoderParams(transform=transform, state=state, out_w=out_w, out_b=out_b)


# ---------------------------------------------------------------------------
# forward functions
# ---------------------------------------------------------------------------

def embed(inputs, transform):
    """e = W_1 q_1 + ... + W_N q_N for a batch of blocks."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim == 2:
        inputs = inputs[None]
    if inputs.shape[1] != len(transform):
        raise ValueError(
            f"block has {inputs.shape[1]} input patches, "
            f"embedding expects {len(transform)}")
    e = inputs[:, 0, :] @ transform[0].T
    for i in range(1, len(transform)):
        e = e + inputs[:, i, :] @ transform[i].T
    return e


def step_elman(e, s_prev, state, phi_s="tanh"):
    pre = e + s_prev @ state["V"].T + state["b"]
    s = activate(phi_s, pre)
    return s, {"pre": pre, "s_prev": s_prev}


def step_lstm(e, s_prev, c_prev, state):
    """Gated update with a separate cell state; the shared embedding feeds
    every gate (weight-tied input)."""
    pre_f = e + s_prev @ state["V_f"].T + state["b_f"]
    pre_i = e + s_prev @ state["V_i"].T + state["b_i"]
    pre_c = e + s_prev @ state["V_c"].T + state["b_c"]
    pre_o = e + s_prev @ state["V_o"].T + state["b_o"]
    f, i, o = sigmoid(pre_f), sigmoid(pre_i), sigmoid(pre_o)
    c_tilde = np.tanh(pre_c)
    c = f * c_prev + i * c_tilde
    tanh_c = np.tanh(c)
    s = o * tanh_c
    return s, c, {"f": f, "i": i, "o": o, "c_tilde": c_tilde, "tanh_c": tanh_c,
                  "s_prev": s_prev, "c_prev": c_prev}


def step_gru(e, s_prev, state):
    z = sigmoid(e + s_prev @ state["V_z"].T + state["b_z"])
    r = sigmoid(e + s_prev @ state["V_r"].T + state["b_r"])
    rs = r * s_prev
    s_tilde = np.tanh(e + rs @ state["V_s"].T + state["b_s"])
    s = z * s_tilde + (1.0 - z) * s_prev
    return s, {"z": z, "r": r, "rs": rs, "s_tilde": s_tilde, "s_prev": s_prev}


def step_delta(e, s_prev, state):
    """Gated cell with second-order input-recurrent interactions.

    The gate r mixes the candidate with the previous state, and the mix is
    squashed again on the way out (so r saturated at 0 double-squashes the
    candidate).
    """
    h = s_prev @ state["V"].T
    d1 = state["alpha"] * h * e
    d2 = state["beta1"] * h + state["beta2"] * e
    pre = d1 + d2 + state["b"]
    s_tilde = np.tanh(pre)
    r = sigmoid(e + state["b_r"])
    inner = (1.0 - r) * s_tilde + r * s_prev
    s = np.tanh(inner)
    return s, {"h": h, "pre": pre, "s_tilde": s_tilde, "r": r, "inner": inner,
               "s_prev": s_prev, "e": e}


def step_mlp(e, state):
    pre = e + state["b"]
    return np.tanh(pre), {"pre": pre}


def reconstruct(s, params):
    """p~ = U s + c, unclamped (clamping happens only at metric time)."""
    return s @ params.out_w.T + params.out_b


def cell_step(cfg, params, e, s_prev, c_prev):
    """One state update for the configured cell.  Returns (s, c, cache);
    c is None for cells without a separate cell state."""
    kind = cfg.cell
    if kind == "elman":
        s, cache = step_elman(e, s_prev, params.state, cfg.phi_s())
        return s, None, cache
    if kind == "lstm":
        return step_lstm(e, s_prev, c_prev, params.state)
    if kind == "gru":
        s, cache = step_gru(e, s_prev, params.state)
        return s, None, cache
    if kind == "delta":
        s, cache = step_delta(e, s_prev, params.state)
        return s, None, cache
    s, cache = step_mlp(e, params.state)
    return s, None, cache


@dataclass
class ForwardTrace:
    """Everything a reverse pass or replay needs from one episode."""
    embedding: np.ndarray          # (B, n)
    states: list                   # s_0..s_K
    cell_states: list              # c_0..c_K (lstm) or [None]*(K+1)
    caches: list                   # per-step cell caches, length K
    recons: list                   # p~_1..p~_K
    summaries: list = field(default_factory=list)  # attention summaries (SAB)


def run_episode(inputs, params, cfg, step_hook=None):
    """K refinement passes over one batch of blocks.

    `step_hook(k, e, s_prev, c_prev) -> extra pre-activation` lets the
    attention wrapper inject its memory summary; the plain decoder passes
    nothing and the hook stays None.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim == 2:
        inputs = inputs[None]
    batch = inputs.shape[0]
    e = embed(inputs, params.transform)
    s = np.zeros((batch, cfg.n))
    c = np.zeros((batch, cfg.n)) if cfg.cell == "lstm" else None
    trace = ForwardTrace(embedding=e, states=[s], cell_states=[c],
                         caches=[], recons=[])
    for k in range(1, cfg.steps + 1):
        e_eff = e
        if step_hook is not None:
            extra = step_hook(k, e, s, c)
            if extra is not None:
                e_eff = e + extra
                trace.summaries.append(extra)
        s, c, cache = cell_step(cfg, params, e_eff, s, c)
        trace.states.append(s)
        trace.cell_states.append(c)
        trace.caches.append(cache)
        trace.recons.append(reconstruct(s, params))
    return trace


# ---------------------------------------------------------------------------
# checkpoint format
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"IDCK"
CHECKPOINT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sIIIIII")  # magic, version, cell, n, N, d, phi_s
_CELL_CODES = {k: i for i, k in enumerate(CELL_KINDS)}
_PHI_CODES = {"tanh": 0, "sigmoid": 1, "relu": 2}


def save_checkpoint(path, params, cfg):
    """Little-endian binary checkpoint; tensors in canonical order
    (W_1..W_N, state tensors, U, c) as raw float64."""
    with open(path, "wb") as fh:
        fh.write(_CKPT_HEADER.pack(
            CHECKPOINT_MAGIC, CHECKPOINT_VERSION, _CELL_CODES[cfg.cell],
            cfg.n, cfg.n_inputs, cfg.d, _PHI_CODES[cfg.state_activation]))
        for t in params.tensors(cfg.cell):
            fh.write(np.ascontiguousarray(t, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns (params, cfg); cfg.steps is left at its default (the step
    count is a run setting, not a parameter)."""
    with open(path, "rb") as fh:
        header = fh.read(_CKPT_HEADER.size)
        if len(header) < _CKPT_HEADER.size:
            raise CodecFormatError(f"{path}: truncated header")
        magic, version, cell_code, n, n_inputs, d, phi_code = _CKPT_HEADER.unpack(header)
        if magic != CHECKPOINT_MAGIC:
            raise CodecFormatError(f"{path}: bad magic {magic!r}")
        if version != CHECKPOINT_VERSION:
            raise CodecFormatError(f"{path}: unsupported version {version}")
        cell = CELL_KINDS[cell_code]
        phi = {v: k for k, v in _PHI_CODES.items()}[phi_code]
        cfg = DecoderConfig(cell=cell, n=n, d=d, n_inputs=n_inputs,
                            state_activation=phi)
        raw = fh.read()

    def take(shape, offset):
        count = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f8", count=count,
                            offset=offset).reshape(shape).copy()
        return arr, offset + count * 8

    offset = 0
    transform = []
    for _ in range(n_inputs):
        w, offset = take((n, d * d), offset)
        transform.append(w)
    state = {}
    for name, shape in _state_shapes(cfg).items():
        state[name], offset = take(shape, offset)
    out_w, offset = take((d * d, n), offset)
    out_b, offset = take((d * d,), offset)
    if offset != len(raw):
        raise CodecFormatError(f"{path}: trailing bytes after parameters")
    return DecoderParams(transform, state, out_w, out_b), cfg
