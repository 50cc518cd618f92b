"""Sparse attentive backtracking around any of the decoder cells.

Forward pass: every k_attn-th hidden state is written to a small memory.
Before each cell update the previous state queries the memory by dot
product, the k_top best-scoring entries survive (ties to the lower index),
the (k_top+1)-th best score is subtracted from the survivors, and the
weighted sum of surviving memories is added to the cell's pre-activation
through the shared embedding path.

Backward pass: the state-to-state chain is only traversed for the last
`trunc` links; everything older contributes through its own local cell step
and through whatever attention edges selected it.  The subtraction
threshold is treated as a constant, so non-selected memories get exactly
zero gradient through the attention path.  With k_top=0 and trunc >= K this
reduces to plain unrolled backprop.
"""

from dataclasses import dataclass, field

import numpy as np

from ..model import ForwardTrace, GradientSet, STATE_PARAM_ORDER, cell_step, embed, reconstruct
from ..numerics import NonFiniteError
from .cellgrad import backward_cell
from .loss import loss_recon_grads


@dataclass
class SabConfig:
    k_top: int = 2     # memories kept after sparsification
    k_attn: int = 1    # memory-write period in steps
    trunc: int = 1     # local truncation window of the recurrent chain

    def __post_init__(self):
        if self.k_top < 0 or self.k_attn < 1 or self.trunc < 1:
            raise ValueError("invalid attention config")


@dataclass
class StepPlan:
    """Sparsification decisions of one step, reusable as a fixed mask."""
    selected: np.ndarray       # (B, k_sel) memory slot per batch row
    threshold: np.ndarray      # (B,) score subtracted from survivors
    weights: np.ndarray        # (B, k_sel) surviving scores after subtraction
    slot_steps: tuple          # memory slot -> write step index


@dataclass
class SabMemory:
    write_steps: list = field(default_factory=list)   # step index per slot
    plans: list = field(default_factory=list)         # one StepPlan per step


def _attend(query, mem_states, k_top, fixed_plan=None):
    """Sparse attention of `query` (B, n) over stacked memories (m, B, n).

    Returns (summary (B, n), StepPlan-or-None).  With a fixed plan, the
    selection and threshold are reused and only the surviving scores are
    recomputed from the current states.
    """
    m = mem_states.shape[0] if mem_states is not None else 0
    batch = query.shape[0]
    if fixed_plan is not None:
        plan = fixed_plan
        if plan.selected.shape[1] == 0:
            return np.zeros_like(query), plan
        picked = mem_states[plan.selected, np.arange(batch)[:, None]]
        weights = np.einsum("bn,bjn->bj", query, picked) - plan.threshold[:, None]
        summary = np.einsum("bj,bjn->bn", weights, picked)
        return summary, StepPlan(plan.selected, plan.threshold, weights,
                                 plan.slot_steps)

    if m == 0 or k_top == 0:
        empty = StepPlan(np.zeros((batch, 0), dtype=int), np.zeros(batch),
                         np.zeros((batch, 0)), ())
        return np.zeros_like(query), empty

    scores = np.einsum("bn,mbn->bm", query, mem_states)
    k_sel = min(k_top, m)
    order = np.argsort(-scores, axis=1, kind="stable")
    selected = order[:, :k_sel]
    if m > k_top:
        threshold = np.take_along_axis(scores, order[:, k_top:k_top + 1], axis=1)[:, 0]
    else:
        threshold = np.zeros(batch)
    weights = np.take_along_axis(scores, selected, axis=1) - threshold[:, None]
    picked = mem_states[selected, np.arange(batch)[:, None]]
    summary = np.einsum("bj,bjn->bn", weights, picked)
    return summary, StepPlan(selected, threshold, weights, ())


def sab_forward(inputs, params, cfg, sab_cfg, fixed_memory=None):
    """Attention-augmented episode.  Returns (trace, memory).

    Passing a previously recorded `fixed_memory` re-runs the episode with
    that memory's selection mask and thresholds held constant, which is the
    function the backward pass differentiates exactly (used by the
    finite-difference checks).
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
    memory = SabMemory()
    mem_states = []

    for k in range(1, cfg.steps + 1):
        stacked = np.stack(mem_states) if mem_states else None
        fixed_plan = fixed_memory.plans[k - 1] if fixed_memory is not None else None
        summary, plan = _attend(s, stacked, sab_cfg.k_top, fixed_plan)
        if fixed_plan is None:
            plan = StepPlan(plan.selected, plan.threshold, plan.weights,
                            tuple(memory.write_steps))
        trace.summaries.append(summary)
        memory.plans.append(plan)

        s, c, cache = cell_step(cfg, params, e + summary, s, c)
        trace.states.append(s)
        trace.cell_states.append(c)
        trace.caches.append(cache)
        trace.recons.append(reconstruct(s, params))

        if (k - 1) % sab_cfg.k_attn == 0:
            mem_states.append(s)
            memory.write_steps.append(k)
    return trace, memory


def sab_backward(trace, memory, inputs, targets, params, cfg, sab_cfg,
                 loss_cfg):
    """Sparse-replay gradients for an episode recorded by sab_forward."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim == 2:
        inputs = inputs[None]
    dldp = loss_recon_grads(targets, trace.recons, loss_cfg)

    grads = params.zeros_like(cfg.cell)
    batch = inputs.shape[0]
    steps = cfg.steps
    g_s_acc = [np.zeros((batch, cfg.n)) for _ in range(steps + 1)]
    g_c_acc = [np.zeros((batch, cfg.n)) for _ in range(steps + 1)] \
        if cfg.cell == "lstm" else None
    g_e = np.zeros((batch, cfg.n))
    rows = np.arange(batch)

    for k in range(steps, 0, -1):
        g_p = dldp[k - 1]
        grads.out_w += g_p.T @ trace.states[k]
        grads.out_b += g_p.sum(axis=0)
        g_s = g_s_acc[k] + g_p @ params.out_w
        g_c = g_c_acc[k] if g_c_acc is not None else None

        g_e_k, g_sprev, g_cprev, state_grads = backward_cell(
            cfg, params, trace.caches[k - 1], g_s, g_c)
        g_e += g_e_k
        for name in STATE_PARAM_ORDER[cfg.cell]:
            grads.state[name] += state_grads[name]

        # attention edges: the summary received the same upstream gradient
        # as the embedding at this step
        plan = memory.plans[k - 1]
        if plan.selected.shape[1]:
            query = trace.states[k - 1]
            for j in range(plan.selected.shape[1]):
                slots = plan.selected[:, j]
                mem_vals = np.empty((batch, cfg.n))
                for slot in np.unique(slots):
                    mask = slots == slot
                    mem_vals[mask] = trace.states[plan.slot_steps[slot]][mask]
                g_weight = np.einsum("bn,bn->b", g_e_k, mem_vals)
                g_mem = plan.weights[:, j:j + 1] * g_e_k + g_weight[:, None] * query
                g_s_acc[k - 1] += g_weight[:, None] * mem_vals
                for slot in np.unique(slots):
                    mask = slots == slot
                    g_s_acc[plan.slot_steps[slot]][mask] += g_mem[mask]

        # recurrent chain: only the last `trunc` links are traversed
        if k > steps - sab_cfg.trunc:
            g_s_acc[k - 1] += g_sprev
            if g_c_acc is not None:
                g_c_acc[k - 1] += g_cprev

    for i in range(cfg.n_inputs):
        grads.transform[i] = g_e.T @ inputs[:, i, :]

    for t in grads.tensors(cfg.cell):
        if not np.all(np.isfinite(t)):
            raise NonFiniteError("non-finite gradient: training diverged")
    return grads
