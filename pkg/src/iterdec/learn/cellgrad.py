"""Per-cell derivative algebra shared by every gradient path.

Three views of the same single-step derivatives are provided:

* reverse mode (`backward_cell`, `param_vjp`) for unrolled backprop and the
  rank-one estimator's parameter projection,
* materialized Jacobians (`state_jacobian`, `add_immediate_jacobian`) for
  exact forward-mode sensitivity propagation,
* a Jacobian-vector product (`state_jvp`) so the rank-one estimator never
  materializes the state Jacobian.

The flattened recurrent parameter vector covers the transform matrices
W_1..W_N followed by the cell's state tensors in STATE_PARAM_ORDER; the
reconstruction head (U, c) is excluded because it never feeds the state
recursion and gets exact direct gradients everywhere.

Every function here is validated against the central-difference oracle in
the test suite; keep the algebra in sync with the forward
definitions in model.py.
"""

import numpy as np

from ..model import STATE_PARAM_ORDER


def zdim(cfg):
    """Size of the full recurrent state z (hidden + cell state for LSTM)."""
    return 2 * cfg.n if cfg.cell == "lstm" else cfg.n


def recurrent_layout(cfg):
    """[(name, shape, offset)] for the flattened recurrent parameters."""
    n, d2 = cfg.n, cfg.d2
    layout = []
    offset = 0
    for i in range(cfg.n_inputs):
        layout.append((f"W_{i}", (n, d2), offset))
        offset += n * d2
    for name in STATE_PARAM_ORDER[cfg.cell]:
        shape = (n, n) if name.startswith("V") else (n,)
        layout.append((name, shape, offset))
        offset += int(np.prod(shape))
    return layout


def recurrent_size(cfg):
    layout = recurrent_layout(cfg)
    name, shape, offset = layout[-1]
    return offset + int(np.prod(shape))


def flatten_recurrent(params, cfg):
    """vec(Θ_t ∪ Θ_s) in canonical order (row-major per tensor)."""
    parts = [w.reshape(-1) for w in params.transform]
    parts += [params.state[k].reshape(-1) for k in STATE_PARAM_ORDER[cfg.cell]]
    return np.concatenate(parts)


def unflatten_recurrent(flat, cfg):
    """Inverse of flatten_recurrent: flat vector -> (transform list, state dict)."""
    transform, state = [], {}
    for name, shape, offset in recurrent_layout(cfg):
        size = int(np.prod(shape))
        tensor = flat[offset:offset + size].reshape(shape).copy()
        if name.startswith("W_"):
            transform.append(tensor)
        else:
            state[name] = tensor
    return transform, state


# ---------------------------------------------------------------------------
# reverse mode
# ---------------------------------------------------------------------------

def _gate_grads(cfg, params, cache, g_s, g_c):
    """Common reverse-step algebra.

    Returns (g_e, g_s_prev, g_c_prev, parts) where parts maps each state
    tensor to per-sample data: ("matvec", pre_grad, cols) for matrices
    (grad = pre_grad^T @ cols summed over batch) and ("vector", pre_grad)
    for per-unit vectors.
    """
    st = params.state
    kind = cfg.cell

    if kind == "elman":
        from ..numerics import activate_deriv
        g_pre = g_s * activate_deriv(cfg.phi_s(), cache["pre"])
        return (g_pre, g_pre @ st["V"], None,
                {"V": ("matvec", g_pre, cache["s_prev"]),
                 "b": ("vector", g_pre)})

    if kind == "mlp":
        g_pre = g_s * (1.0 - np.tanh(cache["pre"]) ** 2)
        return g_pre, np.zeros_like(g_s), None, {"b": ("vector", g_pre)}

    if kind == "lstm":
        f, i, o = cache["f"], cache["i"], cache["o"]
        c_tilde, tanh_c = cache["c_tilde"], cache["tanh_c"]
        s_prev, c_prev = cache["s_prev"], cache["c_prev"]
        g_c_total = (g_c if g_c is not None else 0.0) \
            + g_s * o * (1.0 - tanh_c ** 2)
        gp_o = (g_s * tanh_c) * o * (1.0 - o)
        gp_f = (g_c_total * c_prev) * f * (1.0 - f)
        gp_i = (g_c_total * c_tilde) * i * (1.0 - i)
        gp_c = (g_c_total * i) * (1.0 - c_tilde ** 2)
        g_e = gp_f + gp_i + gp_c + gp_o
        g_sprev = gp_f @ st["V_f"] + gp_i @ st["V_i"] \
            + gp_c @ st["V_c"] + gp_o @ st["V_o"]
        g_cprev = g_c_total * f
        return (g_e, g_sprev, g_cprev,
                {"V_f": ("matvec", gp_f, s_prev), "V_i": ("matvec", gp_i, s_prev),
                 "V_c": ("matvec", gp_c, s_prev), "V_o": ("matvec", gp_o, s_prev),
                 "b_f": ("vector", gp_f), "b_i": ("vector", gp_i),
                 "b_c": ("vector", gp_c), "b_o": ("vector", gp_o)})

    if kind == "gru":
        z, r, rs = cache["z"], cache["r"], cache["rs"]
        s_tilde, s_prev = cache["s_tilde"], cache["s_prev"]
        gp_z = (g_s * (s_tilde - s_prev)) * z * (1.0 - z)
        gp_s = (g_s * z) * (1.0 - s_tilde ** 2)
        g_rs = gp_s @ st["V_s"]
        gp_r = (g_rs * s_prev) * r * (1.0 - r)
        g_e = gp_z + gp_r + gp_s
        g_sprev = g_s * (1.0 - z) + g_rs * r + gp_z @ st["V_z"] + gp_r @ st["V_r"]
        return (g_e, g_sprev, None,
                {"V_z": ("matvec", gp_z, s_prev), "V_r": ("matvec", gp_r, s_prev),
                 "V_s": ("matvec", gp_s, rs),
                 "b_z": ("vector", gp_z), "b_r": ("vector", gp_r),
                 "b_s": ("vector", gp_s)})

    if kind == "delta":
        h, s_tilde, r = cache["h"], cache["s_tilde"], cache["r"]
        s_prev, e_val = cache["s_prev"], cache["e"]
        g_inner = g_s * (1.0 - np.tanh(cache["inner"]) ** 2)
        gp = (g_inner * (1.0 - r)) * (1.0 - s_tilde ** 2)
        gp_r = (g_inner * (s_prev - s_tilde)) * r * (1.0 - r)
        g_h = gp * (st["alpha"] * e_val + st["beta1"])
        g_e = gp * (st["alpha"] * h + st["beta2"]) + gp_r
        g_sprev = g_inner * r + g_h @ st["V"]
        return (g_e, g_sprev, None,
                {"V": ("matvec", g_h, s_prev), "b": ("vector", gp),
                 "b_r": ("vector", gp_r), "alpha": ("vector", gp * h * e_val),
                 "beta1": ("vector", gp * h), "beta2": ("vector", gp * e_val)})

    raise ValueError(f"unknown cell kind {kind!r}")


def backward_cell(cfg, params, cache, g_s, g_c=None):
    """One reverse step: upstream (dL/ds, dL/dc) -> (g_e, g_s_prev, g_c_prev,
    state gradient dict summed over the batch)."""
    g_e, g_sprev, g_cprev, parts = _gate_grads(cfg, params, cache, g_s, g_c)
    grads = {}
    for name, part in parts.items():
        if part[0] == "matvec":
            _, pre_grad, cols = part
            grads[name] = pre_grad.T @ cols
        else:
            grads[name] = part[1].sum(axis=0)
    return g_e, g_sprev, g_cprev, grads


def param_vjp(cfg, params, cache, inputs, g_s, g_c=None):
    """Per-sample u^T (dz_new/dθ) over the flattened recurrent parameters.

    inputs: (B, N, d2) quantized symbols of the episode (needed because the
    transform matrices reach the state only through the embedding).
    Returns (B, θ_size).
    """
    g_e, _, _, parts = _gate_grads(cfg, params, cache, g_s, g_c)
    batch = g_s.shape[0]
    out = np.zeros((batch, recurrent_size(cfg)))
    n, d2 = cfg.n, cfg.d2
    for name, shape, offset in recurrent_layout(cfg):
        size = int(np.prod(shape))
        view = out[:, offset:offset + size]
        if name.startswith("W_"):
            i = int(name[2:])
            np.einsum("ba,bc->bac", g_e, inputs[:, i, :],
                      out=view.reshape(batch, n, d2))
        else:
            part = parts[name]
            if part[0] == "matvec":
                _, pre_grad, cols = part
                np.einsum("ba,bc->bac", pre_grad, cols,
                          out=view.reshape(batch, n, n))
            else:
                view[:] = part[1]
    return out


# ---------------------------------------------------------------------------
# forward mode
# ---------------------------------------------------------------------------

def _diag_embed(vec):
    """(B, n) -> (B, n, n) with vec on the diagonals."""
    batch, n = vec.shape
    out = np.zeros((batch, n, n))
    idx = np.arange(n)
    out[:, idx, idx] = vec
    return out


def state_jacobian(cfg, params, cache):
    """dz_new/dz_prev as a (B, zdim, zdim) array."""
    st = params.state
    kind = cfg.cell
    n = cfg.n

    if kind == "mlp":
        batch = cache["pre"].shape[0]
        return np.zeros((batch, n, n))

    if kind == "elman":
        from ..numerics import activate_deriv
        d = activate_deriv(cfg.phi_s(), cache["pre"])
        return d[:, :, None] * st["V"][None]

    if kind == "lstm":
        f, i, o = cache["f"], cache["i"], cache["o"]
        c_tilde, tanh_c = cache["c_tilde"], cache["tanh_c"]
        c_prev = cache["c_prev"]
        dT = 1.0 - tanh_c ** 2
        dc_dsprev = ((c_prev * f * (1.0 - f))[:, :, None] * st["V_f"][None]
                     + (c_tilde * i * (1.0 - i))[:, :, None] * st["V_i"][None]
                     + (i * (1.0 - c_tilde ** 2))[:, :, None] * st["V_c"][None])
        ds_dsprev = (tanh_c * o * (1.0 - o))[:, :, None] * st["V_o"][None] \
            + (o * dT)[:, :, None] * dc_dsprev
        batch = f.shape[0]
        jac = np.zeros((batch, 2 * n, 2 * n))
        jac[:, :n, :n] = ds_dsprev
        jac[:, :n, n:] = _diag_embed(o * dT * f)
        jac[:, n:, :n] = dc_dsprev
        jac[:, n:, n:] = _diag_embed(f)
        return jac

    if kind == "gru":
        z, r, s_tilde = cache["z"], cache["r"], cache["s_tilde"]
        s_prev = cache["s_prev"]
        dz = z * (1.0 - z)
        ds = 1.0 - s_tilde ** 2
        sp_dr = s_prev * r * (1.0 - r)
        inner = st["V_s"][None] * r[:, None, :] \
            + np.einsum("aA,bA,Ac->bac", st["V_s"], sp_dr, st["V_r"])
        return (_diag_embed(1.0 - z)
                + ((s_tilde - s_prev) * dz)[:, :, None] * st["V_z"][None]
                + (z * ds)[:, :, None] * inner)

    if kind == "delta":
        r, s_tilde, e_val = cache["r"], cache["s_tilde"], cache["e"]
        d_in = 1.0 - np.tanh(cache["inner"]) ** 2
        d_st = 1.0 - s_tilde ** 2
        coef = d_in * (1.0 - r) * d_st * (st["alpha"] * e_val + st["beta1"])
        return coef[:, :, None] * st["V"][None] + _diag_embed(d_in * r)

    raise ValueError(f"unknown cell kind {kind!r}")


def state_jvp(cfg, params, cache, v_s, v_c=None):
    """(dz_new/dz_prev) . v without materializing the Jacobian.

    Returns (jv_s, jv_c); jv_c is None for single-state cells.
    """
    st = params.state
    kind = cfg.cell

    if kind == "mlp":
        return np.zeros_like(v_s), None

    if kind == "elman":
        from ..numerics import activate_deriv
        d = activate_deriv(cfg.phi_s(), cache["pre"])
        return d * (v_s @ st["V"].T), None

    if kind == "lstm":
        f, i, o = cache["f"], cache["i"], cache["o"]
        c_tilde, tanh_c = cache["c_tilde"], cache["tanh_c"]
        c_prev = cache["c_prev"]
        dc = (c_prev * f * (1.0 - f)) * (v_s @ st["V_f"].T) \
            + (c_tilde * i * (1.0 - i)) * (v_s @ st["V_i"].T) \
            + (i * (1.0 - c_tilde ** 2)) * (v_s @ st["V_c"].T) \
            + f * v_c
        ds = (tanh_c * o * (1.0 - o)) * (v_s @ st["V_o"].T) \
            + o * (1.0 - tanh_c ** 2) * dc
        return ds, dc

    if kind == "gru":
        z, r, s_tilde = cache["z"], cache["r"], cache["s_tilde"]
        s_prev = cache["s_prev"]
        dz = z * (1.0 - z) * (v_s @ st["V_z"].T)
        dr = r * (1.0 - r) * (v_s @ st["V_r"].T)
        drs = dr * s_prev + r * v_s
        dst = (1.0 - s_tilde ** 2) * (drs @ st["V_s"].T)
        return dz * (s_tilde - s_prev) + z * dst + (1.0 - z) * v_s, None

    if kind == "delta":
        r, s_tilde, e_val = cache["r"], cache["s_tilde"], cache["e"]
        dh = v_s @ st["V"].T
        dst = (1.0 - s_tilde ** 2) * ((st["alpha"] * e_val + st["beta1"]) * dh)
        d_inner = (1.0 - r) * dst + r * v_s
        return (1.0 - np.tanh(cache["inner"]) ** 2) * d_inner, None

    raise ValueError(f"unknown cell kind {kind!r}")


def _immediate_blocks(cfg, params, cache):
    """Direct dz_new/dθ_state structure plus dz_new/de.

    Returns (e_coef, blocks) where e_coef is ("diag", s_vec, c_vec|None) or
    ("full", (B, zdim, n)); blocks maps state tensor name to either
    ("diag", s_coef, c_coef|None, cols|None) -- meaning
    d z_a / d P[a, c] = coef[a] * cols[c] (cols None for per-unit vectors) --
    or ("full", array (B, zdim, size)).
    """
    st = params.state
    kind = cfg.cell

    if kind == "elman":
        from ..numerics import activate_deriv
        d = activate_deriv(cfg.phi_s(), cache["pre"])
        return (("diag", d, None),
                {"V": ("diag", d, None, cache["s_prev"]),
                 "b": ("diag", d, None, None)})

    if kind == "mlp":
        d = 1.0 - np.tanh(cache["pre"]) ** 2
        return ("diag", d, None), {"b": ("diag", d, None, None)}

    if kind == "lstm":
        f, i, o = cache["f"], cache["i"], cache["o"]
        c_tilde, tanh_c = cache["c_tilde"], cache["tanh_c"]
        s_prev, c_prev = cache["s_prev"], cache["c_prev"]
        o_dT = o * (1.0 - tanh_c ** 2)
        cf = c_prev * f * (1.0 - f)       # dc/dpre_f
        ci = c_tilde * i * (1.0 - i)      # dc/dpre_i
        cc = i * (1.0 - c_tilde ** 2)     # dc/dpre_c
        so = tanh_c * o * (1.0 - o)       # ds/dpre_o
        blocks = {
            "V_f": ("diag", o_dT * cf, cf, s_prev),
            "V_i": ("diag", o_dT * ci, ci, s_prev),
            "V_c": ("diag", o_dT * cc, cc, s_prev),
            "V_o": ("diag", so, np.zeros_like(so), s_prev),
            "b_f": ("diag", o_dT * cf, cf, None),
            "b_i": ("diag", o_dT * ci, ci, None),
            "b_c": ("diag", o_dT * cc, cc, None),
            "b_o": ("diag", so, np.zeros_like(so), None),
        }
        e_s = so + o_dT * (cf + ci + cc)
        e_c = cf + ci + cc
        return ("diag", e_s, e_c), blocks

    if kind == "gru":
        z, r, rs = cache["z"], cache["r"], cache["rs"]
        s_tilde, s_prev = cache["s_tilde"], cache["s_prev"]
        dz = (s_tilde - s_prev) * z * (1.0 - z)   # ds/dpre_z
        zds = z * (1.0 - s_tilde ** 2)            # ds/dpre_s
        sp_dr = s_prev * r * (1.0 - r)
        # pre_r reaches s through V_s, mixing units
        r_block = np.einsum("ba,aA,bA->baA", zds, st["V_s"], sp_dr)
        batch, n = z.shape
        v_r_block = np.einsum("baA,bc->baAc", r_block, s_prev)
        blocks = {
            "V_z": ("diag", dz, None, s_prev),
            "V_r": ("full", v_r_block.reshape(batch, n, n * n)),
            "V_s": ("diag", zds, None, rs),
            "b_z": ("diag", dz, None, None),
            "b_r": ("full", r_block),
            "b_s": ("diag", zds, None, None),
        }
        e_coef = _diag_embed(dz + zds) + r_block
        return ("full", e_coef), blocks

    if kind == "delta":
        h, s_tilde, r = cache["h"], cache["s_tilde"], cache["r"]
        s_prev, e_val = cache["s_prev"], cache["e"]
        d_in = 1.0 - np.tanh(cache["inner"]) ** 2
        base = d_in * (1.0 - r) * (1.0 - s_tilde ** 2)   # ds/dpre
        gate = d_in * (s_prev - s_tilde) * r * (1.0 - r)  # ds/d(e + b_r)
        blocks = {
            "V": ("diag", base * (st["alpha"] * e_val + st["beta1"]), None, s_prev),
            "b": ("diag", base, None, None),
            "b_r": ("diag", gate, None, None),
            "alpha": ("diag", base * h * e_val, None, None),
            "beta1": ("diag", base * h, None, None),
            "beta2": ("diag", base * e_val, None, None),
        }
        e_coef = base * (st["alpha"] * h + st["beta2"]) + gate
        return ("diag", e_coef, None), blocks

    raise ValueError(f"unknown cell kind {kind!r}")


def add_immediate_jacobian(jac, cfg, params, cache, inputs):
    """Add the direct dz_new/dθ term into `jac` (B, zdim, θ_size) in place."""
    n, d2, n_in = cfg.n, cfg.d2, cfg.n_inputs
    batch = jac.shape[0]
    idx = np.arange(n)
    e_coef, blocks = _immediate_blocks(cfg, params, cache)

    # transform region: all N matrices share the dz/de chain, fused update
    w_view = jac[:, :, :n_in * n * d2].reshape(batch, zdim(cfg), n_in, n, d2)
    if e_coef[0] == "diag":
        _, e_s, e_c = e_coef
        w_view[:, idx, :, idx, :] += np.einsum("ba,bic->abic", e_s, inputs)
        if e_c is not None:
            w_view[:, n + idx, :, idx, :] += np.einsum("ba,bic->abic", e_c, inputs)
    else:
        w_view += np.einsum("bza,bic->bziac", e_coef[1], inputs)

    for name, shape, offset in recurrent_layout(cfg)[n_in:]:
        size = int(np.prod(shape))
        view = jac[:, :, offset:offset + size]
        block = blocks[name]
        if block[0] == "full":
            view += block[1]
            continue
        _, s_coef, c_coef, cols = block
        if cols is None:
            view[:, idx, idx] += s_coef
            if c_coef is not None:
                view[:, n + idx, idx] += c_coef
        else:
            v4 = view.reshape(batch, zdim(cfg), n, n)
            v4[:, idx, idx, :] += np.einsum("ba,bc->bac", s_coef, cols)
            if c_coef is not None:
                v4[:, n + idx, idx, :] += np.einsum("ba,bc->bac", c_coef, cols)
    return jac
