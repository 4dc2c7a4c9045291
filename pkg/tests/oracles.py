"""Scalar-loop reference implementations used as independent test oracles.

Everything here works on plain Python floats and lists read out of the model's
parameter arrays; nothing goes through the autodiff code.
"""

import math


def _p(model):
    return {k: v.data.tolist() for k, v in model.params.items()}


def matvec(W, x):
    return [sum(W[r][c] * x[c] for c in range(len(x))) for r in range(len(W))]


def embed(p, i):
    W, b = p["W_e"], p["b_e"]
    return [max(0.0, W[z][i] + b[z]) for z in range(len(b))]


def time_vec(p, t):
    w, b = p["omega"], p["beta"]
    phi = [w[0] * t + b[0]] + [math.sin(w[k] * t + b[k]) for k in range(1, len(w))]
    if "W_t" in p:
        return matvec(p["W_t"], phi)
    return phi


def mean_status(p, t, obs):
    d_t = len(obs)
    out = list(time_vec(p, t))
    for i, x in obs:
        e = embed(p, i)
        for z in range(len(out)):
            out[z] += (x / d_t) * e[z]
    return out


def attention_weights(p, cfg, obs):
    """alpha[n][h] for observation n of ``obs`` and head h."""
    H, dk = cfg.heads, cfg.qk_dim
    E = [embed(p, i) for i, _ in obs]
    xs = [x for _, x in obs]
    weights = [[0.0] * H for _ in obs]
    for h in range(H):
        Wq = p["W_q"][h * dk : (h + 1) * dk]
        Wk = p["W_k"][h * dk : (h + 1) * dk]
        Q = [matvec(Wq, e) for e in E]
        K = [matvec(Wk, e) for e in E]
        raw = []
        for a in range(len(obs)):
            s = 0.0
            for j in range(len(obs)):
                s += xs[j] * sum(Q[a][q] * K[j][q] for q in range(dk)) / math.sqrt(dk)
            raw.append(s)
        if cfg.attention_softmax:
            m = max(raw)
            ex = [math.exp(r - m) for r in raw]
            raw = [v / sum(ex) for v in ex]
        for a in range(len(obs)):
            weights[a][h] = raw[a]
    return weights


def head_concat(p, cfg, obs):
    H, dv = cfg.heads, cfg.v_dim
    E = [embed(p, i) for i, _ in obs]
    alpha = attention_weights(p, cfg, obs)
    out = []
    for h in range(H):
        Wv = p["W_v"][h * dv : (h + 1) * dv]
        acc = [0.0] * dv
        for a, e in enumerate(E):
            V = matvec(Wv, e)
            for q in range(dv):
                acc[q] += alpha[a][h] * V[q]
        out.extend(acc)
    return out


def attention_status(p, cfg, t, obs):
    c = head_concat(p, cfg, obs)
    hid = [max(0.0, v + b) for v, b in zip(matvec(p["f_W1"], c), p["f_b1"])]
    f = [v + b for v, b in zip(matvec(p["f_W2"], hid), p["f_b2"])]
    return [a + b for a, b in zip(f, time_vec(p, t))]


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def gru(p, h, s):
    def gate(W, U, b, hh, fn):
        ws, uh = matvec(W, s), matvec(U, hh)
        return [fn(ws[k] + uh[k] + b[k]) for k in range(len(b))]

    r = gate(p["W_r"], p["U_r"], p["b_r"], h, sigmoid)
    z = gate(p["W_z"], p["U_z"], p["b_z"], h, sigmoid)
    rh = [r[k] * h[k] for k in range(len(h))]
    ht = gate(p["W_h"], p["U_h"], p["b_h"], rh, math.tanh)
    return [z[k] * ht[k] + (1 - z[k]) * h[k] for k in range(len(h))]


def classify(p, h):
    hid = [max(0.0, v + b) for v, b in zip(matvec(p["c_W1"], h), p["c_b1"])]
    logits = [v + b for v, b in zip(matvec(p["c_W2"], hid), p["c_b2"])]
    m = max(logits)
    ex = [math.exp(v - m) for v in logits]
    return logits, [v / sum(ex) for v in ex]


def initial_state(p, cfg, inst):
    if not cfg.D_static or not inst.statics:
        return [0.0] * cfg.hidden
    K = len(inst.statics)
    pooled = [0.0] * cfg.static_dim
    for k, x in inst.statics:
        e = [max(0.0, p["W_s"][z][k] + p["b_s"][z]) for z in range(cfg.static_dim)]
        for z in range(cfg.static_dim):
            pooled[z] += (x / K) * e[z]
    return [math.tanh(v) for v in matvec(p["W_h0"], pooled)]


def forward(model, inst):
    """(times, local statuses, hidden states, probabilities) by direct loops."""
    p, cfg = _p(model), model.config
    groups = {}
    for o in inst.observations:
        groups.setdefault(o.time, []).append((o.variable, o.value))
    h = initial_state(p, cfg, inst)
    times, local, hidden = [], [], []
    for t in sorted(groups):
        obs = groups[t]
        s = mean_status(p, t, obs) if cfg.mode == "mean" else attention_status(p, cfg, t, obs)
        h = gru(p, h, s)
        times.append(t)
        local.append(s)
        hidden.append(h)
    _, probs = classify(p, h)
    return times, local, hidden, probs


def nll(probs_true):
    return sum(-math.log(q) for q in probs_true) / len(probs_true)
