"""Independent step-by-step oracle built on plain Python floats.

Deliberately shares no code with the package: math.exp/math.tanh and
explicit loops only, so agreement with the numpy implementation is
evidence, not tautology.
"""

import math


def sig(x):
    return 1.0 / (1.0 + math.exp(-x))


def softmax2(a, b):
    m = max(a, b)
    ea, eb = math.exp(a - m), math.exp(b - m)
    s = ea + eb
    return ea / s, eb / s


def ce2(p, g, eps=1e-12):
    return -(g[0] * math.log(p[0] + eps) + g[1] * math.log(p[1] + eps))


def lstm_cell(p, x, h, c):
    """Scalar LSTM step. p maps gate names to (w, u, b) triples."""
    i = sig(p["i"][0] * x + p["i"][1] * h + p["i"][2])
    f = sig(p["f"][0] * x + p["f"][1] * h + p["f"][2])
    o = sig(p["o"][0] * x + p["o"][1] * h + p["o"][2])
    g = math.tanh(p["g"][0] * x + p["g"][1] * h + p["g"][2])
    c_new = f * c + i * g
    h_new = o * math.tanh(c_new)
    return h_new, c_new, {"i": i, "f": f, "o": o, "g": g, "c": c_new, "h": h_new}


def lstm_seq(p, xs):
    h = c = 0.0
    steps = []
    for x in xs:
        h, c, step = lstm_cell(p, x, h, c)
        steps.append(step)
    return h, c, steps


def hier_forward(l1, l2f, l2b, w_p, b_p, frames, s):
    """Scalar hierarchical forward; returns every intermediate.

    frames: list of floats; w_p: 2 rows of (coef_hf, coef_hb, coef_enc);
    b_p: 2 floats.
    """
    m = -(-len(frames) // s)
    subshots = []
    for k in range(m):
        chunk = list(frames[k * s : (k + 1) * s])
        chunk += [0.0] * (s - len(chunk))
        subshots.append(chunk)
    layer1 = [lstm_seq(l1, chunk) for chunk in subshots]
    encs = [run[0] for run in layer1]
    h_f = []
    h = c = 0.0
    f_steps = []
    for enc in encs:
        h, c, step = lstm_cell(l2f, enc, h, c)
        h_f.append(h)
        f_steps.append(step)
    h_b_rev = []
    h = c = 0.0
    b_steps = []
    for enc in reversed(encs):
        h, c, step = lstm_cell(l2b, enc, h, c)
        h_b_rev.append(h)
        b_steps.append(step)
    h_b = list(reversed(h_b_rev))
    logits = []
    probs = []
    for t in range(m):
        z0 = w_p[0][0] * h_f[t] + w_p[0][1] * h_b[t] + w_p[0][2] * encs[t] + b_p[0]
        z1 = w_p[1][0] * h_f[t] + w_p[1][1] * h_b[t] + w_p[1][2] * encs[t] + b_p[1]
        a = (math.tanh(z0), math.tanh(z1))
        logits.append(a)
        probs.append(softmax2(a[0], a[1]))
    return {
        "subshots": subshots,
        "layer1_steps": [run[2] for run in layer1],
        "encodings": encs,
        "h_fwd": h_f,
        "h_bwd": h_b,
        "fwd_steps": f_steps,
        "bwd_steps": b_steps,
        "logits": logits,
        "probs": probs,
    }
