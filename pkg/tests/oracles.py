"""Independent reference computations used by the tests.

Nothing here calls the analytic backward pass; gradients come from central
differences of plain forward evaluations.
"""

import math

import numpy as np

from tcomm import nn


def rel_err(a, b) -> float:
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)
    return float(np.linalg.norm(a - b) / scale)


def chain_value(nets, x, replay, loss_fn):
    out, _ = nn.forward_chain(nets, x, "train", None, replay)
    return loss_fn(out)


def fd_check(nets, x, loss_fn, loss_grad, rng, n_coords=200, h=1e-6):
    """Relative errors (params, input) of the analytic gradient of ``loss_fn``.

    Stochastic layers are frozen by replaying the masks and noise of one
    reference pass. Up to ``n_coords`` parameter coordinates per net are
    sampled; input coordinates are all checked.
    """
    from tcomm.rng import RngStreams

    out, caches = nn.forward_chain(nets, x, "train", RngStreams(int(rng.integers(1 << 30))))
    grads, gx = nn.backward_chain(nets, caches, loss_grad(out))
    ana, num = [], []
    for net, g in zip(nets, grads):
        if net.params.size == 0:
            continue
        idx = rng.choice(net.params.size, size=min(n_coords, net.params.size), replace=False)
        for j in idx:
            keep = net.params[j]
            net.params[j] = keep + h
            up = chain_value(nets, x, caches, loss_fn)
            net.params[j] = keep - h
            down = chain_value(nets, x, caches, loss_fn)
            net.params[j] = keep
            ana.append(g[j])
            num.append((up - down) / (2 * h))
    num_x = np.zeros_like(x)
    for j in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        num_x[j] = (chain_value(nets, xp, caches, loss_fn) - chain_value(nets, xm, caches, loss_fn)) / (2 * h)
    return rel_err(ana, num) if ana else 0.0, rel_err(gx, num_x)


def adam_reference(p, grads, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    """Scalar Adam, written out step by step."""
    m = v = 0.0
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p = p - lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
    return p


def measured_snr_db(clean, noisy) -> float:
    """10 log10(signal power / noise power), both averaged over all entries."""
    clean = np.asarray(clean)
    noise = np.asarray(noisy) - clean
    return 10 * math.log10(np.mean(clean**2) / np.mean(noise**2))


def dense_param_count(widths) -> int:
    return sum(a * b + b for a, b in zip(widths[:-1], widths[1:]))
