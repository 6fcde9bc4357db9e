"""Independent reference computations shared by the unit and acceptance tests."""
import numpy as np


def direct_dft2(x, sign=-1):
    """O(N^2) double sum with kernel exp(sign*2*pi*i*(a*y/H + b*x/W))."""
    h, w = x.shape
    out = np.zeros((h, w), dtype=complex)
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    for a in range(h):
        for b in range(w):
            out[a, b] = np.sum(x * np.exp(sign * 2j * np.pi * (a * ys / h + b * xs / w)))
    return out


def spectral_conv_oracle(x, wr, wi):
    """Truncated spectral convolution evaluated by brute force.

    x: (Ci, H, W). Retained set is every (ka, kb) with |ka|, |kb| < m. Weights for
    kb < 0 come from conjugate symmetry of the stored kb >= 0 half.
    """
    ci, h, w = x.shape
    m = wr.shape[1]
    co = wr.shape[3]
    wts = wr + 1j * wi
    xh = np.stack([direct_dft2(x[i]) for i in range(ci)])
    spec = np.zeros((co, h, w), dtype=complex)
    for a in range(h):
        ka = a if a < h // 2 else a - h
        for b in range(w):
            kb = b if b < w // 2 else b - w
            if abs(ka) >= m or abs(kb) >= m:
                continue
            if kb >= 0:
                r = wts[ka + m - 1, kb]
            else:
                r = np.conj(wts[-ka + m - 1, -kb])
            for o in range(co):
                spec[o, a, b] = sum(xh[i, a, b] * r[i, o] for i in range(ci))
    return np.stack([direct_dft2(spec[o], sign=+1).real / (h * w) for o in range(co)])


def brute_sdf(inside, dx):
    pts_in = np.argwhere(inside)
    pts_out = np.argwhere(~inside)
    out = np.empty(inside.shape)
    for j, i in np.ndindex(inside.shape):
        other = pts_out if inside[j, i] else pts_in
        d = np.sqrt(((other - [j, i]) ** 2).sum(axis=1)).min() * dx
        out[j, i] = -d if inside[j, i] else d
    return out


def fd_gradient_check(loss, params, grads, h=1e-5, per_tensor=6, rng=None, floor=1e-7):
    """Worst relative error between analytic gradients and central differences.

    ``per_tensor`` entries are sampled from each parameter array. The error is
    ``|fd - an| / max(|fd|, |an|, floor)``; ``floor`` keeps entries whose size
    is near the round-off of the difference quotient (about 1e-11 for O(1)
    losses at h=1e-5) from dominating.
    """
    rng = rng or np.random.default_rng(0)
    worst = {}
    for name, arr in params.items():
        flat = rng.choice(arr.size, size=min(per_tensor, arr.size), replace=False)
        err = 0.0
        for f in flat:
            idx = np.unravel_index(f, arr.shape)
            q = {k: v.copy() for k, v in params.items()}
            q[name][idx] += h
            lp = loss(q)
            q[name][idx] -= 2 * h
            lm = loss(q)
            fd = (lp - lm) / (2 * h)
            an = grads[name][idx]
            err = max(err, abs(fd - an) / max(abs(fd), abs(an), floor))
        worst[name] = err
    return worst
