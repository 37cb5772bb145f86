"""Pure NumPy twin of the compiled Euler-Maruyama core.

Vectorised over replicates instead of looping; the per-step arithmetic
follows ``_kernels.pyx`` so results agree to rounding.
"""

import numpy as np


def term_gradient(packed, x):
    """Gradient of a packed term sum at points ``x`` of shape (..., dim)."""
    A, b, gc, gw, gm, cc, cw, cph, ng, nc = packed
    out = x @ A.T + b
    for k in range(ng):
        dx = x - gm[k]
        e = gc[k] * np.exp(-np.sum(gw[k] * dx * dx, axis=-1))
        out = out - 2.0 * e[..., None] * gw[k] * dx
    for k in range(nc):
        ph = cph[k] + x @ cw[k]
        out = out + (-cc[k] * np.sin(ph))[..., None] * cw[k]
    return out


def em_integrate(x, gauss, dt, noise_amp, upack, vpack, proj, eps,
                 record_every, out, rec_offset, bound):
    steps = gauss.shape[1]
    proj = np.asarray(proj)
    for s in range(steps):
        drift = -term_gradient(upack, x)
        if eps != 0.0:
            gv = term_gradient(vpack, x[:, proj])
            drift[:, proj] = drift[:, proj] + eps * gv
        x[...] = x + drift * dt + noise_amp * gauss[:, s, :]
        bad = ~(np.abs(x) <= bound).all(axis=1)
        if bad.any():
            return int(np.argmax(bad))
        if record_every > 0 and (s + 1) % record_every == 0:
            out[:, rec_offset + (s + 1) // record_every - 1, :] = x[:, proj]
    return -1
