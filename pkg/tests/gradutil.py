"""Finite-difference checks for modules with manual backward passes."""
import numpy as np

from wearcap.numerics import grad_check

H = 1e-5


def check_module(forward, backward, x, params, rng, coords_per_param=12):
    """Max relative error over the input gradient and a random subset of
    parameter coordinates, for the scalar f = sum(r * forward(x))."""
    x = np.asarray(x, dtype=np.float64)
    r = rng.normal(size=np.shape(forward(x.copy())))

    def f_x(xv):
        for p in params:
            p.zero_grad()
        y = forward(xv)
        dx = backward(r)
        return float(np.sum(r * y)), dx

    worst = grad_check(f_x, x, H)
    for p in params:
        flat = p.value.reshape(-1)
        idx = rng.choice(flat.size, size=min(coords_per_param, flat.size), replace=False)
        base = flat.copy()

        def f_p(sub, p=p, idx=idx, base=base):
            v = base.copy()
            v[idx] = sub
            p.value = v.reshape(p.value.shape)
            for q in params:
                q.zero_grad()
            y = forward(x.copy())
            backward(r)
            return float(np.sum(r * y)), p.grad.reshape(-1)[idx].copy()

        worst = max(worst, grad_check(f_p, base[idx].copy(), H))
        p.value = base.reshape(p.value.shape)
    return worst
