"""Test-side oracles shared by the module and acceptance suites."""

import numpy as np
import torch


def finite_diff_check(loss_fn, params, n_coords=20, h=1e-6, seed=0):
    """Compare autograd gradients against central finite differences.

    ``loss_fn`` recomputes the scalar objective from the current parameter
    values; ``params`` are float64 leaf tensors. Returns the worst relative
    error over ``n_coords`` randomly chosen parameter coordinates. The
    denominator is floored at 1e-6 so coordinates with a genuinely zero
    gradient (dead rectifier paths) compare at the noise level instead of
    dividing by zero.
    """
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    sizes = [p.numel() for p in params]
    total = sum(sizes)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for flat_idx in rng.choice(total, size=n_coords, replace=False):
        pi = 0
        while flat_idx >= sizes[pi]:
            flat_idx -= sizes[pi]
            pi += 1
        with torch.no_grad():
            view = params[pi].view(-1)
            orig = view[flat_idx].item()
            view[flat_idx] = orig + h
            loss_plus = float(loss_fn())
            view[flat_idx] = orig - h
            loss_minus = float(loss_fn())
            view[flat_idx] = orig
        fd = (loss_plus - loss_minus) / (2.0 * h)
        grad = grads[pi]
        analytic = 0.0 if grad is None else float(grad.view(-1)[flat_idx])
        rel = abs(analytic - fd) / max(abs(analytic), abs(fd), 1e-6)
        worst = max(worst, rel)
    return worst
