"""Shared test utilities: an independent finite-difference gradient oracle."""

import numpy as np


def finite_difference_grads(f, tensors, step=1e-3):
    """Central-difference gradients of the scalar ``f()`` w.r.t. each tensor.

    ``f`` must rebuild its graph on every call and return a scalar Tensor.
    Entries are perturbed in place one at a time and restored exactly.
    """
    grads = []
    for t in tensors:
        g = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = float(f().data)
            flat[i] = orig - step
            lo = float(f().data)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * step)
        grads.append(g)
    return grads


def assert_grads_close(f, tensors, step=1e-3, rtol=1e-4, atol=1e-6):
    """Backward pass vs. central differences, elementwise.

    Passes when |analytic - numeric| <= atol + rtol * max(|analytic|, |numeric|)
    everywhere; atol absorbs finite-difference noise on near-zero entries.
    """
    for t in tensors:
        t.zero_grad()
    loss = f()
    loss.backward()
    numeric = finite_difference_grads(f, tensors, step=step)
    for t, num in zip(tensors, numeric):
        ana = t.grad if t.grad is not None else np.zeros_like(t.data)
        tol = atol + rtol * np.maximum(np.abs(ana), np.abs(num))
        gap = np.abs(ana - num)
        if not np.all(gap <= tol):
            worst = float((gap - tol).max())
            idx = np.unravel_index(int((gap - tol).argmax()), gap.shape)
            raise AssertionError(
                f"gradient mismatch at {idx}: analytic {ana[idx]!r}, "
                f"numeric {num[idx]!r}, tolerance exceeded by {worst:.3e}"
            )


def scalarize(out, weights):
    """Mix a tensor into a scalar against a fixed weight array.

    Gives every output entry a distinct influence on the scalar so the
    chain rule through the op under test is fully exercised.  ``weights``
    must be a plain ndarray drawn once, outside the closure handed to the
    finite-difference oracle, so repeated calls see identical values.
    """
    from mmdin import autograd as ag

    return ag.tensor_sum(ag.mul(out, ag.Tensor(np.asarray(weights, dtype=np.float64))))
