"""Shared test oracles: finite-difference gradients and brute-force metrics."""

from __future__ import annotations

import numpy as np

from vlfat.autodiff import Tensor, mul, reduce_sum


def fd_grad(fn, tensors, wrt: int, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of the scalar ``fn(*tensors)`` w.r.t. one input.

    Perturbs ``tensors[wrt].data`` in place and restores it, so ``fn`` must
    rebuild its graph from the same Tensor objects on every call.
    """
    x = tensors[wrt].data
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = fn(*tensors).item()
        flat[i] = orig - step
        fm = fn(*tensors).item()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * step)
    return grad


def backward_grad(fn, tensors, wrt: int) -> np.ndarray:
    for t in tensors:
        t.zero_grad()
    fn(*tensors).backward()
    g = tensors[wrt].grad
    assert g is not None, "no gradient reached the checked input"
    return g.copy()


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.linalg.norm(b.reshape(-1)), 1e-8)
    return float(np.linalg.norm((a - b).reshape(-1)) / scale)


def assert_grad_matches(fn, tensors, wrt: int = 0, rtol: float = 1e-4) -> None:
    """Backprop gradient must agree with central finite differences."""
    ana = backward_grad(fn, tensors, wrt)
    num = fd_grad(fn, tensors, wrt)
    err = rel_error(ana, num)
    assert err < rtol, f"gradient mismatch: rel error {err:.3e} >= {rtol}"


def scalarize(op):
    """Wrap a tensor-valued op into a scalar via a fixed random projection."""

    def build(proj: np.ndarray):
        const = Tensor(proj)

        def fn(*tensors):
            return reduce_sum(mul(op(*tensors), const))

        return fn

    return build


def auroc_pairs(y_true: np.ndarray, scores: np.ndarray, positive: int) -> float:
    """Exhaustive pair-counting AUROC oracle (0.5 credit per tie)."""
    pos = scores[y_true == positive]
    neg = scores[y_true != positive]
    credit = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                credit += 1.0
            elif p == n:
                credit += 0.5
    return credit / (pos.size * neg.size)
