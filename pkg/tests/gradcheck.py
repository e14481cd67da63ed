"""Central finite-difference gradient checking in float64."""

import numpy as np

from vadosd.nn import Tensor

H = 1e-6


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.ravel(a), np.ravel(b)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def check(fn, inputs: dict[str, np.ndarray], max_coords: int | None = None, seed: int = 0) -> float:
    """Worst relative error between analytic and numeric gradients of ``fn``.

    ``fn`` maps a dict of Tensors to a scalar Tensor. With ``max_coords`` set,
    only that many randomly chosen coordinates per input are differenced.
    """
    tensors = {k: Tensor(np.array(v, dtype=np.float64), requires_grad=True) for k, v in inputs.items()}
    fn(tensors).backward()
    if not any(t.grad is not None and np.any(t.grad) for t in tensors.values()):
        raise AssertionError("no input received a non-zero gradient; the check would be vacuous")
    worst = 0.0
    pick = np.random.default_rng(seed)
    for name, t in tensors.items():
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = pick.choice(flat.size, max_coords, replace=False)
        numeric = np.empty(len(coords))
        for j, i in enumerate(coords):
            old = flat[i]
            flat[i] = old + H
            up = float(fn(_frozen(tensors)).data)
            flat[i] = old - H
            down = float(fn(_frozen(tensors)).data)
            flat[i] = old
            numeric[j] = (up - down) / (2 * H)
        worst = max(worst, relative_error(analytic.reshape(-1)[coords], numeric))
    return worst


def _frozen(tensors):
    return {k: Tensor(v.data) for k, v in tensors.items()}


def projected(out: Tensor, seed: int = 99):
    """Scalar ``sum(out * R)`` with a fixed random R, so every output element matters."""
    from vadosd.nn import ops

    R = np.random.default_rng(seed).standard_normal(out.shape)
    return ops.sum(ops.mul(out, Tensor(R)))
