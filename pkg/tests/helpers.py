"""Shared test utilities: finite-difference gradient checking and builders."""

from __future__ import annotations

import numpy as np
import torch


def central_difference_grads(params, loss_fn, step=1e-4):
    """Central finite differences of a scalar loss w.r.t. each parameter
    tensor, evaluated coordinate by coordinate at double precision."""
    grads = []
    with torch.no_grad():
        for p in params:
            flat = p.reshape(-1)
            fd = torch.zeros_like(flat)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + step
                up = float(loss_fn())
                flat[i] = orig - step
                down = float(loss_fn())
                flat[i] = orig
                fd[i] = (up - down) / (2.0 * step)
            grads.append(fd.reshape(p.shape))
    return grads


def assert_grads_match(params, loss_fn, step=1e-4, rtol=1e-4):
    """Autograd gradients must match central differences with relative error
    <= rtol per parameter tensor. Everything must be float64."""
    params = list(params)
    for p in params:
        assert p.dtype == torch.float64, "gradient checks require double precision"
    loss = loss_fn()
    auto = torch.autograd.grad(loss, params)
    fd = central_difference_grads(params, loss_fn, step=step)
    worst = 0.0
    for p, g_auto, g_fd in zip(params, auto, fd):
        denom = max(g_auto.norm().item(), g_fd.norm().item(), 1e-12)
        rel = (g_auto - g_fd).norm().item() / denom
        worst = max(worst, rel)
        assert rel <= rtol, f"gradient mismatch {rel:.3e} for parameter of shape {tuple(p.shape)}"
    return worst


def brute_force_chamfer(a: np.ndarray, b: np.ndarray) -> float:
    """O(N^2) oracle: sum of directed means of squared NN distances."""
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)
    return float(d2.min(axis=1).mean() + d2.min(axis=0).mean())


def brute_force_f1(a: np.ndarray, b: np.ndarray, tau: float) -> float:
    """O(N^2) oracle for the point-cloud F1 score (percent)."""
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)
    precision = float((np.sqrt(d2.min(axis=1)) <= tau).mean())
    recall = float((np.sqrt(d2.min(axis=0)) <= tau).mean())
    if precision + recall == 0:
        return 0.0
    return 200.0 * precision * recall / (precision + recall)
