"""Analytic solutions and forcing terms used as ground truth."""
from __future__ import annotations

import numpy as np


def elliptic_truth(X: np.ndarray, terms: int = 600) -> tuple[np.ndarray, np.ndarray]:
    """``u = sum_k k^-6 sin(k pi x1) sin(k pi x2)`` and ``-Laplacian(u)`` on the rows of ``X``."""
    X = np.asarray(X, dtype=np.float64)
    u = np.zeros(X.shape[0])
    neg_lap = np.zeros(X.shape[0])
    for k in range(1, terms + 1):
        s = np.sin(k * np.pi * X[:, 0]) * np.sin(k * np.pi * X[:, 1])
        u += s / k ** 6
        neg_lap += 2.0 * np.pi ** 2 * s / k ** 4
    return u, neg_lap


def elliptic_forcing(X: np.ndarray, terms: int = 600) -> tuple[np.ndarray, np.ndarray]:
    """Truth ``u`` and right-hand side ``f = -Laplacian(u) + u^3``."""
    u, neg_lap = elliptic_truth(X, terms)
    return u, neg_lap + u ** 3


def monge_ampere_truth(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``u = exp(|x - c|^2 / 2)`` with ``c = (0.5, 0.5)`` and ``det(D^2 u) = u^2 (1 + |x - c|^2)``."""
    X = np.asarray(X, dtype=np.float64)
    q = np.sum((X - 0.5) ** 2, axis=1)
    u = np.exp(0.5 * q)
    return u, u * u * (1.0 + q)


def burgers_initial(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``-sin(pi x)`` with its first two derivatives."""
    x = np.asarray(x, dtype=np.float64)
    return -np.sin(np.pi * x), -np.pi * np.cos(np.pi * x), np.pi ** 2 * np.sin(np.pi * x)


def burgers_truth(x: np.ndarray, t: float, viscosity: float = 0.001, spacing: float = 2e-4,
                  half_width: float = 2.0, chunk: int = 256) -> np.ndarray:
    """Viscous Burgers solution from ``u(x, 0) = -sin(pi x)`` via the Cole-Hopf integral.

    The convolution integrals are evaluated by the trapezoid rule with
    log-sum-exp scaling, since the integrand exponents are of size
    ``1 / viscosity``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if t <= 0:
        return -np.sin(np.pi * x)
    count = int(round(2 * half_width / spacing)) + 1
    eta = np.linspace(-half_width, half_width, count)
    w = np.ones(count)
    w[0] = w[-1] = 0.5
    out = np.empty_like(x)
    for start in range(0, x.size, chunk):
        y = x[start:start + chunk, None] - eta[None, :]
        expo = -np.cos(np.pi * y) / (2.0 * np.pi * viscosity) - eta[None, :] ** 2 / (4.0 * viscosity * t)
        expo -= expo.max(axis=1, keepdims=True)
        weight = w[None, :] * np.exp(expo)
        out[start:start + chunk] = -np.sum(np.sin(np.pi * y) * weight, axis=1) / np.sum(weight, axis=1)
    return out
