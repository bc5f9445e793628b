"""Randomized checks of the functional inequalities on spectral fields."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coefficients import b_pairing_terms, logplus_pairing_terms
from .spectral import DomainConfig, SpectralField, log_sobolev_plus_terms, log_sobolev_terms

DEFAULT_EPS = (1e-3, 1e-2, 1e-1, 1.0)
DEFAULT_ALPHA = (0.5, 0.9, 0.99)


def random_field(dom: DomainConfig, rng: np.random.Generator) -> SpectralField:
    """Gaussian coefficients with a random power-law decay and log-uniform amplitude."""
    i = np.arange(1, dom.n_modes + 1)
    decay = rng.uniform(0.0, 2.0)
    amp = 10.0 ** rng.uniform(-2.0, 2.0)
    c = amp * rng.standard_normal(dom.n_modes) * i**-decay
    return SpectralField(c, dom)


@dataclass(frozen=True)
class InequalityRow:
    inequality: str
    eps: float
    alpha: float
    n_fields: int
    min_gap: float
    min_rel_gap: float
    mean_rel_gap: float


def _rel(lhs, rhs, scale):
    return (rhs - lhs) / max(abs(lhs), abs(rhs), scale, 1e-300)


def inequality_suite(dom: DomainConfig, n_fields: int = 1000, eps_list=DEFAULT_EPS,
                     alpha_list=DEFAULT_ALPHA, seed: int = 0) -> list[InequalityRow]:
    """Minimum absolute and relative gaps (RHS - LHS) per inequality and parameter.

    Relative gaps divide by the larger of ``|lhs|``, ``|rhs|`` and the squared
    H-norm of the field (or of the difference for the pairing estimates).
    """
    rng = np.random.default_rng(seed)
    fields = [random_field(dom, rng) for _ in range(n_fields)]
    partners = [random_field(dom, rng) for _ in range(n_fields)]
    acc: dict[tuple, list] = {}

    def add(key, lhs, rhs, scale):
        acc.setdefault(key, []).append((rhs - lhs, _rel(lhs, rhs, scale)))

    for u, v in zip(fields, partners):
        s_u = u.norm**2
        s_w = (u - v).norm ** 2
        for eps in eps_list:
            add(("log_sobolev", eps, None), *log_sobolev_terms(u, eps), s_u)
            add(("log_sobolev_plus", eps, None), *log_sobolev_plus_terms(u, eps), s_u)
            for alpha in alpha_list:
                add(("b_pairing", eps, alpha), *b_pairing_terms(u, v, eps, alpha), s_w)
                add(("logplus_pairing", eps, alpha), *logplus_pairing_terms(u, v, eps, alpha), s_w)
    rows = []
    for (name, eps, alpha), vals in acc.items():
        g = np.array(vals)
        a = float("nan") if alpha is None else float(alpha)
        rows.append(InequalityRow(name, float(eps), a, n_fields, float(g[:, 0].min()),
                                  float(g[:, 1].min()), float(g[:, 1].mean())))
    return rows
