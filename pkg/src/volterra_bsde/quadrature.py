"""Panelized Gauss-Legendre quadrature for endpoint-singular integrands.

All singular integrals in this package are reduced to the canonical form

    I = int_0^L f(d) dd,     f(d) ~ C * d**(alpha - 1)  as  d -> 0,

where ``d`` is the gap from the singular endpoint.  Integrand callables
receive the gap directly, so kernel evaluations near a singularity never
suffer cancellation from recomputing ``t - s``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from .errors import QuadratureError

GRADED_MESH = "graded_mesh"
SINGULARITY_EXTRACTION = "singularity_extraction"


@dataclass(frozen=True)
class SingularQuadRule:
    """How to integrate across an algebraic endpoint singularity.

    kind
        ``singularity_extraction`` substitutes v = d**alpha, which turns
        f ~ d**(alpha-1) into a bounded integrand (default, high order).
        ``graded_mesh`` keeps the original variable and grades the panel
        edges toward the singularity with exponent grading_exponent/alpha;
        grading_exponent = 1 is the classical first-order graded mesh.
    n_nodes
        Gauss-Legendre nodes per panel.
    n_panels
        Initial panel count; doubled up to max_refinements times until the
        change between refinements meets max(abs_tol, rel_tol * |I|).
    """

    kind: str = SINGULARITY_EXTRACTION
    n_nodes: int = 12
    grading_exponent: float = 1.0
    n_panels: int = 8
    max_refinements: int = 7
    abs_tol: float = 1e-8
    rel_tol: float = 1e-6

    def with_tolerances(self, abs_tol, rel_tol):
        return replace(self, abs_tol=abs_tol, rel_tol=rel_tol)


DEFAULT_RULE = SingularQuadRule()


@lru_cache(maxsize=64)
def _gauss01(n):
    """Gauss-Legendre nodes/weights mapped to [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(int(n))
    return 0.5 * (x + 1.0), 0.5 * w


def _panel_nodes(edges, n_nodes):
    """Nodes and weights for composite Gauss on consecutive ``edges``.

    edges may be (P+1,) or (K, P+1); returns arrays shaped (..., P * n)."""
    x01, w01 = _gauss01(n_nodes)
    lo = edges[..., :-1]
    width = edges[..., 1:] - lo
    nodes = lo[..., None] + width[..., None] * x01
    weights = width[..., None] * w01
    shape = nodes.shape[:-2] + (-1,)
    return nodes.reshape(shape), weights.reshape(shape)


def _graded_edges(length, n_panels, q):
    tau = np.linspace(0.0, 1.0, n_panels + 1)
    return length * tau**q


def integrate_gap(f, length, alpha=1.0, rule=DEFAULT_RULE):
    """Integrate f over (0, length) with f ~ C d**(alpha-1) at d = 0.

    ``f`` must be vectorized over numpy arrays of gaps.  Raises
    QuadratureError (carrying the best estimate) on non-convergence.
    """
    vals = integrate_gap_batch(f, np.asarray([length], dtype=float), alpha, rule)
    return float(vals[0])


def integrate_gap_batch(f, lengths, alpha=1.0, rule=DEFAULT_RULE):
    """Batched ``integrate_gap`` sharing one panel structure.

    lengths : (K,) array of upper limits; f receives a (K, M) gap matrix
    and must return values of the same shape.  Panel doubling applies to
    the whole batch until every entry meets tolerance.
    """
    lengths = np.asarray(lengths, dtype=float)
    if np.any(lengths < 0):
        raise QuadratureError("negative integration length")
    out = np.zeros_like(lengths)
    live = lengths > 0
    if not np.any(live):
        return out
    L = lengths[live]

    extract = rule.kind == SINGULARITY_EXTRACTION and alpha != 1.0
    if extract:
        # v = d**alpha; transformed integrand is bounded when f ~ d**(alpha-1)
        upper = L**alpha
        q = 2.0
    else:
        upper = L
        q = max(1.0, rule.grading_exponent / min(alpha, 1.0))

    def evaluate(n_panels):
        edges = upper[:, None] * _graded_edges(1.0, n_panels, q)[None, :]
        nodes, weights = _panel_nodes(edges, rule.n_nodes)
        if extract:
            gaps = nodes ** (1.0 / alpha)
            vals = f(gaps) * gaps / (alpha * nodes)
        else:
            vals = f(nodes)
        return np.sum(vals * weights, axis=1)

    prev = evaluate(rule.n_panels)
    for level in range(1, rule.max_refinements + 1):
        cur = evaluate(rule.n_panels * 2**level)
        err = np.abs(cur - prev)
        tol = np.maximum(rule.abs_tol, rule.rel_tol * np.abs(cur))
        if np.all(err <= tol):
            out[live] = cur
            return out
        prev = cur
    worst = float(np.max(np.abs(cur - prev)))
    raise QuadratureError(
        f"gap quadrature did not reach tolerance (worst error {worst:.3e})",
        estimate=float(cur[0]) if cur.size == 1 else float("nan"),
        error_estimate=worst,
    )


def integrate_smooth(f, a, b, rule=DEFAULT_RULE):
    """Adaptive composite Gauss for a smooth integrand on [a, b]."""
    if b == a:
        return 0.0
    sign = 1.0
    if b < a:
        a, b = b, a
        sign = -1.0

    def evaluate(n_panels):
        edges = np.linspace(a, b, n_panels + 1)
        nodes, weights = _panel_nodes(edges, rule.n_nodes)
        return float(np.sum(f(nodes) * weights))

    prev = evaluate(rule.n_panels)
    for level in range(1, rule.max_refinements + 1):
        cur = evaluate(rule.n_panels * 2**level)
        err = abs(cur - prev)
        if err <= max(rule.abs_tol, rule.rel_tol * abs(cur)):
            return sign * cur
        prev = cur
    raise QuadratureError(
        f"smooth quadrature did not reach tolerance (error {err:.3e})",
        estimate=sign * cur,
        error_estimate=err,
    )


def gauss_hermite_expectation(h, variance, n_nodes=96):
    """E[h(Z)] for Z ~ N(0, variance) by Gauss-Hermite quadrature."""
    if variance < 0:
        raise QuadratureError("negative variance in Gaussian expectation")
    if variance == 0:
        return float(np.asarray(h(np.zeros(1)))[0])
    x, w = np.polynomial.hermite.hermgauss(int(n_nodes))
    pts = np.sqrt(2.0 * variance) * x
    return float(np.sum(w * np.asarray(h(pts))) / np.sqrt(np.pi))
