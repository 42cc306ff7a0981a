"""Local linear-rate engine.

All spectral work happens on the tangent basis at the reference solution:
with B the basis, the restricted curvature matrices are

    H = gamma B^T (L^T L) B,   G = Id - H,
    U = gamma B^T HessR B      (zero for polyhedral regularizers),
    W = (Id + U)^{-1},

and eigenvalues eta of WG drive the local contraction. For fixed inertia
(a, b) the iteration-matrix eigenvalues sigma solve

    sigma^2 - ((a-b) + (1+b) eta) sigma + (a-b) + b eta = 0,

from which the spectral radius, the oscillation period pi/arg(sigma_max),
and the rate-optimal inertia follow in closed form.
"""

from __future__ import annotations

import cmath
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .operators import gram_matrix
from .solver import unconditional_branch, unconditional_margin

__all__ = [
    "RestrictedMatrices",
    "RateReport",
    "build_restricted",
    "eta_spectrum",
    "sigma_roots",
    "spectral_radius",
    "explicit_M",
    "convergence_condition",
    "oscillation_period",
    "optimal_inertia",
    "best_rates",
    "rate_curve",
    "region_map",
    "rate_report",
    "linearized_distance_trace",
]


@dataclass
class RestrictedMatrices:
    """Curvature matrices restricted to the d-dimensional tangent basis."""

    d: int
    H: np.ndarray
    G: np.ndarray
    U: np.ndarray
    W: np.ndarray
    gamma: float
    alpha: float
    beta: float
    polyhedral: bool


@dataclass
class RateReport:
    etas: list
    eta_min: float
    eta_max: float
    a: float
    b: float
    gamma: float
    sigma_max: complex
    rho: float
    converges: bool
    oscillation_period: float | None
    a_opt: float
    rho_opt: float
    regime: str = "analyzed"

    def to_dict(self):
        return {
            "etas": [float(e) for e in self.etas],
            "eta_min": self.eta_min,
            "eta_max": self.eta_max,
            "a": self.a,
            "b": self.b,
            "gamma": self.gamma,
            "sigma_max": {"re": self.sigma_max.real, "im": self.sigma_max.imag},
            "rho": self.rho,
            "converges": self.converges,
            "oscillation_period": self.oscillation_period,
            "a_opt": self.a_opt,
            "rho_opt": self.rho_opt,
            "regime": self.regime,
        }


def build_restricted(problem, x_star, sig, gamma):
    """Assemble H, G, U, W on the tangent basis at the reference solution."""
    reg = problem.reg
    basis = reg.tangent_basis(sig)
    d = basis.dim
    h = gamma * gram_matrix(problem.smooth.op, basis.matrix)
    h = 0.5 * (h + h.T)
    g = np.eye(d) - h
    if reg.polyhedral:
        u = np.zeros((d, d))
    else:
        u = gamma * reg.riemannian_hessian_matrix(x_star, sig, basis)
        u = 0.5 * (u + u.T)
    w = scipy.linalg.inv(np.eye(d) + u)
    w = 0.5 * (w + w.T)
    alpha = float(scipy.linalg.eigvalsh(h)[0]) / gamma if d else np.inf
    return RestrictedMatrices(
        d=d, H=h, G=g, U=u, W=w, gamma=gamma, alpha=alpha,
        beta=problem.smooth.beta, polyhedral=reg.polyhedral,
    )


def eta_spectrum(m):
    """Eigenvalues of WG, computed on the symmetric W^(1/2) G W^(1/2)."""
    if m.d == 0:
        return np.array([])
    vals, vecs = scipy.linalg.eigh(m.W)
    if np.min(vals) <= 0:
        raise ValueError("W must be positive definite; got eigenvalue "
                         f"{np.min(vals):g}")
    w_half = (vecs * np.sqrt(vals)) @ vecs.T
    sym = w_half @ m.G @ w_half
    return np.sort(scipy.linalg.eigvalsh(0.5 * (sym + sym.T)))


def sigma_roots(eta, a, b):
    """Both roots of the eta -> sigma quadratic, in closed form."""
    p = (a - b) + (1.0 + b) * eta
    q = (a - b) + b * eta
    disc = p * p - 4.0 * q
    if disc >= 0.0:
        rt = np.sqrt(disc)
        return complex((p + rt) / 2.0), complex((p - rt) / 2.0)
    rt = np.sqrt(-disc)
    return complex(p / 2.0, rt / 2.0), complex(p / 2.0, -rt / 2.0)


def spectral_radius(etas, a, b):
    """(rho, sigma_max) over the whole eta spectrum.

    The extremes of the spectrum determine rho, but evaluating every eta is
    cheap and doubles as a self-check of exactly that property.
    """
    best = complex(0.0)
    for eta in np.atleast_1d(etas):
        for s in sigma_roots(float(eta), a, b):
            if abs(s) > abs(best):
                best = s
    return abs(best), best


def explicit_M(m, a, b):
    """The 2d x 2d block iteration matrix; test oracle and linear simulator."""
    wg = m.W @ m.G
    top_left = (a - b) * m.W + (1.0 + b) * wg
    top_right = -(a - b) * m.W - b * wg
    return np.block([
        [top_left, top_right],
        [np.eye(m.d), np.zeros((m.d, m.d))],
    ])


def convergence_condition(eta_min, a, b):
    """Strict condition equivalent to rho(M) < 1: (2(b-a)-1)/(1+2b) < eta_min."""
    return (2.0 * (b - a) - 1.0) / (1.0 + 2.0 * b) < eta_min


def oscillation_period(sigma_max):
    """pi / arg(sigma_max) when the dominant eigenvalue is complex, else None.

    The argument is taken in (0, pi); near pi the raw value approaches 1 and
    is reported without interpretation.
    """
    if sigma_max.imag == 0.0:
        return None
    theta = abs(cmath.phase(sigma_max))
    return float(np.pi / theta)


def optimal_inertia(eta_bar, b=None):
    """Rate-optimal inertia (a_opt, rho_opt) for a given eta_bar in [0, 1[.

    Without b the symmetric branch a = (1 - sqrt(1 - eta))^2 / eta applies;
    with b given, a = (1 - sqrt(1 - eta))^2 + b (1 - eta). Both achieve
    rho_opt = 1 - sqrt(1 - eta).
    """
    if not 0.0 <= eta_bar < 1.0:
        raise ValueError("eta_bar must lie in [0, 1[")
    root = 1.0 - np.sqrt(1.0 - eta_bar)
    rho_opt = root
    if b is None:
        a_opt = root**2 / eta_bar if eta_bar > 0 else 0.0
    else:
        a_opt = root**2 + b * (1.0 - eta_bar)
    return float(a_opt), float(rho_opt)


def best_rates(alpha, beta):
    """Closed-form best local rates as functions of the product alpha*beta.

    Returns the optimal rate at gamma = beta, the heavy-ball-style optimum
    over gamma (attained with b = 0), and the plain forward-backward optimum.
    """
    ab = alpha * beta
    if not 0.0 < ab <= 1.0:
        raise ValueError("alpha*beta must lie in ]0, 1]")
    s = np.sqrt(ab)
    return {
        "rho_star_gamma_beta": 1.0 - s,
        "rho_underline": (1.0 - s) / (1.0 + s),
        "gamma_underline": 4.0 * beta / (1.0 + s) ** 2,
        "a_underline": ((1.0 - s) / (1.0 + s)) ** 2,
        "rho_fb_opt": (1.0 - ab) / (1.0 + ab),
        "gamma_fb_opt": 2.0 * beta / (1.0 + ab),
    }


def rate_curve(eta_bar, a_grid):
    """rho as a function of a (with b = a) for a fixed dominant eta_bar."""
    out = []
    for a in a_grid:
        rho, _ = spectral_radius([eta_bar], float(a), float(a))
        out.append((float(a), rho))
    return out


def region_map(gamma_over_beta, tau, a_grid, b_grid):
    """Feasibility of the fixed-inertia convergence conditions on a grid.

    Returns a list of (a, b, branch, feasible) tuples; branch is 1 or 2 for
    the applicable inequality of the case split.
    """
    beta = 1.0
    gamma = gamma_over_beta * beta
    cells = []
    for a in a_grid:
        for b in b_grid:
            branch = unconditional_branch(a, b, gamma, beta)
            feasible = unconditional_margin(a, b, gamma, beta) > tau
            cells.append((float(a), float(b), branch, feasible))
    return cells


def rate_report(m, a, b):
    """Full spectral report for limit inertia (a, b) on restricted matrices."""
    etas = eta_spectrum(m)
    rho, sigma_max = spectral_radius(etas, a, b)
    eta_min = float(etas[0]) if etas.size else 0.0
    eta_max = float(etas[-1]) if etas.size else 0.0
    a_opt, rho_opt = optimal_inertia(max(eta_max, 0.0))
    regime = "analyzed"
    if a != b and not m.polyhedral:
        # Closed-form eta -> sigma map covers b != a only in the polyhedral
        # case; the numbers below come from the same quadratic regardless.
        regime = "outside analyzed regime"
    return RateReport(
        etas=list(etas),
        eta_min=eta_min,
        eta_max=eta_max,
        a=a,
        b=b,
        gamma=m.gamma,
        sigma_max=sigma_max,
        rho=rho,
        converges=convergence_condition(eta_min, a, b),
        oscillation_period=oscillation_period(sigma_max),
        a_opt=a_opt,
        rho_opt=rho_opt,
        regime=regime,
    )


def linearized_distance_trace(m_matrix, d0, steps):
    """Iterate d_{k+1} = M d_k; returns ||r_k|| for the leading block."""
    d = m_matrix.shape[0] // 2
    cur = np.asarray(d0, dtype=float)
    out = np.empty(steps + 1)
    out[0] = np.linalg.norm(cur[:d])
    for k in range(1, steps + 1):
        cur = m_matrix @ cur
        out[k] = np.linalg.norm(cur[:d])
    return out
