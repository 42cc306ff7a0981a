"""Seeded recovery experiments: instance generation, reference solves,
finite termination, and observed-vs-predicted local rate comparison.

Instances follow the linear-inverse-problem template y = L x_ob + w with L
from the standard Gaussian ensemble and a structured ground truth per
regularizer kind. Every artifact here is reproducible bit-for-bit from
(spec, schedule, seeds).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .identification import build_identification_report, detect_identification
from .operators import DenseOp, SmoothTerm, grad, gram_matrix
from .rates import build_restricted, eta_spectrum, rate_report
from .regularizers import (
    GroupNorm,
    L1Norm,
    MaxNorm,
    NuclearNorm,
    TotalVariation1D,
)
from .solver import Problem, StoppingRule, run

__all__ = [
    "InstanceSpec",
    "ExperimentReport",
    "PRESETS",
    "gen_instance",
    "required_measurements",
    "choose_lambda",
    "reference_solution",
    "optimality_residual",
    "finite_termination",
    "observed_rate",
    "measure_oscillation_period",
    "quadratic_growth_check",
    "rate_sensitivity",
    "compare",
]

LAMBDA_FLOOR = 1e-3


@dataclass(frozen=True)
class InstanceSpec:
    """Recipe for one seeded recovery instance.

    ``complexity`` is the structural parameter of the ground truth: sparsity
    for l1, number of active blocks for l12, max-set size for linf, jump
    count for tv1d, and rank for nuclear.
    """

    kind: str
    m: int
    n: int
    complexity: int
    seed: int
    noise_scale: float = 1e-3  # ||w|| = noise_scale * ||L x_ob||
    c_lambda: float = 1.0
    block_size: int = 4  # l12 only
    n1: int = 0  # nuclear only
    n2: int = 0

    def to_dict(self):
        return {
            "kind": self.kind, "m": self.m, "n": self.n,
            "complexity": self.complexity, "seed": self.seed,
            "noise_scale": self.noise_scale, "c_lambda": self.c_lambda,
            "block_size": self.block_size, "n1": self.n1, "n2": self.n2,
        }


# The five stock instances; dimensions follow the recovery benchmarks, with
# the low-rank one shrunk to desk scale (its m comes from the sample bound
# at c = 1.2). Seeds and lambda multipliers are pinned to instances whose
# non-degeneracy and restricted-injectivity checks pass a posteriori.
PRESETS = {
    "lasso": InstanceSpec("l1", 48, 128, 8, seed=11, c_lambda=4.0),
    "group_lasso": InstanceSpec("l12", 60, 128, 3, seed=5, c_lambda=4.0,
                                block_size=4),
    "linf": InstanceSpec("linf", 123, 128, 10, seed=17, c_lambda=5.0),
    "tv1d": InstanceSpec("tv1d", 48, 128, 8, seed=5, c_lambda=4.0),
    "nuclear": InstanceSpec("nuclear", 149, 144, 2, seed=5, n1=12, n2=12,
                            c_lambda=10.0),
}


def choose_lambda(noise_norm, c_lambda=1.0, floor=LAMBDA_FLOOR):
    """Regularization weight of the order of the noise: lam = c * ||w||."""
    if c_lambda <= 0:
        raise ValueError("c_lambda must be positive")
    return c_lambda * noise_norm if noise_norm > 0 else floor


def _signed_magnitudes(rng, size):
    # bounded away from zero so non-degeneracy margins stay healthy
    return rng.uniform(0.5, 1.5, size) * rng.choice([-1.0, 1.0], size)


def _ground_truth(spec, rng):
    n, c = spec.n, spec.complexity
    if spec.kind == "l1":
        if c > n:
            raise ValueError("sparsity exceeds dimension")
        x = np.zeros(n)
        x[rng.choice(n, c, replace=False)] = _signed_magnitudes(rng, c)
        return x, L1Norm
    if spec.kind == "l12":
        if n % spec.block_size:
            raise ValueError("n must be divisible by the block size")
        n_blocks = n // spec.block_size
        if c > n_blocks:
            raise ValueError("more active blocks than blocks")
        x = np.zeros(n)
        for j in rng.choice(n_blocks, c, replace=False):
            lo = j * spec.block_size
            x[lo:lo + spec.block_size] = _signed_magnitudes(rng, spec.block_size)
        return x, None
    if spec.kind == "linf":
        if c > n:
            raise ValueError("max-set size exceeds dimension")
        x = rng.uniform(0.5, 1.2, n) * rng.choice([-1.0, 1.0], n)
        top = rng.choice(n, c, replace=False)
        x[top] = 1.5 * rng.choice([-1.0, 1.0], c)
        return x, MaxNorm
    if spec.kind == "tv1d":
        if c > n - 1:
            raise ValueError("too many jumps")
        jumps = np.sort(rng.choice(n - 1, c, replace=False))
        x = np.empty(n)
        level = float(_signed_magnitudes(rng, 1)[0])
        prev = 0
        for j in list(jumps) + [n - 1]:
            x[prev:j + 1] = level
            level += float(_signed_magnitudes(rng, 1)[0])
            prev = j + 1
        return x, TotalVariation1D
    if spec.kind == "nuclear":
        r = c
        if spec.n1 * spec.n2 != n or r > min(spec.n1, spec.n2):
            raise ValueError("inconsistent low-rank spec")
        qu, _ = np.linalg.qr(rng.standard_normal((spec.n1, r)))
        qv, _ = np.linalg.qr(rng.standard_normal((spec.n2, r)))
        svals = rng.uniform(0.5, 1.5, r)
        return (qu * svals) @ qv.T, None
    raise ValueError(f"unknown instance kind {spec.kind!r}")


def gen_instance(spec):
    """Build (problem, x_ob) from a spec; fully determined by the seed."""
    rng = np.random.default_rng(spec.seed)
    op = DenseOp(rng.standard_normal((spec.m, spec.n)))
    truth, _ = _ground_truth(spec, rng)
    if spec.kind == "nuclear":
        x_ob = truth.reshape(-1, order="F")
    else:
        x_ob = truth
    clean = op.apply(x_ob)
    noise_norm = spec.noise_scale * np.linalg.norm(clean)
    w = rng.standard_normal(spec.m)
    w = w / np.linalg.norm(w) * noise_norm if noise_norm > 0 else np.zeros(spec.m)
    y = clean + w
    lam = choose_lambda(noise_norm, spec.c_lambda)
    if spec.kind == "l1":
        reg = L1Norm(lam)
    elif spec.kind == "l12":
        blocks = [tuple(range(j, j + spec.block_size))
                  for j in range(0, spec.n, spec.block_size)]
        reg = GroupNorm(lam, blocks)
    elif spec.kind == "linf":
        reg = MaxNorm(lam)
    elif spec.kind == "tv1d":
        reg = TotalVariation1D(lam)
    else:
        reg = NuclearNorm(lam, spec.n1, spec.n2)
    return Problem(SmoothTerm(op, y), reg), x_ob


def required_measurements(kind, params, c):
    """Sufficient Gaussian sample sizes for identifiability, natural log.

    l1: 2 c s log(n) + s; l12: (1+c) s (sqrt(n/N) + sqrt(2 log N))^2 + s n/N;
    linf: n - s + 2 c s log(s/2); nuclear: c r (3 n1 + 3 n2 - 5 r).
    """
    if c <= 1:
        raise ValueError("the bounds require c > 1")
    if kind == "l1":
        s, n = params["s"], params["n"]
        return 2.0 * c * s * math.log(n) + s
    if kind == "l12":
        s, n, nb = params["s"], params["n"], params["n_blocks"]
        return (1.0 + c) * s * (math.sqrt(n / nb) + math.sqrt(2.0 * math.log(nb))) ** 2 \
            + s * n / nb
    if kind == "linf":
        s, n = params["s"], params["n"]
        return n - s + 2.0 * c * s * math.log(s / 2.0)
    if kind == "nuclear":
        r, n1, n2 = params["r"], params["n1"], params["n2"]
        return c * r * (3.0 * n1 + 3.0 * n2 - 5.0 * r)
    raise ValueError(f"no sample bound available for kind {kind!r}")


def optimality_residual(problem, x):
    """Distance of -grad F(x) to the subdifferential of R at x."""
    return problem.reg.subgradient_distance(x, -grad(problem.smooth, x))


def _make_grad(problem):
    """Gradient closure; caches the gram form for dense operators."""
    op = problem.smooth.op
    if isinstance(op, DenseOp):
        gmat = op.matrix.T @ op.matrix
        lty = op.matrix.T @ problem.smooth.y
        return lambda v: gmat @ v - lty
    return lambda v: grad(problem.smooth, v)


def _fb_polish(problem, x0, tol, max_iter, refine_hook=None, hook_every=500):
    """Bare forward-backward loop (gamma = beta), no trace; returns x.

    ``refine_hook(x)`` may return a certified replacement iterate that ends
    the loop early (used for polyhedral finite-termination refinement); the
    attempt cadence backs off geometrically so failed attempts stay cheap.
    """
    beta = problem.smooth.beta
    prox = problem.reg.prox
    grad_at = _make_grad(problem)
    x = np.asarray(x0, dtype=float).copy()
    best = np.inf
    stall = 0
    next_attempt = hook_every
    for it in range(1, max_iter + 1):
        x_new = prox(x - beta * grad_at(x), beta)
        sn = np.linalg.norm(x_new - x)
        x = x_new
        if sn <= tol * max(1.0, np.linalg.norm(x)):
            return x, True
        if refine_hook is not None and it == next_attempt:
            refined = refine_hook(x)
            if refined is not None:
                return refined, True
            next_attempt += min(next_attempt, 20_000)
        # guard against an unreachable tolerance near machine precision
        if sn < best:
            best, stall = sn, 0
        else:
            stall += 1
            if stall > 5000:
                return x, False
    return x, False


def reference_solution(problem, tol=1e-14, max_iter=2_000_000):
    """High-accuracy reference minimizer and its manifold signature.

    Forward-backward at gamma = beta down to the step tolerance, followed by
    one closed-form refinement on the identified tangent space when the
    regularizer is polyhedral. For polyhedral kinds the refinement is also
    attempted along the way and accepted early only under an optimality
    certificate (subgradient residual at machine scale), which is where slow
    instances actually terminate.
    """
    cert_tol = 1e-10

    def refine_hook(x):
        try:
            x_ft = finite_termination(problem, x, problem.reg.signature(x))
        except (scipy.linalg.LinAlgError, ValueError):
            return None
        if optimality_residual(problem, x_ft) <= cert_tol * max(1.0, np.linalg.norm(x)):
            return x_ft
        return None

    hook = refine_hook if problem.reg.polyhedral else None
    x, converged = _fb_polish(problem, np.zeros(problem.n), tol, max_iter,
                              refine_hook=hook)
    if not converged and optimality_residual(problem, x) > 1e-6:
        raise RuntimeError("reference solve did not converge")
    sig = problem.reg.signature(x)
    if problem.reg.polyhedral:
        try:
            x_ft = finite_termination(problem, x, sig)
        except scipy.linalg.LinAlgError:
            x_ft = None
        if x_ft is not None and (
            optimality_residual(problem, x_ft) <= optimality_residual(problem, x)
        ):
            x = x_ft
            sig = problem.reg.signature(x)
    return x, sig


def finite_termination(problem, x_k, sig):
    """Closed-form minimizer from an identified linear manifold.

    Valid for polyhedral regularizers with quadratic data fit: solves the
    normal equations of min 0.5 ||y - L B c||^2 + <restricted gradient, B c>
    on the tangent basis B and returns the ambient vector. Raises
    ``LinAlgError`` when the restricted system is singular, i.e. restricted
    injectivity fails on this tangent space.
    """
    if not problem.reg.polyhedral:
        raise ValueError("finite termination needs a polyhedral regularizer")
    basis = problem.reg.tangent_basis(sig)
    b = basis.matrix
    a = gram_matrix(problem.smooth.op, b)
    vals = scipy.linalg.eigvalsh(a)
    if vals.size and (vals[0] <= 0 or vals[0] < 1e-12 * vals[-1]):
        raise scipy.linalg.LinAlgError(
            "restricted injectivity fails: singular tangent system"
        )
    rg = problem.reg.riemannian_gradient(x_k, sig)
    rhs = b.T @ problem.smooth.op.adjoint(problem.smooth.y) - b.T @ rg
    coef = scipy.linalg.solve(a, rhs, assume_a="pos")
    return b @ coef


def _windowed_errors(trace, K, burn_in):
    ks = np.asarray(trace.k, dtype=float)
    err = trace.err_array()
    scale = np.nanmax(err)
    keep = (ks >= K + burn_in) & (err > 10.0 * np.finfo(float).eps * scale)
    return ks[keep], err[keep]


def observed_rate(trace, K, burn_in=10, envelope=False, min_records=20):
    """Per-iteration contraction factor fitted on log ||x_k - x_ref||.

    Least-squares slope over iterations past K + burn_in, above the
    floating-point floor; with ``envelope=True`` the fit runs on the local
    maxima only, matching the envelope of an oscillating profile.
    """
    ks, err = _windowed_errors(trace, K, burn_in)
    if ks.size < min_records:
        raise ValueError(
            f"need at least {min_records} usable records past K + burn_in, "
            f"got {ks.size}"
        )
    if envelope:
        keep = [i for i in range(1, ks.size - 1)
                if err[i] >= err[i - 1] and err[i] >= err[i + 1]]
        if len(keep) < 2:
            raise ValueError("too few local maxima for an envelope fit")
        ks, err = ks[keep], err[keep]
    slope = np.polyfit(ks, np.log(err), 1)[0]
    return float(np.exp(slope))


def measure_oscillation_period(trace, K, burn_in=0):
    """Median spacing of local minima of the error profile past K."""
    ks, err = _windowed_errors(trace, K, burn_in)
    minima = [i for i in range(1, ks.size - 1)
              if err[i] <= err[i - 1] and err[i] < err[i + 1]]
    if len(minima) < 2:
        return None
    return float(np.median(np.diff(ks[minima])))


def quadratic_growth_check(problem, x_star, n_samples, radius, seed=0):
    """Smallest sampled growth ratio (Phi(x*+d) - Phi(x*)) / ||d||^2.

    Positive output certifies quadratic growth on the sample; a negative
    value flags either a non-optimal x_star or a hypothesis failure.
    """
    rng = np.random.default_rng(seed)
    f_star = problem.objective(x_star)
    worst = np.inf
    for _ in range(n_samples):
        d = rng.standard_normal(x_star.size)
        d *= radius * rng.uniform(0.1, 1.0) / np.linalg.norm(d)
        ratio = (problem.objective(x_star + d) - f_star) / (d @ d)
        worst = min(worst, ratio)
    return float(worst)


def rate_sensitivity(problem, x_star, sig_star, gamma, tol=1e-14):
    """Shift of the eta spectrum after one more decade of reference accuracy.

    Returns inf when the tighter solve changes the signature; reports are
    accepted when the shift stays below 1e-6.
    """
    x2, _ = _fb_polish(problem, x_star, 0.1 * tol, 200_000)
    sig2 = problem.reg.signature(x2)
    if sig2 != sig_star:
        return np.inf
    e1 = eta_spectrum(build_restricted(problem, x_star, sig_star, gamma))
    e2 = eta_spectrum(build_restricted(problem, x2, sig2, gamma))
    if e1.size != e2.size:
        return np.inf
    return float(np.max(np.abs(e1 - e2))) if e1.size else 0.0


@dataclass
class ExperimentReport:
    schedule: str
    instance: dict
    identification: dict
    rate: dict
    observed_factor: float | None
    predicted_factor: float
    observed_slope: float | None
    predicted_slope: float
    slope_rel_error: float | None
    oscillation_measured: float | None
    oscillation_predicted: float | None
    finite_termination_error: float | None
    eta_sensitivity: float
    accepted: bool
    trace: object = field(default=None, repr=False)

    def to_dict(self):
        return {
            "schedule": self.schedule,
            "instance": self.instance,
            "identification": self.identification,
            "rate": self.rate,
            "observed_factor": self.observed_factor,
            "predicted_factor": self.predicted_factor,
            "observed_slope": self.observed_slope,
            "predicted_slope": self.predicted_slope,
            "slope_rel_error": self.slope_rel_error,
            "oscillation_measured": self.oscillation_measured,
            "oscillation_predicted": self.oscillation_predicted,
            "finite_termination_error": self.finite_termination_error,
            "eta_sensitivity": self.eta_sensitivity
            if np.isfinite(self.eta_sensitivity) else repr(self.eta_sensitivity),
            "accepted": self.accepted,
        }


def _max_workers(requested, n_jobs):
    import os

    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get("FBKIT_THREADS")
    if env:
        return max(1, int(env))
    return max(1, min(n_jobs, os.cpu_count() or 1))


def compare(problem, schedules, x_star, sig_star, instance=None, stop=None,
            x0=None, burn_in=10, workers=None, restart=None):
    """Run every schedule, detect identification, and report predicted vs
    observed local behaviour. Returns one ExperimentReport per schedule.

    Independent runs may execute on a thread pool (capped by ``workers`` or
    the FBKIT_THREADS environment variable); reports keep schedule order.
    """
    stop = stop or StoppingRule(max_iter=30_000, step_tol=1e-15)

    def run_one(sched):
        return run(problem, sched, x0=x0, stop=stop, x_ref=x_star,
                   restart=restart)

    n_workers = _max_workers(workers, len(schedules))
    if n_workers > 1 and len(schedules) > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            traces = list(pool.map(run_one, schedules))
    else:
        traces = [run_one(s) for s in schedules]

    gamma0 = schedules[0].gamma_value(problem.smooth.beta)
    sens = rate_sensitivity(problem, x_star, sig_star, gamma0)

    reports = []
    for sched, trace in zip(schedules, traces):
        gamma = sched.gamma_value(problem.smooth.beta)
        a_lim, b_lim = sched.limit()
        rm = build_restricted(problem, x_star, sig_star, gamma)
        rr = rate_report(rm, a_lim, b_lim)
        K = detect_identification(trace, sig_star)
        ident = build_identification_report(problem, trace, x_star, sig_star,
                                            gamma, x0=x0)
        observed = None
        slope_err = None
        osc = None
        if K is not None:
            try:
                observed = observed_rate(
                    trace, K, burn_in=burn_in,
                    envelope=rr.oscillation_period is not None,
                )
            except ValueError:
                observed = None
            if observed is not None and rr.rho > 0:
                slope_err = abs(np.log(observed) - np.log(rr.rho)) / abs(np.log(rr.rho))
            osc = measure_oscillation_period(trace, K, burn_in=burn_in)
        ft_err = None
        if problem.reg.polyhedral and K is not None:
            x_final = trace.meta["x_final"]
            sig_final = problem.reg.signature(x_final)
            x_ft = finite_termination(problem, x_final, sig_final)
            ft_err = float(np.linalg.norm(x_ft - x_star))
        reports.append(ExperimentReport(
            schedule=sched.describe(),
            instance=instance.to_dict() if instance is not None else {},
            identification=ident.to_dict(),
            rate=rr.to_dict(),
            observed_factor=observed,
            predicted_factor=rr.rho,
            observed_slope=float(np.log(observed)) if observed else None,
            predicted_slope=float(np.log(rr.rho)) if rr.rho > 0 else -np.inf,
            slope_rel_error=slope_err,
            oscillation_measured=osc,
            oscillation_predicted=rr.oscillation_period,
            finite_termination_error=ft_err,
            eta_sensitivity=sens,
            accepted=bool(sens < 1e-6),
            trace=trace,
        ))
    return reports
