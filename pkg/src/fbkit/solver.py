"""Generalized inertial forward-backward iteration.

One iteration, from the pair (x_k, x_{k-1}) and parameters (a_k, b_k, gamma_k):

    y_a = x_k + a_k (x_k - x_{k-1})
    y_b = x_k + b_k (x_k - x_{k-1})
    x_{k+1} = prox_{gamma_k R}(y_a - gamma_k (grad F(y_b) + xi_k))

a_k = b_k = 0 is plain forward-backward; a_k = b_k = (k-1)/(k+q) with q > 2
is the sequence-convergent accelerated variant. xi_k is an optional injected
gradient error with a fixed seeded direction.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from .operators import grad
from .regularizers import DegenerateSignatureError

__all__ = [
    "Problem",
    "ConstantSchedule",
    "FistaSchedule",
    "PRuleSchedule",
    "OnlineSchedule",
    "PowerLawError",
    "CustomError",
    "RestartRule",
    "StoppingRule",
    "SolverState",
    "Trace",
    "DivergenceError",
    "schedule_eval",
    "step",
    "run",
    "unconditional_margin",
    "check_unconditional",
    "check_error_schedule",
]

# Strictly positive step-size guards; values immaterial at this scale.
EPS_LO_FRAC = 1e-6
EPS_HI_FRAC = 1e-6

TRACE_COLUMNS = "k,a,b,gamma,obj,err,step_norm,sig_hash,sig_desc"


@dataclass(frozen=True)
class Problem:
    """Composite objective ``F(x) + R(x)`` with quadratic F."""

    smooth: object
    reg: object

    def objective(self, x):
        return self.smooth.value(x) + self.reg.value(x)

    @property
    def n(self):
        return self.smooth.op.n


class DivergenceError(RuntimeError):
    """Iterates left the float range; carries the partial trace."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class PowerLawError:
    """Gradient error magnitudes ``coeff / k**power`` along a fixed direction."""

    coeff: float
    power: float
    seed: int = 0

    def magnitude(self, k):
        return self.coeff / float(k) ** self.power


@dataclass(frozen=True)
class CustomError:
    """Arbitrary magnitude rule; summability cannot be verified for these."""

    fn: object
    seed: int = 0

    def magnitude(self, k):
        return float(self.fn(k))


@dataclass(frozen=True)
class RestartRule:
    """Reset inertia (x_{k-1} <- x_k, t <- 1) when the predicate fires.

    kind "objective" fires on an objective increase, the practical stand-in
    for detecting the oscillatory regime; kind "every" fires periodically.
    """

    kind: str = "objective"
    period: int = 0

    def fires(self, k, obj_prev, obj_new):
        if self.kind == "objective":
            return obj_new > obj_prev
        if self.kind == "every":
            return self.period > 0 and k % self.period == 0
        raise ValueError(f"unknown restart kind {self.kind!r}")


@dataclass(frozen=True)
class StoppingRule:
    max_iter: int = 50_000
    step_tol: float = 1e-12  # on ||x_k - x_{k-1}|| / max(1, ||x_k||)
    err_tol: float | None = None  # on ||x_k - x_ref||, when a reference is given


class SolverState:
    """Mutable per-run cursor: iterates plus schedule-internal scalars."""

    def __init__(self, x0, gamma):
        self.k = 0
        self.x = np.array(x0, dtype=float)
        self.x_prev = self.x.copy()  # x_{-1} = x_0
        self.t = 1.0  # t-sequence cursor (p-rule)
        self.m = 1  # iterations since last restart (fista counter)
        self.gamma = float(gamma)


class _ScheduleBase:
    """Common gamma handling: absolute value or multiple of beta."""

    def __init__(self, gamma=None, gamma_scale=1.0, error=None):
        self._gamma_abs = gamma
        self._gamma_scale = gamma_scale
        self.error = error

    def gamma_value(self, beta):
        if self._gamma_abs is not None:
            return float(self._gamma_abs)
        return float(self._gamma_scale) * beta

    def validate(self, gamma, beta):
        lo = EPS_LO_FRAC * beta
        hi = 2.0 * beta - EPS_HI_FRAC * beta
        if not lo <= gamma <= hi:
            raise ValueError(
                f"gamma={gamma:g} outside the step-size interval [{lo:g}, {hi:g}]"
            )

    def limit(self):
        """Limit point (a, b) of the inertial sequences."""
        raise NotImplementedError

    def describe(self):
        raise NotImplementedError


class ConstantSchedule(_ScheduleBase):
    def __init__(self, a, b, **kw):
        super().__init__(**kw)
        if not (0.0 <= a <= 1.0 and 0.0 <= b <= 1.0):
            raise ValueError("constant inertia parameters must lie in [0, 1]")
        self.a = float(a)
        self.b = float(b)

    def limit(self):
        return self.a, self.b

    def describe(self):
        return f"constant(a={self.a:g},b={self.b:g})"


class FistaSchedule(_ScheduleBase):
    """a_k = b_k = (k-1)/(k+q).

    Iterate convergence is guaranteed for q > 2; q = 2 is accepted anyway
    because the comparison protocol exercises it.
    """

    def __init__(self, q, **kw):
        super().__init__(**kw)
        if q < 2:
            raise ValueError("fista requires q >= 2")
        self.q = float(q)

    def validate(self, gamma, beta):
        if not 0.0 < gamma <= beta:
            raise ValueError("fista affords only gamma in ]0, beta]")

    def limit(self):
        return 1.0, 1.0

    def describe(self):
        return f"fista(q={self.q:g})"


class PRuleSchedule(_ScheduleBase):
    """t_k = (1 + sqrt(1 + p t_{k-1}^2))/2, a_k = b_k = (t_{k-1} - 1)/t_k.

    a_k -> p/4 for p in ]0, 4[ and a_k -> 2/sqrt(p) for p >= 4; p = 4 is the
    classical accelerated t-sequence.
    """

    def __init__(self, p, **kw):
        super().__init__(**kw)
        if p <= 0:
            raise ValueError("p must be positive")
        self.p = float(p)

    def limit(self):
        a = self.p / 4.0 if self.p < 4.0 else 2.0 / np.sqrt(self.p)
        return a, a

    def describe(self):
        return f"prule(p={self.p:g})"


class OnlineSchedule(_ScheduleBase):
    """a_k = min(a_cap, c_k) with c_k = coeff / (k^2 ||x_k - x_{k-1}||^2)."""

    def __init__(self, a_cap, b_cap, coeff=1e5, **kw):
        super().__init__(**kw)
        if not (0.0 <= a_cap <= 1.0 and 0.0 <= b_cap <= 1.0):
            raise ValueError("online caps must lie in [0, 1]")
        self.a_cap = float(a_cap)
        self.b_cap = float(b_cap)
        self.coeff = float(coeff)

    def limit(self):
        return self.a_cap, self.b_cap

    def describe(self):
        return f"online(a={self.a_cap:g},b={self.b_cap:g},c={self.coeff:g})"


def schedule_eval(schedule, k, state):
    """Parameters (a_k, b_k, gamma_k) for iteration k >= 1."""
    if k < 1:
        raise ValueError("iterations are indexed from 1")
    if isinstance(schedule, ConstantSchedule):
        return schedule.a, schedule.b, state.gamma
    if isinstance(schedule, FistaSchedule):
        m = state.m
        a = (m - 1.0) / (m + schedule.q)
        return a, a, state.gamma
    if isinstance(schedule, PRuleSchedule):
        t_prev = state.t
        t_new = (1.0 + np.sqrt(1.0 + schedule.p * t_prev**2)) / 2.0
        state.t = t_new
        a = (t_prev - 1.0) / t_new
        return a, a, state.gamma
    if isinstance(schedule, OnlineSchedule):
        sn = np.linalg.norm(state.x - state.x_prev)
        if sn == 0.0:
            return schedule.a_cap, schedule.b_cap, state.gamma
        c = schedule.coeff / (k**2 * sn**2)
        return min(schedule.a_cap, c), min(schedule.b_cap, c), state.gamma
    raise TypeError(f"unknown schedule type {type(schedule).__name__}")


def step(problem, state, triple, xi=None):
    """Advance one iteration; returns the new state without mutating inputs."""
    a, b, gamma = triple
    dx = state.x - state.x_prev
    y_a = state.x + a * dx
    y_b = state.x + b * dx
    g = grad(problem.smooth, y_b)
    if xi is not None:
        g = g + xi
    x_next = problem.reg.prox(y_a - gamma * g, gamma)
    new = SolverState(state.x, gamma)
    new.k = state.k + 1
    new.x = x_next
    new.x_prev = state.x.copy()
    new.t = state.t
    new.m = state.m
    return new


class Trace:
    """Per-iteration history of a run, columnar, plus run metadata."""

    def __init__(self, meta=None):
        self.k = []
        self.a = []
        self.b = []
        self.gamma = []
        self.obj = []
        self.err = []
        self.step_norm = []
        self.sig = []
        self.meta = dict(meta or {})

    def record(self, k, a, b, gamma, obj, err, step_norm, sig):
        self.k.append(int(k))
        self.a.append(float(a))
        self.b.append(float(b))
        self.gamma.append(float(gamma))
        self.obj.append(float(obj))
        self.err.append(float(err) if err is not None else np.nan)
        self.step_norm.append(float(step_norm))
        self.sig.append(sig)

    def __len__(self):
        return len(self.k)

    def err_array(self):
        return np.asarray(self.err, dtype=float)

    def sig_desc(self, i):
        s = self.sig[i]
        return s.desc() if s is not None else "undef"

    def rows(self):
        for i in range(len(self.k)):
            desc = self.sig_desc(i)
            yield (
                self.k[i], self.a[i], self.b[i], self.gamma[i], self.obj[i],
                self.err[i], self.step_norm[i],
                zlib.crc32(desc.encode()), desc,
            )

    def to_csv_text(self):
        lines = [TRACE_COLUMNS]
        for row in self.rows():
            k, a, b, gamma, obj, err, sn, h, desc = row
            lines.append(
                f"{k},{a:.17g},{b:.17g},{gamma:.17g},{obj:.17g},"
                f"{err:.17g},{sn:.17g},{h},{desc}"
            )
        return "\n".join(lines) + "\n"


def run(problem, schedule, x0=None, stop=None, x_ref=None, restart=None,
        sig_tol=1e-8, record_signatures=True):
    """Run the iteration until the stopping rule fires; returns a Trace.

    Parameters
    ----------
    problem : Problem
    schedule : one of the schedule classes above
    x0 : start point (zeros by default); x_{-1} = x_0
    stop : StoppingRule
    x_ref : optional reference point; enables the err column
    restart : optional RestartRule
    sig_tol : tolerance handed to the signature extractor
    record_signatures : disable to skip per-iteration signature extraction

    Raises DivergenceError (carrying the partial trace) on NaN/Inf iterates.
    """
    stop = stop or StoppingRule()
    x0 = np.zeros(problem.n) if x0 is None else np.asarray(x0, dtype=float)
    beta = problem.smooth.beta
    gamma0 = schedule.gamma_value(beta)
    schedule.validate(gamma0, beta)

    state = SolverState(x0, gamma0)
    err_seed_dir = None
    if schedule.error is not None:
        rng = np.random.default_rng(schedule.error.seed)
        d = rng.standard_normal(problem.n)
        err_seed_dir = d / np.linalg.norm(d)

    def signature_of(x):
        if not record_signatures:
            return None
        try:
            return problem.reg.signature(x, tol=sig_tol)
        except DegenerateSignatureError:
            return None

    trace = Trace(meta={
        "schedule": schedule.describe(),
        "gamma": gamma0,
        "beta": beta,
        "error": getattr(schedule.error, "__class__", type(None)).__name__
        if schedule.error else None,
        "restart": restart.kind if restart else None,
    })
    trace.record(0, 0.0, 0.0, gamma0, problem.objective(state.x),
                 np.linalg.norm(state.x - x_ref) if x_ref is not None else None,
                 0.0, signature_of(state.x))

    reason = "max_iter"
    obj_prev = trace.obj[0]
    for k in range(1, stop.max_iter + 1):
        a, b, gamma = schedule_eval(schedule, k, state)
        xi = None
        if err_seed_dir is not None:
            xi = schedule.error.magnitude(k) * err_seed_dir
        new = step(problem, state, (a, b, gamma), xi)
        if not np.all(np.isfinite(new.x)):
            trace.meta["stop_reason"] = "diverged"
            raise DivergenceError(f"non-finite iterate at k={k}", trace)
        step_norm = float(np.linalg.norm(new.x - state.x))
        obj_new = problem.objective(new.x)
        err = np.linalg.norm(new.x - x_ref) if x_ref is not None else None
        trace.record(k, a, b, gamma, obj_new, err, step_norm,
                     signature_of(new.x))
        new.m = state.m + 1
        state = new
        if restart is not None and restart.fires(k, obj_prev, obj_new):
            state.x_prev = state.x.copy()
            state.t = 1.0
            state.m = 1
        obj_prev = obj_new
        scale = np.linalg.norm(state.x)
        if np.isfinite(scale) and step_norm <= stop.step_tol * max(1.0, scale):
            reason = "step_tol"
            break
        if stop.err_tol is not None and err is not None and err <= stop.err_tol:
            reason = "err_tol"
            break
    trace.meta["stop_reason"] = reason
    trace.meta["x_final"] = state.x.copy()
    return trace


def unconditional_margin(a, b, gamma, beta):
    """Margin of the applicable fixed-inertia convergence inequality.

    The case split: the first inequality applies when a < (gamma/2beta) b,
    the second when b <= a or (gamma/2beta) b <= a < b. Positive margin
    means the strict inequality holds. (The companion theorem's proof also
    assumes non-decreasing parameter sequences; only the displayed
    inequalities are evaluated here.)
    """
    r = gamma / (2.0 * beta)
    if a < r * b:
        return (1.0 + a) - r * (1.0 + b) ** 2
    return (1.0 - 3.0 * a) - r * (1.0 - b) ** 2


def unconditional_branch(a, b, gamma, beta):
    """1 if the first inequality of the case split applies, else 2."""
    return 1 if a < (gamma / (2.0 * beta)) * b else 2


def check_unconditional(a, b, gamma, beta, tau=0.0):
    """Whether fixed inertia (a, b) at step gamma converges with margin tau."""
    return unconditional_margin(a, b, gamma, beta) > tau


def check_error_schedule(schedule):
    """Verify the gradient-error summability condition for power-law errors.

    Returns True/False for magnitudes ``C / k**s`` (s > 2 suffices with
    inertia, s > 1 without), and None when the rule is not from that
    analytic family and cannot be verified.
    """
    err = schedule.error
    if err is None:
        return True
    if not isinstance(err, PowerLawError):
        return None
    a_limit, _ = schedule.limit()
    inertial = a_limit > 0.0
    if isinstance(schedule, ConstantSchedule):
        inertial = schedule.a > 0.0
    elif isinstance(schedule, OnlineSchedule):
        inertial = schedule.a_cap > 0.0
    return err.power > 2.0 if inertial else err.power > 1.0
