"""Partly smooth regularizers: prox maps, active-manifold signatures, tangent
bases, Riemannian gradients/Hessians and non-degeneracy margins.

Shipped kinds: weighted l1, group l1-l2 over a fixed block partition, l-inf,
1-D anisotropic total variation (forward differences), and the nuclear norm
on vectorized matrices (column-major). All objects are immutable after
construction and every operation is pure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import lsq_linear

__all__ = [
    "Support",
    "BlockSupport",
    "MaxSet",
    "JumpSet",
    "RankSignature",
    "TangentBasis",
    "Regularizer",
    "L1Norm",
    "GroupNorm",
    "MaxNorm",
    "TotalVariation1D",
    "NuclearNorm",
    "DegenerateSignatureError",
    "MarginUndeterminedError",
    "soft_threshold",
    "project_l1_ball",
    "project_simplex",
    "prox_tv1d",
    "forward_diff",
    "forward_diff_adjoint",
    "regularizer_from_config",
]

DEFAULT_SIG_TOL = 1e-8


class DegenerateSignatureError(ValueError):
    """The manifold signature is undefined at this point (e.g. l-inf at 0)."""


class MarginUndeterminedError(RuntimeError):
    """The relative-interior test was rank-deficient; margin not determined."""


# ---------------------------------------------------------------------------
# manifold signatures


@dataclass(frozen=True)
class Support:
    """Index set of nonzero entries (l1)."""

    indices: tuple
    n: int

    def desc(self):
        return "supp=" + "|".join(map(str, self.indices))


@dataclass(frozen=True)
class BlockSupport:
    """Index set of active blocks (group l1-l2)."""

    blocks: tuple
    n_blocks: int

    def desc(self):
        return "blocks=" + "|".join(map(str, self.blocks))


@dataclass(frozen=True)
class MaxSet:
    """Indices attaining the max magnitude, with their signs (l-inf).

    ``signs`` has length n with entries in {-1, 0, +1}, zero off the max set.
    """

    indices: tuple
    signs: tuple

    def desc(self):
        marks = {1: "+", -1: "-", 0: "0"}
        return (
            "maxset=" + "|".join(map(str, self.indices))
            + ";s=" + "".join(marks[int(s)] for s in self.signs)
        )


@dataclass(frozen=True)
class JumpSet:
    """Indices of nonzero forward differences (1-D TV)."""

    jumps: tuple
    n: int

    def desc(self):
        return "jumps=" + "|".join(map(str, self.jumps))


class RankSignature:
    """Fixed-rank signature with left/right frames (nuclear norm).

    Two signatures are equal when rank and matrix dimensions agree; the
    frames rotate along the fixed-rank manifold and are not compared.
    """

    def __init__(self, rank, n1, n2, u, v):
        self.rank = int(rank)
        self.n1 = int(n1)
        self.n2 = int(n2)
        self.u = np.asarray(u, dtype=float).reshape(n1, self.rank)
        self.v = np.asarray(v, dtype=float).reshape(n2, self.rank)

    def __eq__(self, other):
        return (
            isinstance(other, RankSignature)
            and (self.rank, self.n1, self.n2) == (other.rank, other.n1, other.n2)
        )

    def __hash__(self):
        return hash(("rank", self.rank, self.n1, self.n2))

    def __repr__(self):
        return f"RankSignature(rank={self.rank}, n1={self.n1}, n2={self.n2})"

    def desc(self):
        return f"rank={self.rank}"


@dataclass(frozen=True)
class TangentBasis:
    """Column-orthonormal basis of the model tangent space at a point."""

    dim: int
    matrix: np.ndarray

    def project(self, h):
        return self.matrix @ (self.matrix.T @ h)


# ---------------------------------------------------------------------------
# elementary prox building blocks


def soft_threshold(z, tau):
    """Entrywise shrinkage ``sign(z) * max(|z| - tau, 0)``."""
    return np.sign(z) * np.maximum(np.abs(z) - tau, 0.0)


def project_l1_ball(z, radius):
    """Euclidean projection onto ``{v : ||v||_1 <= radius}``, sort-based."""
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    z = np.asarray(z, dtype=float)
    a = np.abs(z)
    if a.sum() <= radius:
        return z.copy()
    u = np.sort(a)[::-1]
    css = np.cumsum(u)
    j = np.arange(1, u.size + 1)
    rho = np.nonzero(u > (css - radius) / j)[0][-1]
    theta = (css[rho] - radius) / (rho + 1.0)
    return soft_threshold(z, theta)


def project_simplex(c, total=1.0):
    """Euclidean projection onto ``{v >= 0 : sum(v) = total}``."""
    c = np.asarray(c, dtype=float)
    u = np.sort(c)[::-1]
    css = np.cumsum(u)
    j = np.arange(1, u.size + 1)
    rho = np.nonzero(u - (css - total) / j > 0)[0][-1]
    theta = (css[rho] - total) / (rho + 1.0)
    return np.maximum(c - theta, 0.0)


def prox_tv1d(y, lam):
    """Exact prox of ``lam * ||D y||_1`` (D = forward differences).

    Direct non-iterative taut-string method (Condat's algorithm); runs the
    tube pursuit left to right and writes each segment once settled.
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    if n <= 1 or lam == 0.0:
        return y.copy()
    x = np.empty(n)
    k = k0 = kminus = kplus = 0
    vmin = y[0] - lam
    vmax = y[0] + lam
    umin = lam
    umax = -lam
    while True:
        while k == n - 1:
            if umin < 0.0:
                x[k0:kminus + 1] = vmin
                k0 = kminus + 1
                k = kminus = k0
                vmin = y[k]
                umin = lam
                umax = vmin + lam - vmax
            elif umax > 0.0:
                x[k0:kplus + 1] = vmax
                k0 = kplus + 1
                k = kplus = k0
                vmax = y[k]
                umax = -lam
                umin = vmax - lam - vmin
            else:
                x[k0:k + 1] = vmin + umin / (k - k0 + 1)
                return x
        umin += y[k + 1] - vmin
        umax += y[k + 1] - vmax
        if umin < -lam:
            x[k0:kminus + 1] = vmin
            k0 = kminus + 1
            k = kminus = kplus = k0
            vmin = y[k]
            vmax = y[k] + 2.0 * lam
            umin = lam
            umax = -lam
        elif umax > lam:
            x[k0:kplus + 1] = vmax
            k0 = kplus + 1
            k = kminus = kplus = k0
            vmax = y[k]
            vmin = y[k] - 2.0 * lam
            umin = lam
            umax = -lam
        else:
            k += 1
            if umin >= lam:
                kminus = k
                vmin += (umin - lam) / (kminus - k0 + 1)
                umin = lam
            if umax <= -lam:
                kplus = k
                vmax += (umax + lam) / (kplus - k0 + 1)
                umax = -lam


def forward_diff(x):
    return x[1:] - x[:-1]


def forward_diff_adjoint(u):
    """Adjoint of :func:`forward_diff`; maps R^(n-1) to R^n."""
    u = np.asarray(u, dtype=float)
    out = np.empty(u.size + 1)
    out[0] = -u[0]
    out[-1] = u[-1]
    if u.size > 1:
        out[1:-1] = u[:-1] - u[1:]
    return out


def _second_difference(value_at, x, h, step):
    f0 = value_at(x)
    fp = value_at(x + step * h)
    fm = value_at(x - step * h)
    return (fp - 2.0 * f0 + fm) / step**2


# ---------------------------------------------------------------------------
# regularizer kinds


class Regularizer:
    """Base class for weighted partly smooth regularizers.

    Subclasses implement ``value``, ``prox``, ``signature``, ``tangent_basis``,
    ``riemannian_gradient``, ``riemannian_hessian_apply``, ``nd_margin`` and
    ``subgradient_distance``. ``prox(z, gamma)`` returns the unique minimizer
    of ``0.5 * ||x - z||^2 + gamma * R(x)``.
    """

    kind = "abstract"
    polyhedral = False

    def __init__(self, lam):
        lam = float(lam)
        if lam <= 0:
            raise ValueError("weight lam must be positive")
        self.lam = lam

    def _check_gamma(self, gamma):
        if gamma <= 0:
            raise ValueError("prox step gamma must be positive")
        return float(gamma)

    def value(self, x):
        raise NotImplementedError

    def prox(self, z, gamma):
        raise NotImplementedError

    def signature(self, x, tol=DEFAULT_SIG_TOL):
        raise NotImplementedError

    def tangent_basis(self, sig):
        raise NotImplementedError

    def riemannian_gradient(self, x, sig):
        raise NotImplementedError

    def riemannian_hessian_apply(self, x, sig, h):
        raise NotImplementedError

    def riemannian_hessian_matrix(self, x, sig, basis):
        """Bilinear form of the Riemannian Hessian on a tangent basis."""
        cols = [self.riemannian_hessian_apply(x, sig, basis.matrix[:, j])
                for j in range(basis.dim)]
        if not cols:
            return np.zeros((0, 0))
        m = basis.matrix.T @ np.column_stack(cols)
        return 0.5 * (m + m.T)

    def nd_margin(self, x, sig, g):
        """Distance of ``-g`` to the relative boundary of the subdifferential.

        Positive iff the non-degeneracy condition holds at ``x``; negative
        values quantify the violation.
        """
        raise NotImplementedError

    def subgradient_distance(self, p, q):
        """Euclidean distance of ``q`` to the subdifferential at ``p``."""
        raise NotImplementedError

    def separable_margins(self, x, sig, g):
        """Per-inactive-component margins for separable kinds, else None."""
        return None


class L1Norm(Regularizer):
    kind = "l1"
    polyhedral = True

    def value(self, x):
        return self.lam * float(np.sum(np.abs(x)))

    def prox(self, z, gamma):
        gamma = self._check_gamma(gamma)
        return soft_threshold(np.asarray(z, dtype=float), gamma * self.lam)

    def signature(self, x, tol=DEFAULT_SIG_TOL):
        x = np.asarray(x, dtype=float)
        scale = np.max(np.abs(x)) if x.size else 0.0
        idx = np.nonzero(np.abs(x) > tol * scale)[0] if scale > 0 else np.array([], int)
        return Support(tuple(int(i) for i in idx), x.size)

    def tangent_basis(self, sig):
        b = np.zeros((sig.n, len(sig.indices)))
        for j, i in enumerate(sig.indices):
            b[i, j] = 1.0
        return TangentBasis(len(sig.indices), b)

    def riemannian_gradient(self, x, sig):
        g = np.zeros(sig.n)
        idx = list(sig.indices)
        g[idx] = self.lam * np.sign(np.asarray(x, dtype=float)[idx])
        return g

    def riemannian_hessian_apply(self, x, sig, h):
        return np.zeros(sig.n)

    def nd_margin(self, x, sig, g):
        off = np.setdiff1d(np.arange(sig.n), sig.indices)
        if off.size == 0:
            return np.inf
        return self.lam - float(np.max(np.abs(np.asarray(g, float)[off])))

    def separable_margins(self, x, sig, g):
        off = np.setdiff1d(np.arange(sig.n), sig.indices)
        return [self.lam - abs(float(g[i])) for i in off]

    def subgradient_distance(self, p, q):
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        on = np.abs(p) > 0
        d_on = q[on] - self.lam * np.sign(p[on])
        d_off = np.maximum(np.abs(q[~on]) - self.lam, 0.0)
        return float(np.sqrt(np.sum(d_on**2) + np.sum(d_off**2)))


class GroupNorm(Regularizer):
    """Group l1-l2 norm over a fixed partition of indices into blocks."""

    kind = "l12"
    polyhedral = False

    def __init__(self, lam, blocks):
        super().__init__(lam)
        self.blocks = tuple(tuple(int(i) for i in b) for b in blocks)
        flat = [i for b in self.blocks for i in b]
        if len(set(flat)) != len(flat):
            raise ValueError("blocks must be disjoint")
        self._n = len(flat)
        if sorted(flat) != list(range(self._n)):
            raise ValueError("blocks must partition 0..n-1")

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.size != self._n:
            raise ValueError(f"expected a vector of length {self._n}")
        return x

    def value(self, x):
        x = self._check(x)
        return self.lam * sum(float(np.linalg.norm(x[list(b)])) for b in self.blocks)

    def prox(self, z, gamma):
        gamma = self._check_gamma(gamma)
        z = self._check(z)
        out = np.empty_like(z)
        tau = gamma * self.lam
        for b in self.blocks:
            idx = list(b)
            nb = np.linalg.norm(z[idx])
            out[idx] = max(1.0 - tau / nb, 0.0) * z[idx] if nb > 0 else 0.0
        return out

    def signature(self, x, tol=DEFAULT_SIG_TOL):
        x = self._check(x)
        scale = np.max(np.abs(x)) if x.size else 0.0
        active = [
            j for j, b in enumerate(self.blocks)
            if scale > 0 and np.linalg.norm(x[list(b)]) > tol * scale
        ]
        return BlockSupport(tuple(active), len(self.blocks))

    def tangent_basis(self, sig):
        idx = [i for j in sig.blocks for i in self.blocks[j]]
        b = np.zeros((self._n, len(idx)))
        for j, i in enumerate(idx):
            b[i, j] = 1.0
        return TangentBasis(len(idx), b)

    def riemannian_gradient(self, x, sig):
        x = self._check(x)
        g = np.zeros(self._n)
        for j in sig.blocks:
            idx = list(self.blocks[j])
            g[idx] = self.lam * x[idx] / np.linalg.norm(x[idx])
        return g

    def riemannian_hessian_apply(self, x, sig, h):
        x = self._check(x)
        h = self._check(h)
        out = np.zeros(self._n)
        for j in sig.blocks:
            idx = list(self.blocks[j])
            xb, hb = x[idx], h[idx]
            nb = np.linalg.norm(xb)
            out[idx] = self.lam * (hb - (xb @ hb) / nb**2 * xb) / nb
        return out

    def nd_margin(self, x, sig, g):
        g = self._check(g)
        inactive = [j for j in range(len(self.blocks)) if j not in sig.blocks]
        if not inactive:
            return np.inf
        worst = max(np.linalg.norm(g[list(self.blocks[j])]) for j in inactive)
        return self.lam - float(worst)

    def separable_margins(self, x, sig, g):
        g = self._check(g)
        return [
            self.lam - float(np.linalg.norm(g[list(self.blocks[j])]))
            for j in range(len(self.blocks))
            if j not in sig.blocks
        ]

    def subgradient_distance(self, p, q):
        p = self._check(p)
        q = self._check(q)
        total = 0.0
        for b in self.blocks:
            idx = list(b)
            nb = np.linalg.norm(p[idx])
            if nb > 0:
                total += np.sum((q[idx] - self.lam * p[idx] / nb) ** 2)
            else:
                total += max(np.linalg.norm(q[idx]) - self.lam, 0.0) ** 2
        return float(np.sqrt(total))


class MaxNorm(Regularizer):
    """Weighted l-inf norm; prox via the Moreau identity and l1-ball projection."""

    kind = "linf"
    polyhedral = True

    def value(self, x):
        return self.lam * float(np.max(np.abs(x))) if np.asarray(x).size else 0.0

    def prox(self, z, gamma):
        gamma = self._check_gamma(gamma)
        z = np.asarray(z, dtype=float)
        return z - project_l1_ball(z, gamma * self.lam)

    def signature(self, x, tol=DEFAULT_SIG_TOL):
        x = np.asarray(x, dtype=float)
        top = np.max(np.abs(x)) if x.size else 0.0
        if top == 0.0:
            raise DegenerateSignatureError("max-set undefined at x = 0")
        on = np.abs(x) >= top * (1.0 - tol)
        signs = np.where(on, np.sign(x).astype(int), 0)
        idx = np.nonzero(on)[0]
        return MaxSet(tuple(int(i) for i in idx), tuple(int(s) for s in signs))

    def tangent_basis(self, sig):
        # T = R*s  (+)  free coordinates off the max set, per (par d R)^perp.
        n = len(sig.signs)
        s = np.asarray(sig.signs, dtype=float)
        cols = [s / np.sqrt(len(sig.indices))]
        for j in range(n):
            if j not in sig.indices:
                e = np.zeros(n)
                e[j] = 1.0
                cols.append(e)
        b = np.column_stack(cols)
        return TangentBasis(b.shape[1], b)

    def riemannian_gradient(self, x, sig):
        s = np.asarray(sig.signs, dtype=float)
        return self.lam * s / len(sig.indices)

    def riemannian_hessian_apply(self, x, sig, h):
        return np.zeros(len(sig.signs))

    def nd_margin(self, x, sig, g):
        g = np.asarray(g, dtype=float)
        n = g.size
        idx = list(sig.indices)
        k = len(idx)
        # Barycentric least squares on the vertices lam * s_i e_i, with the
        # affine constraint sum(theta) = 1 appended as an extra row.
        a = np.zeros((n + 1, k))
        for j, i in enumerate(idx):
            a[i, j] = self.lam * sig.signs[i]
            a[n, j] = 1.0
        rhs = np.concatenate([-g, [1.0]])
        theta, _, rank, _ = np.linalg.lstsq(a, rhs, rcond=None)
        if rank < k:
            raise MarginUndeterminedError("rank-deficient barycentric system")
        resid = np.linalg.norm(a @ theta - rhs)
        if resid > 1e-9 * max(1.0, np.linalg.norm(g)):
            return -float(resid)  # -g is not even in aff(dR(x))
        if k == 1:
            return np.inf  # singleton subdifferential is relatively open
        return float(self.lam * np.min(theta) * np.sqrt(k / (k - 1.0)))

    def subgradient_distance(self, p, q):
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        if np.max(np.abs(p)) == 0.0:
            return float(np.linalg.norm(q - project_l1_ball(q, self.lam)))
        sig = self.signature(p)
        idx = list(sig.indices)
        s = np.asarray(sig.signs, dtype=float)
        c = s[idx] * q[idx]
        phi = project_simplex(c, total=self.lam)
        off = np.setdiff1d(np.arange(p.size), idx)
        return float(np.sqrt(np.sum(q[off] ** 2) + np.sum((phi - c) ** 2)))


class TotalVariation1D(Regularizer):
    """1-D anisotropic total variation ``lam * ||D x||_1``."""

    kind = "tv1d"
    polyhedral = True

    def value(self, x):
        return self.lam * float(np.sum(np.abs(forward_diff(np.asarray(x, float)))))

    def prox(self, z, gamma):
        gamma = self._check_gamma(gamma)
        return prox_tv1d(z, gamma * self.lam)

    def signature(self, x, tol=DEFAULT_SIG_TOL):
        x = np.asarray(x, dtype=float)
        d = forward_diff(x)
        scale = np.max(np.abs(x)) if x.size else 0.0
        jumps = np.nonzero(np.abs(d) > tol * scale)[0] if scale > 0 else np.array([], int)
        return JumpSet(tuple(int(i) for i in jumps), x.size)

    def tangent_basis(self, sig):
        # Plateau indicators between consecutive jumps, normalized; disjoint
        # supports make the basis orthonormal without further work.
        bounds = [0] + [j + 1 for j in sig.jumps] + [sig.n]
        cols = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            e = np.zeros(sig.n)
            e[lo:hi] = 1.0 / np.sqrt(hi - lo)
            cols.append(e)
        b = np.column_stack(cols)
        return TangentBasis(b.shape[1], b)

    def riemannian_gradient(self, x, sig):
        s = np.sign(forward_diff(np.asarray(x, dtype=float)))
        v = self.lam * forward_diff_adjoint(s)
        return self.tangent_basis(sig).project(v)

    def riemannian_hessian_apply(self, x, sig, h):
        return np.zeros(sig.n)

    def nd_margin(self, x, sig, g):
        g = np.asarray(g, dtype=float)
        total = float(np.sum(g))
        if abs(total) > 1e-9 * max(1.0, np.linalg.norm(g)):
            return -abs(total)  # -g is outside range(D^T), hence outside aff
        u = np.cumsum(g)[:-1]  # dual running sums: D^T u = -g
        off = np.setdiff1d(np.arange(sig.n - 1), sig.jumps)
        if off.size == 0:
            return np.inf
        return self.lam - float(np.max(np.abs(u[off])))

    def subgradient_distance(self, p, q):
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        n = p.size
        sig = self.signature(p)
        s = np.sign(forward_diff(p))
        dt = np.zeros((n, n - 1))
        for j in range(n - 1):
            e = np.zeros(n - 1)
            e[j] = 1.0
            dt[:, j] = forward_diff_adjoint(e)
        fixed = np.zeros(n - 1)
        jumps = list(sig.jumps)
        fixed[jumps] = self.lam * s[jumps]
        free = np.setdiff1d(np.arange(n - 1), jumps)
        target = q - dt @ fixed
        if free.size == 0:
            return float(np.linalg.norm(target))
        res = lsq_linear(
            dt[:, free], target, bounds=(-self.lam, self.lam), method="bvls",
            tol=1e-14,
        )
        return float(np.linalg.norm(dt[:, free] @ res.x - target))


class NuclearNorm(Regularizer):
    """Nuclear norm on n1 x n2 matrices stored as column-major vectors."""

    kind = "nuclear"
    polyhedral = False

    def __init__(self, lam, n1, n2):
        super().__init__(lam)
        self.n1 = int(n1)
        self.n2 = int(n2)

    @property
    def n(self):
        return self.n1 * self.n2

    def mat(self, x):
        x = np.asarray(x, dtype=float)
        if x.size != self.n:
            raise ValueError(f"expected a vector of length {self.n}")
        return x.reshape(self.n1, self.n2, order="F")

    def vec(self, m):
        return np.asarray(m, dtype=float).reshape(-1, order="F")

    def value(self, x):
        return self.lam * float(np.sum(np.linalg.svd(self.mat(x), compute_uv=False)))

    def prox(self, z, gamma):
        gamma = self._check_gamma(gamma)
        u, s, vt = np.linalg.svd(self.mat(z), full_matrices=False)
        return self.vec((u * np.maximum(s - gamma * self.lam, 0.0)) @ vt)

    def signature(self, x, tol=DEFAULT_SIG_TOL):
        u, s, vt = np.linalg.svd(self.mat(x), full_matrices=False)
        top = s[0] if s.size else 0.0
        r = int(np.sum(s > tol * top)) if top > 0 else 0
        u, v = u[:, :r], vt[:r].T
        for j in range(r):  # sign convention: largest-|entry| of u_j positive
            i = int(np.argmax(np.abs(u[:, j])))
            if u[i, j] < 0:
                u[:, j] = -u[:, j]
                v[:, j] = -v[:, j]
        return RankSignature(r, self.n1, self.n2, u, v)

    def tangent_basis(self, sig):
        # Complete the frames and keep every u_i v_j^T except the pure
        # normal block (i > r and j > r); dimension (n1 + n2 - r) r.
        uf = _complete_frame(sig.u, self.n1)
        vf = _complete_frame(sig.v, self.n2)
        r = sig.rank
        cols = []
        for i in range(self.n1):
            for j in range(self.n2):
                if i < r or j < r:
                    cols.append(self.vec(np.outer(uf[:, i], vf[:, j])))
        d = (self.n1 + self.n2 - r) * r
        b = np.column_stack(cols) if cols else np.zeros((self.n, 0))
        assert b.shape[1] == d
        return TangentBasis(d, b)

    def riemannian_gradient(self, x, sig):
        return self.lam * self.vec(sig.u @ sig.v.T)

    def _retract(self, z, r):
        u, s, vt = np.linalg.svd(z.reshape(self.n1, self.n2, order="F"),
                                 full_matrices=False)
        return self.vec((u[:, :r] * s[:r]) @ vt[:r])

    def _quad_form(self, x0, h, r, step):
        value_at = lambda z: self.value(self._retract(z, r))
        return _second_difference(value_at, x0, h, step)

    def riemannian_hessian_apply(self, x, sig, h, step_scale=1e-4):
        """Numerical Riemannian Hessian action through the rank-r retraction.

        Uses central second differences of the norm along retracted rays and
        reconstructs the symmetric bilinear form by polarization on the
        tangent basis.
        """
        x = np.asarray(x, dtype=float)
        basis = self.tangent_basis(sig)
        ht = basis.project(np.asarray(h, dtype=float))
        step = step_scale * np.linalg.norm(x)
        x0 = self._retract(x, sig.rank)
        out = np.zeros(self.n)
        for j in range(basis.dim):
            bj = basis.matrix[:, j]
            cross = 0.25 * (
                self._quad_form(x0, ht + bj, sig.rank, step)
                - self._quad_form(x0, ht - bj, sig.rank, step)
            )
            out += cross * bj
        return out

    def riemannian_hessian_matrix(self, x, sig, basis, step_scale=1e-4):
        x = np.asarray(x, dtype=float)
        step = step_scale * np.linalg.norm(x)
        x0 = self._retract(x, sig.rank)
        d = basis.dim
        diag = [self._quad_form(x0, basis.matrix[:, i], sig.rank, step)
                for i in range(d)]
        m = np.zeros((d, d))
        for i in range(d):
            m[i, i] = diag[i]
            for j in range(i + 1, d):
                q_sum = self._quad_form(
                    x0, basis.matrix[:, i] + basis.matrix[:, j], sig.rank, step
                )
                m[i, j] = m[j, i] = 0.5 * (q_sum - diag[i] - diag[j])
        return m

    def _split(self, q_mat, sig):
        pu = sig.u @ sig.u.T
        pv = sig.v @ sig.v.T
        t_part = pu @ q_mat + q_mat @ pv - pu @ q_mat @ pv
        return t_part, q_mat - t_part

    def nd_margin(self, x, sig, g):
        _, off = self._split(self.mat(-np.asarray(g, dtype=float)), sig)
        svals = np.linalg.svd(off, compute_uv=False)
        top = svals[0] if svals.size else 0.0
        return self.lam - float(top)

    def subgradient_distance(self, p, q):
        sig = self.signature(p)
        t_part, off = self._split(self.mat(q), sig)
        d_t = np.linalg.norm(t_part - self.lam * sig.u @ sig.v.T)
        sv = np.linalg.svd(off, compute_uv=False)
        d_off2 = float(np.sum(np.maximum(sv - self.lam, 0.0) ** 2))
        return float(np.sqrt(d_t**2 + d_off2))


def _complete_frame(u, n):
    """Extend r orthonormal columns to a full orthonormal n x n frame."""
    r = u.shape[1]
    if r == n:
        return u
    q, _ = np.linalg.qr(np.hstack([u, np.random.default_rng(0).standard_normal((n, n - r))]))
    # keep the original columns exactly
    return np.hstack([u, q[:, r:]]) if r else q


def regularizer_from_config(cfg):
    """Build a regularizer from a plain dict (see the CLI config schema)."""
    kind = cfg.get("kind")
    lam = cfg.get("lambda", cfg.get("lam"))
    if kind == "l1":
        return L1Norm(lam)
    if kind == "l12":
        ranges = cfg["blocks"]
        blocks = [tuple(range(a, b)) for a, b in ranges]
        return GroupNorm(lam, blocks)
    if kind == "linf":
        return MaxNorm(lam)
    if kind == "tv1d":
        return TotalVariation1D(lam)
    if kind == "nuclear":
        return NuclearNorm(lam, cfg["n1"], cfg["n2"])
    raise ValueError(f"unknown regularizer kind: {kind!r}")
