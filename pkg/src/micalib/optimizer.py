"""Bounded derivative-free maximization with quadratic interpolation models.

The solver follows the structure of Powell's BOBYQA: an interpolation set of
``npt`` points, a quadratic model whose Hessian changes by the least
Frobenius norm each time a point is replaced, box-constrained truncated CG
trust-region steps, geometry-improving steps when the set degenerates, and a
decreasing resolution ``rho``.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


class Termination(str, enum.Enum):
    RADIUS = "radius-converged"
    BUDGET = "eval-budget"
    STALLED = "stalled"


@dataclass(frozen=True, eq=False)
class Bounds:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lower, dtype=np.float64).reshape(-1)
        hi = np.array(self.upper, dtype=np.float64).reshape(-1)
        if lo.shape != hi.shape:
            raise ValueError("lower and upper bounds differ in length")
        if not np.all(lo < hi):
            raise ValueError("bounds need lower < upper in every coordinate")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def around(cls, x0, half_width) -> "Bounds":
        x0 = np.asarray(x0, dtype=np.float64)
        return cls(x0 - half_width, x0 + half_width)

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=np.float64)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))


@dataclass(frozen=True)
class OptimizerConfig:
    rho_begin: float = 1.0
    rho_end: float = 1e-3
    max_evaluations: int = 2000
    interpolation_points: Optional[int] = None  # default 2n + 1

    def __post_init__(self):
        if not (0 < self.rho_end < self.rho_begin):
            raise ValueError(f"need 0 < rho_end < rho_begin, got {self.rho_end}, {self.rho_begin}")
        if self.max_evaluations < 1:
            raise ValueError("max_evaluations must be positive")

    def npt(self, n: int) -> int:
        m = 2 * n + 1 if self.interpolation_points is None else int(self.interpolation_points)
        if not n + 2 <= m <= (n + 1) * (n + 2) // 2:
            raise ValueError(
                f"interpolation_points must lie in [{n + 2}, {(n + 1) * (n + 2) // 2}], got {m}"
            )
        return m


@dataclass
class OptimizationResult:
    best_params: np.ndarray
    best_value: float
    evaluations_used: int
    termination: Termination
    history: list = field(default_factory=list, repr=False)


def scale_params(params, scaling) -> np.ndarray:
    return np.asarray(params, dtype=np.float64) * np.asarray(scaling, dtype=np.float64)


def unscale_params(x, scaling) -> np.ndarray:
    return np.asarray(x, dtype=np.float64) / np.asarray(scaling, dtype=np.float64)


def write_trace_csv(path, history, names=None) -> None:
    """``history`` rows are ``(index, x, value)`` as stored in ``OptimizationResult``."""
    if not history:
        n = len(names or [])
    else:
        n = len(history[0][1])
    names = list(names) if names else [f"x{i}" for i in range(n)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["evaluation"] + names + ["value"])
        for idx, x, val in history:
            w.writerow([idx] + [repr(float(v)) for v in x] + [repr(float(val))])


class _BudgetExhausted(Exception):
    pass


class _ModelFailure(Exception):
    pass


def trsbox(g, H, delta, sl, su):
    """Approximately minimize ``g.s + s.H.s/2`` over ``|s| <= delta``, ``sl <= s <= su``.

    Truncated conjugate gradients; a variable that reaches its bound is fixed
    there and CG restarts on the remaining ones.
    """
    n = g.size
    s = np.zeros(n)
    grad = g.astype(np.float64).copy()
    fixed = np.zeros(n, dtype=bool)
    gtol = 1e-14 * (1.0 + np.linalg.norm(g))
    for _ in range(n + 1):
        fixed |= ((s <= sl) & (grad > 0)) | ((s >= su) & (grad < 0))
        r = np.where(fixed, 0.0, -grad)
        rr = r @ r
        if math.sqrt(rr) <= gtol:
            break
        p = r.copy()
        new_bound = False
        for _ in range(n - int(fixed.sum())):
            Hp = H @ p
            pHp = p @ Hp
            pp = p @ p
            if pp <= 0.0:
                break
            sp = s @ p
            rem = delta * delta - s @ s
            alpha_tr = (-sp + math.sqrt(max(sp * sp + pp * rem, 0.0))) / pp
            alpha_b = math.inf
            ib = -1
            for i in range(n):
                if fixed[i] or p[i] == 0.0:
                    continue
                lim = (su[i] - s[i]) / p[i] if p[i] > 0 else (sl[i] - s[i]) / p[i]
                if lim < alpha_b:
                    alpha_b, ib = max(lim, 0.0), i
            alpha_cg = rr / pHp if pHp > 0 else math.inf
            alpha = min(alpha_cg, alpha_tr, alpha_b)
            s = s + alpha * p
            grad = grad + alpha * Hp
            if alpha == alpha_b and alpha_b <= alpha_tr:
                s[ib] = su[ib] if p[ib] > 0 else sl[ib]
                fixed[ib] = True
                new_bound = True
                break
            if alpha == alpha_tr:
                return np.clip(s, sl, su)
            r = np.where(fixed, 0.0, -grad)
            rr_new = r @ r
            if math.sqrt(rr_new) <= gtol:
                return np.clip(s, sl, su)
            p = r + (rr_new / rr) * p
            p[fixed] = 0.0
            rr = rr_new
        if not new_bound:
            break
    return np.clip(s, sl, su)


class _Solver:
    """Minimizes ``F = -f``; all bookkeeping below is in minimization form."""

    def __init__(self, f, x0, bounds: Bounds, config: OptimizerConfig):
        self.f = f
        self.lower = bounds.lower
        self.upper = bounds.upper
        self.n = x0.size
        self.m = config.npt(self.n)
        self.max_evals = int(config.max_evaluations)
        self.rho = min(config.rho_begin, 0.5 * float(np.min(self.upper - self.lower)))
        self.rho_end = min(config.rho_end, self.rho)
        self.delta = self.rho
        self.history = []
        self.Y = np.zeros((self.m, self.n))
        self.F = np.zeros(self.m)
        self.kopt = 0
        # model around Y[kopt]: F(x) ~ F[kopt] + g.(x - xopt) + (x - xopt).H.(x - xopt)/2
        self.g = np.zeros(self.n)
        self.H = np.zeros((self.n, self.n))
        self.Winv = None
        self.scale = 1.0
        self.x0 = x0

    # -- evaluation ---------------------------------------------------------
    def evaluate(self, x):
        if len(self.history) >= self.max_evals:
            raise _BudgetExhausted
        x = np.clip(x, self.lower, self.upper)
        val = float(self.f(x.copy()))
        self.history.append((len(self.history), x.copy(), val))
        if not math.isfinite(val):
            return x, None
        return x, -val

    @property
    def xopt(self):
        return self.Y[self.kopt]

    @property
    def fopt(self):
        return self.F[self.kopt]

    # -- initial interpolation set -----------------------------------------
    def initial_steps(self):
        rho = self.rho
        first = np.zeros(self.n)
        second = np.zeros(self.n)
        for i in range(self.n):
            up = self.upper[i] - self.x0[i]
            down = self.x0[i] - self.lower[i]
            if up >= rho and down >= rho:
                first[i], second[i] = rho, -rho
            elif down < rho:
                first[i] = rho
                second[i] = -down if down >= 0.25 * rho else min(2.0 * rho, up)
            else:
                first[i] = -rho
                second[i] = up if up >= 0.25 * rho else -min(2.0 * rho, down)
        pts = [self.x0.copy()]
        for i in range(self.n):
            pts.append(self.x0 + first[i] * np.eye(self.n)[i])
        for i in range(min(self.n, self.m - 1 - self.n)):
            pts.append(self.x0 + second[i] * np.eye(self.n)[i])
        extra = self.m - len(pts)
        if extra > 0:
            pairs = [(i, j) for j in range(self.n) for i in range(j)]
            pairs.sort(key=lambda ij: (ij[1] - ij[0], ij[0]))
            for i, j in pairs[:extra]:
                p = self.x0.copy()
                p[i] += first[i]
                p[j] += first[j]
                pts.append(p)
        return pts

    def initialize(self):
        vals = []
        for k, p in enumerate(self.initial_steps()):
            x, val = self.evaluate(p)
            self.Y[k] = x
            vals.append(val)
        finite = [v for v in vals if v is not None]
        if not finite:
            raise _ModelFailure("objective is non-finite at every initial point")
        worst = max(finite) + 1.0
        self.F = np.array([worst if v is None else v for v in vals])
        # first point wins ties so x0 stays the incumbent on flat objectives
        self.kopt = int(np.argmin(self.F))
        self.rebuild_model(np.zeros(self.n), np.zeros((self.n, self.n)), self.xopt.copy(),
                           self.fopt)

    # -- model --------------------------------------------------------------
    def _kkt(self, base, scale):
        Z = (self.Y - base) / scale
        A = 0.5 * (Z @ Z.T) ** 2
        m, n = self.m, self.n
        W = np.zeros((m + n + 1, m + n + 1))
        W[:m, :m] = A
        W[:m, m] = 1.0
        W[m, :m] = 1.0
        W[:m, m + 1:] = Z
        W[m + 1:, :m] = Z.T
        return W, Z

    def rebuild_model(self, g_prev, H_prev, base_prev, c_prev):
        """Least-Frobenius-norm update of the previous quadratic."""
        xopt = self.xopt.copy()
        dist = np.linalg.norm(self.Y - xopt, axis=1)
        scale = float(dist.max()) if dist.max() > 0 else 1.0
        W, Z = self._kkt(xopt, scale)
        try:
            Winv = np.linalg.inv(W)
        except np.linalg.LinAlgError as exc:
            raise _ModelFailure(str(exc)) from exc
        if not np.all(np.isfinite(Winv)):
            raise _ModelFailure("interpolation system is singular")
        D = self.Y - base_prev
        prev_vals = c_prev + D @ g_prev + 0.5 * np.einsum("ij,jk,ik->i", D, H_prev, D)
        resid = self.F - prev_vals
        rhs = np.concatenate([resid, np.zeros(self.n + 1)])
        sol = Winv @ rhs
        lam, c_d, g_d = sol[:self.m], sol[self.m], sol[self.m + 1:]
        d0 = xopt - base_prev
        g_old_at_opt = g_prev + H_prev @ d0
        self.g = g_old_at_opt + g_d / scale
        self.H = H_prev + (Z.T * lam) @ Z / scale ** 2
        self.H = 0.5 * (self.H + self.H.T)
        self.Winv = Winv
        self.scale = scale
        self.Zopt = Z
        if not (np.all(np.isfinite(self.g)) and np.all(np.isfinite(self.H))):
            raise _ModelFailure("model became non-finite")

    def model_change(self, s):
        return self.g @ s + 0.5 * s @ self.H @ s

    def lagrange_values(self, x):
        """Values of all Lagrange functions of the current set at ``x``."""
        z = (x - self.xopt) / self.scale
        w = np.concatenate([0.5 * (self.Zopt @ z) ** 2, [1.0], z])
        return self.Winv[:self.m] @ w

    def replace(self, knew, x, fval):
        g_prev, H_prev, base_prev, c_prev = self.g.copy(), self.H.copy(), self.xopt.copy(), self.fopt
        self.Y[knew] = x
        self.F[knew] = fval
        if fval < c_prev or knew == self.kopt:
            self.kopt = int(knew) if fval < c_prev else int(np.argmin(self.F))
        self.rebuild_model(g_prev, H_prev, base_prev, c_prev)

    def choose_drop(self, x, improved):
        lag = np.abs(self.lagrange_values(x))
        dist = np.linalg.norm(self.Y - self.xopt, axis=1)
        weight = lag * np.maximum(1.0, (dist / self.delta) ** 2)
        if not improved:
            weight[self.kopt] = -1.0
        return int(np.argmax(weight))

    # -- geometry -----------------------------------------------------------
    def geometry_step(self, k, radius):
        """Step from xopt that makes the k-th Lagrange function large in modulus."""
        xopt = self.xopt
        sl = self.lower - xopt
        su = self.upper - xopt
        lam_col = self.Winv[:self.m, k]
        c = self.Winv[self.m, k]
        gl = self.Winv[self.m + 1:, k]
        best_val, best_s = -1.0, None

        def along(v):
            nonlocal best_val, best_s
            vn = np.linalg.norm(v)
            if vn == 0.0:
                return
            v = v / vn
            zv = v / self.scale
            lin = gl @ zv
            quad = 0.5 * lam_col @ (self.Zopt @ zv) ** 2
            lo, hi = -radius, radius
            for i in range(self.n):
                if v[i] > 0:
                    hi = min(hi, su[i] / v[i])
                    lo = max(lo, sl[i] / v[i])
                elif v[i] < 0:
                    hi = min(hi, sl[i] / v[i])
                    lo = max(lo, su[i] / v[i])
            cands = [lo, hi]
            if quad != 0.0:
                a_star = -lin / (2.0 * quad)
                if lo < a_star < hi:
                    cands.append(a_star)
            for a in cands:
                if abs(a) < 1e-3 * radius:
                    continue
                val = abs(c + a * lin + a * a * quad)
                if val > best_val:
                    best_val, best_s = val, a * v

        for j in range(self.m):
            if j != self.kopt:
                along(self.Y[j] - xopt)
        along(gl)
        for i in range(self.n):
            along(np.eye(self.n)[i])
        if best_s is None:
            return None
        return np.clip(best_s, sl, su)

    def improve_geometry(self):
        """Move the farthest point closer; returns False when nothing is far."""
        dist = np.linalg.norm(self.Y - self.xopt, axis=1)
        k = int(np.argmax(dist))
        if dist[k] <= max(2.0 * self.delta, 2.0 * self.rho):
            return False
        radius = max(min(0.1 * dist[k], self.delta), self.rho)
        s = self.geometry_step(k, radius)
        if s is None or np.linalg.norm(s) == 0.0:
            return False
        x, val = self.evaluate(self.xopt + s)
        if val is None:
            val = float(np.max(self.F)) + 1.0
        self.replace(k, x, val)
        return True

    # -- main loop ----------------------------------------------------------
    def reduce_rho(self):
        if self.rho <= self.rho_end:
            return False
        ratio = self.rho / self.rho_end
        old = self.rho
        if ratio <= 16.0:
            self.rho = self.rho_end
        elif ratio <= 250.0:
            self.rho = math.sqrt(ratio) * self.rho_end
        else:
            self.rho = 0.1 * self.rho
        self.delta = max(0.5 * old, self.rho)
        return True

    def run(self) -> Termination:
        self.initialize()
        while True:
            xopt = self.xopt.copy()
            sl = self.lower - xopt
            su = self.upper - xopt
            s = trsbox(self.g, self.H, self.delta, sl, su)
            snorm = float(np.linalg.norm(s))
            if snorm < 0.5 * self.rho:
                self.delta = max(0.5 * self.delta, self.rho)
                if self.improve_geometry():
                    continue
                if not self.reduce_rho():
                    return Termination.RADIUS
                continue
            pred = -self.model_change(s)
            x, val = self.evaluate(xopt + s)
            if val is None:
                self.delta = max(min(0.5 * self.delta, 0.5 * snorm), self.rho)
                if snorm <= self.rho and not self.reduce_rho():
                    return Termination.RADIUS
                continue
            actual = self.fopt - val
            ratio = actual / pred if pred > 0 else (-math.inf if actual <= 0 else 0.0)
            if ratio < 0.1:
                self.delta = min(0.5 * self.delta, snorm)
            elif ratio <= 0.7:
                self.delta = max(0.5 * self.delta, snorm)
            else:
                self.delta = max(0.5 * self.delta, 2.0 * snorm)
            if self.delta <= 1.5 * self.rho:
                self.delta = self.rho
            improved = val < self.fopt
            knew = self.choose_drop(x, improved)
            self.replace(knew, x, val)
            if ratio < 0.1:
                if self.improve_geometry():
                    continue
                if max(self.delta, snorm) <= self.rho and ratio <= 0:
                    if not self.reduce_rho():
                        return Termination.RADIUS


def maximize(f: Callable, x0, bounds: Bounds, config: Optional[OptimizerConfig] = None,
             ) -> OptimizationResult:
    """Maximize ``f`` over the box without derivatives.

    Non-finite values of ``f`` count as -inf: the point is rejected and never
    becomes the incumbent.
    """
    config = config or OptimizerConfig()
    x0 = np.array(x0, dtype=np.float64).reshape(-1)
    if x0.shape != bounds.lower.shape:
        raise ValueError(f"x0 has {x0.size} entries, bounds have {bounds.lower.size}")
    if not (np.all(x0 > bounds.lower) and np.all(x0 < bounds.upper)):
        raise ValueError("x0 must lie strictly inside the bounds")
    solver = _Solver(f, x0, bounds, config)
    try:
        term = solver.run()
    except _BudgetExhausted:
        term = Termination.BUDGET
    except _ModelFailure:
        term = Termination.STALLED
    finite = [(val, i) for i, (_, _, val) in enumerate(solver.history) if math.isfinite(val)]
    if finite:
        # earliest evaluation wins ties
        best_val, best_i = max(finite, key=lambda vi: (vi[0], -vi[1]))
        best_x = solver.history[best_i][1].copy()
    else:
        best_val, best_x = -math.inf, x0.copy()
    return OptimizationResult(best_x, float(best_val), len(solver.history), term,
                              history=solver.history)
