"""Weissenberg ramps, sparse linear solves, damped Newton and adaptive BDF time stepping."""

from __future__ import annotations

import csv
import glob
import io
import math
import os
import sys
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import AssemblyError, BodyForce, Discretization, FieldState, SolverParams


# ---------------------------------------------------------------------------
# errors


class SolverError(RuntimeError):
    """Base class; ``kind`` is a short stable label, ``trace`` the iteration history."""

    kind = "solver failure"

    def __init__(self, message: str | None = None, *, trace=None, stage: str | None = None, state=None):
        self.trace = list(trace or [])
        self.stage = stage
        self.state = state
        msg = message or self.kind
        if stage:
            msg = f"{stage}: {msg}"
        super().__init__(msg)


class NewtonError(SolverError):
    kind = "max iterations"

    def __init__(self, kind: str, message: str | None = None, **kw):
        self.kind = kind
        super().__init__(message or kind, **kw)


class SingularSystemError(NewtonError):
    def __init__(self, dof: int, message: str | None = None, **kw):
        self.dof = dof
        super().__init__("singular linear system",
                         message or f"singular linear system (zero pivot near dof {dof})", **kw)


class StepSizeUnderflow(SolverError):
    kind = "step size underflow"


# ---------------------------------------------------------------------------
# Weissenberg ramp


@dataclass(frozen=True)
class RampSpec:
    We_start: float
    We_end: float
    t_start: float = 0.0
    t_end: float = 1.0

    def __post_init__(self):
        if not self.t_end > self.t_start >= 0:
            raise ValueError("ramp needs t_end > t_start >= 0")
        if not (self.We_start > 0 and self.We_end > 0):
            raise ValueError("ramp Weissenberg numbers must be positive")

    @property
    def T_step(self) -> float:
        return self.t_end - self.t_start

    def st(self, t: float) -> float:
        """Smoothed unit step: 0 before t_start, 1 after t_end, C1 cubic between."""
        if t <= self.t_start:
            return 0.0
        if t >= self.t_end:
            return 1.0
        tb = (t - 0.5 * (self.t_start + self.t_end)) / (self.t_end - self.t_start)
        return 0.5 + 1.5 * tb - 2.0 * tb ** 3

    def __call__(self, t: float) -> float:
        return step_function(t, self)


def step_function(t: float, ramp: RampSpec) -> float:
    return ramp.We_start + (ramp.We_end - ramp.We_start) * ramp.st(t)


def constant_We(We: float) -> RampSpec:
    return RampSpec(We, We, 0.0, 1.0)


# ---------------------------------------------------------------------------
# linear algebra


def _find_mkl_rt() -> str | None:
    roots = [os.path.join(sys.prefix, "lib"), "/usr/local/lib", "/usr/lib", "/usr/lib/x86_64-linux-gnu"]
    for r in roots:
        hits = sorted(glob.glob(os.path.join(r, "libmkl_rt.so*")))
        if hits:
            return hits[0]
    return None


def _pardiso_solver():
    if "PYPARDISO_MKL_RT" not in os.environ:
        path = _find_mkl_rt()
        if path:
            os.environ["PYPARDISO_MKL_RT"] = path
    try:
        from pypardiso import PyPardisoSolver
        return PyPardisoSolver()
    except Exception:  # missing package or library
        return None


def available_backends() -> list[str]:
    out = ["superlu"]
    if _pardiso_solver() is not None:
        out.insert(0, "pardiso")
    return out


class LinearSolver:
    """Sparse direct factorization with iterative refinement.

    ``backend`` is "superlu", "pardiso" (MKL, optional) or "auto".
    """

    def __init__(self, backend: str = "auto", rtol: float = 1e-12, max_refine: int = 6):
        if backend not in ("auto", "superlu", "pardiso"):
            raise ValueError(f"unknown linear solver backend {backend!r}")
        self._pardiso = None
        if backend in ("auto", "pardiso"):
            self._pardiso = _pardiso_solver()
            if self._pardiso is None and backend == "pardiso":
                raise RuntimeError("pardiso backend requested but pypardiso/MKL is unavailable")
        self.backend = "pardiso" if self._pardiso is not None else "superlu"
        self.rtol = rtol
        self.max_refine = max_refine
        self.A = None
        self._lu = None
        self.n_factorizations = 0
        self.last_residual = 0.0
        self._pattern = None

    def factorize(self, A: sp.spmatrix) -> None:
        A = sp.csr_matrix(A)
        _structural_check(A)
        self.A = A
        self.n_factorizations += 1
        self._lu = None
        if self.backend == "pardiso":
            try:
                self._pardiso_factorize(A)
                return
            except SingularSystemError:
                pass  # retry below with threshold pivoting
        self._superlu_factorize(A)

    def _superlu_factorize(self, A: sp.csr_matrix) -> None:
        try:
            self._lu = spla.splu(A.tocsc())
        except RuntimeError as exc:
            raise SingularSystemError(_weakest_dof(A), f"singular linear system: {exc}") from None

    def release(self) -> None:
        """Free the factorization (pardiso keeps it in MKL-owned memory)."""
        if self._pardiso is not None and self._pattern is not None:
            try:
                self._pardiso.free_memory(everything=True)
            except Exception:
                pass
        self._pattern = None
        self._lu = None
        self.A = None

    def __del__(self):
        self.release()

    def _pardiso_factorize(self, A: sp.csr_matrix) -> None:
        # the symbolic analysis (ordering) is reused while the sparsity pattern is unchanged
        p = self._pardiso
        A.sort_indices()
        p._check_A(A)
        same = (self._pattern is not None and np.array_equal(self._pattern[0], A.indptr)
                and np.array_equal(self._pattern[1], A.indices))
        p.set_phase(22 if same else 12)
        b = np.zeros((A.shape[0], 1))
        try:
            p._call_pardiso(A, b)
        except Exception as exc:
            self._pattern = None
            raise SingularSystemError(_weakest_dof(A), f"singular linear system: {exc}") from None
        if not same:
            self._pattern = (A.indptr.copy(), A.indices.copy())

    def _raw(self, b):
        if self._lu is None:
            self._pardiso.set_phase(33)
            x = self._pardiso._call_pardiso(self.A, np.asfortranarray(b[:, None]))
            return x[:, 0]
        return self._lu.solve(b)

    def solve(self, b: np.ndarray, *, strict: bool = True) -> np.ndarray:
        if self.A is None:
            raise RuntimeError("factorize first")
        b = np.asarray(b, dtype=float)
        nb = np.linalg.norm(b)
        if nb == 0:
            return np.zeros_like(b)
        x, res, rel = self._refined(b, nb)
        if self._lu is None and not rel <= 1e-6:
            # pardiso perturbs tiny pivots; saddle-point systems sometimes need real pivoting
            self._superlu_factorize(self.A)
            x, res, rel = self._refined(b, nb)
        self.last_residual = rel
        if not np.isfinite(x).all() or not np.isfinite(rel) or (strict and rel > 1e-6):
            raise SingularSystemError(int(np.argmax(np.abs(np.nan_to_num(res, nan=np.inf)))))
        return x

    def _refined(self, b, nb):
        x = self._raw(b)
        res = b - self.A @ x
        rel = np.linalg.norm(res) / nb
        k = 0
        while not (rel <= self.rtol) and k < self.max_refine and np.isfinite(rel):
            x = x + self._raw(res)
            res = b - self.A @ x
            new = np.linalg.norm(res) / nb
            k += 1
            if not new < 0.5 * rel:
                rel = new
                break
            rel = new
        return x, res, rel


def _structural_check(A: sp.csr_matrix) -> None:
    rows = np.diff(A.indptr)
    nz = A.data != 0
    row_nz = np.bincount(np.repeat(np.arange(A.shape[0]), rows)[nz], minlength=A.shape[0])
    if (row_nz == 0).any():
        raise SingularSystemError(int(np.flatnonzero(row_nz == 0)[0]))
    col_nz = np.bincount(A.indices[nz], minlength=A.shape[1])
    if (col_nz == 0).any():
        raise SingularSystemError(int(np.flatnonzero(col_nz == 0)[0]))


def _weakest_dof(A: sp.csr_matrix) -> int:
    d = np.abs(A.diagonal())
    return int(np.argmin(d))


def permutation_parity(perm: np.ndarray) -> int:
    """+1 for an even permutation, -1 for an odd one."""
    perm = np.asarray(perm)
    seen = np.zeros(perm.size, dtype=bool)
    sign = 1
    for i in range(perm.size):
        if seen[i]:
            continue
        j, length = i, 0
        while not seen[j]:
            seen[j] = True
            j = perm[j]
            length += 1
        if length % 2 == 0:
            sign = -sign
    return sign


def det_sign(A: sp.spmatrix) -> int:
    """Sign of det(A) from a SuperLU factorization (0 if exactly singular).

    Along a solution branch the sign flips whenever an odd number of real
    eigenvalues of the Jacobian cross zero, which makes it a cheap test function
    for steady bifurcations.
    """
    try:
        lu = spla.splu(sp.csc_matrix(A))
    except RuntimeError:
        return 0
    d = lu.U.diagonal()
    if np.any(d == 0):
        return 0
    sign = -1 if np.count_nonzero(d < 0) % 2 else 1
    return sign * permutation_parity(lu.perm_r) * permutation_parity(lu.perm_c)


def linear_solve(J: sp.spmatrix, rhs: np.ndarray, backend: str = "auto") -> np.ndarray:
    """Solve J x = rhs by sparse direct factorization (relative residual <= 1e-12)."""
    ls = LinearSolver(backend)
    ls.factorize(J)
    return ls.solve(rhs)


# ---------------------------------------------------------------------------
# problems


class DAEProblem(Protocol):
    """F(u, u_dot, t) = 0 in a reduced (constrained) coordinate system."""

    size: int

    def set_boundary(self, u: np.ndarray, t: float) -> None: ...

    def evaluate(self, u, udot, t, sigma, jacobian): ...

    def prolong(self, d: np.ndarray) -> np.ndarray: ...

    def differential(self) -> np.ndarray: ...

    def scales(self) -> np.ndarray: ...


class FlowProblem:
    """Discretized flow equations with a time-dependent Weissenberg number."""

    def __init__(self, disc: Discretization, params: SolverParams,
                 We: Callable[[float], float] | RampSpec | float,
                 force: BodyForce | None = None, *, freeze_s: bool = False):
        self.disc = disc
        self.params = params
        if isinstance(We, (int, float)):
            We = constant_We(float(We))
        self.We = We
        self.force = force
        self.freeze_s = freeze_s
        self.size = disc.layout.size
        self.n_evals = 0
        self.n_jac = 0

    def set_boundary(self, u: np.ndarray, t: float) -> None:
        self.disc.constraints.apply_values(u, self.We(t))

    def evaluate(self, u, udot, t, sigma=0.0, jacobian=True):
        self.n_evals += 1
        self.n_jac += bool(jacobian)
        R, J = self.disc.assemble(u, udot, t, self.We(t), self.params, sigma=sigma,
                                  jacobian=jacobian, force=self.force, freeze_s=self.freeze_s)
        return self.disc.constraints.restrict(R), J

    def prolong(self, d):
        return self.disc.constraints.prolong(d)

    def differential(self) -> np.ndarray:
        return self.disc.layout.differential_mask(self.params.Re)

    def scales(self) -> np.ndarray:
        return np.ones(self.size)

    def state(self, u: np.ndarray, t: float) -> FieldState:
        return FieldState(self.disc.layout, u, t, self.We(t))


# ---------------------------------------------------------------------------
# Newton


@dataclass(frozen=True)
class NewtonConfig:
    damping: str = "constant"  # "constant" or "automatic"
    factor: float = 1.0
    max_iter: int = 25
    rtol: float = 1e-10
    atol: float = 1e-11
    xtol: float = 1e-11
    backend: str = "auto"

    def __post_init__(self):
        if self.damping not in ("constant", "automatic"):
            raise ValueError("damping must be 'constant' or 'automatic'")
        if not 0 < self.factor <= 1:
            raise ValueError("damping factor must lie in (0, 1]")
        if not (self.rtol > 0 and self.atol > 0 and self.xtol > 0) or self.max_iter < 1:
            raise ValueError("tolerances and max_iter must be positive")


@dataclass
class NewtonResult:
    u: np.ndarray
    iterations: int
    history: list  # residual norms, first entry is the initial residual
    converged: bool = True


def _safe_eval(problem, u, udot, t, sigma, jacobian):
    try:
        R, J = problem.evaluate(u, udot, t, sigma, jacobian)
    except AssemblyError:
        return None, None
    if not np.isfinite(R).all():
        return None, None
    return R, J


def newton_solve(problem, u0: np.ndarray, config: NewtonConfig = NewtonConfig(), *,
                 t: float = 0.0, udot: np.ndarray | None = None, sigma: float = 0.0,
                 solver: LinearSolver | None = None) -> NewtonResult:
    """Steady (or fixed-time) Newton iteration on F(u, udot, t) = 0."""
    ls = solver or LinearSolver(config.backend)
    try:
        return _newton_iterate(problem, u0, config, t, udot, sigma, ls)
    finally:
        if solver is None:
            ls.release()


def _newton_iterate(problem, u0, config, t, udot, sigma, ls) -> NewtonResult:
    u = np.array(u0, dtype=float, copy=True)
    problem.set_boundary(u, t)
    ud = np.zeros_like(u) if udot is None else udot
    R, J = _safe_eval(problem, u, ud, t, sigma, True)
    if R is None:
        raise NewtonError("inadmissible initial guess", "initial iterate outside the admissible region")
    r = float(np.linalg.norm(R))
    history = [r]
    ref = r
    for it in range(config.max_iter + 1):
        if r <= config.atol or r <= config.rtol * ref:
            return NewtonResult(u, it, history)
        if it == config.max_iter:
            break
        if J is None:
            _, J = problem.evaluate(u, ud, t, sigma, True)
        try:
            ls.factorize(J)
            d = -ls.solve(R)
        except SingularSystemError as exc:
            raise SingularSystemError(exc.dof, trace=history) from None
        du = problem.prolong(d)
        if config.damping == "constant":
            lam = config.factor
            un = u + lam * du
            Rn, Jn = _safe_eval(problem, un, ud, t, sigma, True)
            if Rn is None:
                raise NewtonError("diverged", "Newton iterate left the admissible region", trace=history)
        else:
            lam = 1.0
            for _ in range(13):
                un = u + lam * du
                Rn, Jn = _safe_eval(problem, un, ud, t, sigma, True)
                if Rn is not None and np.linalg.norm(Rn) < (1 - 1e-4 * lam) * r:
                    break
                lam *= 0.5
            else:
                raise NewtonError("line search failed", trace=history)
        u, R, J = un, Rn, Jn
        r = float(np.linalg.norm(R))
        history.append(r)
        small_step = lam == 1.0 and np.abs(lam * du).max() <= config.xtol * (1 + np.abs(u).max())
        if small_step and r <= 1e-6 * ref + config.atol:
            return NewtonResult(u, it + 1, history)
    raise NewtonError("max iterations", trace=history)


# ---------------------------------------------------------------------------
# time stepping


@dataclass(frozen=True)
class TimeStepperConfig:
    rtol: float = 1e-3
    atol: float = 1e-4
    h_init: float = 1e-3
    h_max: float = math.inf
    h_min_rel: float = 1e-10
    max_order: int = 2
    fixed_step: float | None = None
    newton_max_iter: int = 8
    max_steps: int = 100000
    backend: str = "auto"
    error_on: str = "differential"  # or "all"

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0 and self.h_init > 0 and self.h_max > 0):
            raise ValueError("tolerances and steps must be positive")
        if self.max_order not in (1, 2):
            raise ValueError("max_order must be 1 or 2")
        if self.error_on not in ("differential", "all"):
            raise ValueError("error_on must be 'differential' or 'all'")


@dataclass
class Trajectory:
    times: list = field(default_factory=list)
    We: list = field(default_factory=list)
    observations: list = field(default_factory=list)  # dicts
    log: list = field(default_factory=list)  # dicts
    u: np.ndarray | None = None
    t: float = 0.0
    stats: dict = field(default_factory=dict)

    def series(self, name: str) -> np.ndarray:
        return np.array([o[name] for o in self.observations])

    def log_csv(self) -> str:
        out = io.StringIO()
        if not self.log:
            return ""
        w = csv.DictWriter(out, fieldnames=list(self.log[0].keys()), lineterminator="\n")
        w.writeheader()
        for row in self.log:
            w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in row.items()})
        return out.getvalue()


Observer = Callable[[float, float, np.ndarray], dict]


def _bdf_coeffs(order: int, h: float, h_prev: float):
    if order == 1:
        return 1.0, -1.0, 0.0
    w = h / h_prev
    return (1 + 2 * w) / (1 + w), -(1 + w), w * w / (1 + w)


def transient_solve(problem, u0: np.ndarray, t0: float, t_end: float,
                    config: TimeStepperConfig = TimeStepperConfig(), *,
                    observers: dict[str, Observer] | None = None,
                    h_max: Callable[[float], float] | float | None = None,
                    T_ref: float | None = None, initialize: bool = True,
                    stop: Callable[[float, np.ndarray], bool] | None = None) -> Trajectory:
    """Integrate F(u, u_dot, t) = 0 from t0 to t_end with variable-step BDF1/2.

    The Jacobian is rebuilt and factorized at the start of every step attempt
    (so at least once per accepted step); Newton iterations inside a step reuse it.
    """
    observers = observers or {}
    T_ref = T_ref or max(t_end - t0, 1e-300)
    ls = LinearSolver(config.backend)
    try:
        return _integrate(problem, u0, t0, t_end, config, observers, h_max, T_ref, initialize, stop, ls)
    finally:
        ls.release()


def _integrate(problem, u0, t0, t_end, config, observers, h_max, T_ref, initialize, stop, ls):
    h_floor = config.h_min_rel * T_ref
    diff = problem.differential()
    err_mask = diff if config.error_on == "differential" else np.ones_like(diff)

    def hmax_at(t):
        hm = config.h_max
        if h_max is not None:
            hm = min(hm, h_max(t) if callable(h_max) else h_max)
        return hm

    u = np.array(u0, dtype=float, copy=True)
    t = float(t0)
    problem.set_boundary(u, t)
    if initialize and hasattr(problem, "initialize"):
        u = problem.initialize(u, t)
    traj = Trajectory()

    def observe(step, t, u, h, iters, err, res):
        We = float(problem.We(t)) if hasattr(problem, "We") else float("nan")
        row = {name: float(f(t, We, u)) for name, f in observers.items()}
        traj.times.append(t)
        traj.We.append(We)
        traj.observations.append(row)
        log = {"step": step, "t": float(t), "We": We, "h": float(h), "newton_iters": iters,
               "error_norm": float(err), "residual_norm": float(res)}
        log.update(row)
        traj.log.append(log)

    observe(0, t, u, 0.0, 0, 0.0, 0.0)
    hist = [(t, u.copy())]  # most recent last
    h = config.fixed_step or min(config.h_init, hmax_at(t))
    steps = 0
    rejected = 0
    n_newton = 0
    while t < t_end - 1e-12 * T_ref:
        if steps >= config.max_steps:
            raise SolverError(f"step limit {config.max_steps} reached at t={t:.6g}", state=u)
        if config.fixed_step is None:
            h = min(h, hmax_at(t))
        h = min(h, t_end - t)
        if t_end - (t + h) < 1e-9 * h:
            h = t_end - t
        order = min(config.max_order, len(hist))
        h_prev = hist[-1][0] - hist[-2][0] if len(hist) >= 2 else h
        a0, a1, a2 = _bdf_coeffs(order, h, h_prev)
        t_new = t + h
        un, um = hist[-1][1], (hist[-2][1] if len(hist) >= 2 else None)
        # predictor: polynomial extrapolation through the last accepted points
        if len(hist) >= 3 and order == 2:
            (t2, y2), (t1, y1), (tc, yc) = hist[-3], hist[-2], hist[-1]
            l2 = (t_new - t1) * (t_new - tc) / ((t2 - t1) * (t2 - tc))
            l1 = (t_new - t2) * (t_new - tc) / ((t1 - t2) * (t1 - tc))
            lc = (t_new - t2) * (t_new - t1) / ((tc - t2) * (tc - t1))
            pred = l2 * y2 + l1 * y1 + lc * yc
        elif len(hist) >= 2:
            (t1, y1), (tc, yc) = hist[-2], hist[-1]
            pred = yc + (t_new - tc) / (tc - t1) * (yc - y1)
        else:
            pred = un.copy()
        base = a1 * un + (a2 * um if a2 != 0.0 else 0.0)
        sigma = a0 / h

        def udot_of(y):
            return (a0 * y + base) / h

        y = pred.copy()
        problem.set_boundary(y, t_new)
        ok = True
        iters = 0
        res = float("nan")
        try:
            R, J = problem.evaluate(y, udot_of(y), t_new, sigma, True)
            ls.factorize(J)
            wts = config.atol + config.rtol * np.abs(y)
            prev = None
            for iters in range(1, config.newton_max_iter + 1):
                d = -ls.solve(R, strict=False)
                dy = problem.prolong(d)
                y = y + dy
                nrm = float(np.sqrt(np.mean((dy / wts) ** 2)))
                R, _ = problem.evaluate(y, udot_of(y), t_new, sigma, False)
                res = float(np.linalg.norm(R))
                if not np.isfinite(res):
                    ok = False
                    break
                if prev is not None:
                    rate = nrm / prev if prev > 0 else 0.0
                    if rate > 0.9:
                        ok = False
                        break
                    if nrm * rate / (1 - rate) < 0.05 or nrm < 1e-8:
                        break
                elif nrm < 1e-3:
                    break
                prev = nrm
            else:
                ok = False
        except (AssemblyError, SingularSystemError):
            ok = False
        n_newton += iters
        if not ok:
            rejected += 1
            if config.fixed_step is not None:
                raise SolverError(f"Newton failed with fixed step at t={t_new:.6g}", state=u)
            h *= 0.25
            hist = hist[-1:]
            if h < h_floor:
                raise StepSizeUnderflow(f"step size underflow at t={t:.6g} (h={h:.3g})", state=u)
            continue
        # local error estimate from the predictor-corrector difference
        if len(hist) >= 2:
            if order == 1:
                c = h / (2 * h + h_prev)
            else:
                c = 2.0 / 11.0
            est = c * (y - pred)
            w = config.atol + config.rtol * np.maximum(np.abs(y), np.abs(un))
            err = float(np.sqrt(np.mean((est[err_mask] / w[err_mask]) ** 2))) if err_mask.any() else 0.0
        else:
            err = 0.0
        if config.fixed_step is None and err > 1.0:
            rejected += 1
            h *= max(0.2, 0.9 * err ** (-1.0 / (order + 1)))
            if h < h_floor:
                raise StepSizeUnderflow(f"step size underflow at t={t:.6g} (h={h:.3g})", state=u)
            continue
        steps += 1
        t = t_new
        u = y
        hist.append((t, u.copy()))
        hist = hist[-3:]
        observe(steps, t, u, h, iters, err, res)
        if stop is not None and stop(t, u):
            break
        if config.fixed_step is None:
            fac = 2.0 if err == 0.0 else min(2.0, max(0.2, 0.9 * err ** (-1.0 / (order + 1))))
            h *= fac
    traj.u = u
    traj.t = t
    traj.stats = {"steps": steps, "rejected": rejected, "newton_iterations": n_newton,
                  "factorizations": ls.n_factorizations, "backend": ls.backend}
    return traj


# ---------------------------------------------------------------------------
# consistent initialization and continuation


def algebraic_solve(disc: Discretization, params: SolverParams, u: np.ndarray, t: float, We: float,
                    force: BodyForce | None = None, config: NewtonConfig = NewtonConfig()) -> np.ndarray:
    """Solve for (v, p, G) with s held at its current values."""
    s_hold = u[disc.layout.off_s:].copy()

    class _Held(FlowProblem):
        def evaluate(self, uu, udot, tt, sigma=0.0, jacobian=True):
            self.n_evals += 1
            R, J = self.disc.assemble(uu, udot, tt, self.We(tt), self.params, sigma=sigma,
                                      jacobian=jacobian, force=self.force, freeze_s=True)
            lo = self.disc.layout.off_s
            R[lo:] = uu[lo:] - s_hold
            return self.disc.constraints.restrict(R), J

    prob = _Held(disc, params, We, force)
    res = newton_solve(prob, u, config, t=t)
    out = res.u
    out[disc.layout.off_s:] = s_hold
    return out


class RampedFlow(FlowProblem):
    """FlowProblem whose initial algebraic state is made consistent before stepping."""

    def initialize(self, u, t):
        return algebraic_solve(self.disc, self.params, u, t, self.We(t), self.force)


@dataclass
class ContinuationReport:
    newtonian: NewtonResult
    transient: Trajectory
    steady: NewtonResult


def newtonian_solve(disc: Discretization, params: SolverParams, We: float = 1.0,
                    config: NewtonConfig = NewtonConfig(), force: BodyForce | None = None) -> np.ndarray:
    """Stokes-type solve with s frozen at zero (step 1 of the continuation recipe)."""
    prob = FlowProblem(disc, params, We, force, freeze_s=True)
    u0 = disc.new_state(We).u
    u0[disc.layout.off_s:] = 0.0
    return newton_solve(prob, u0, config).u


def continuation_procedure(disc: Discretization, params: SolverParams, We: float, *,
                           stepper: TimeStepperConfig = TimeStepperConfig(),
                           newton: NewtonConfig = NewtonConfig(damping="automatic"),
                           relaxation_times: float = 10.0,
                           force: BodyForce | None = None) -> tuple[np.ndarray, ContinuationReport]:
    """Newtonian solve, then a transient over 10 We time units, then a steady Newton solve."""
    try:
        prob0 = FlowProblem(disc, params, We, force, freeze_s=True)
        u0 = disc.new_state(We).u
        u0[disc.layout.off_s:] = 0.0
        r1 = newton_solve(prob0, u0, newton)
    except SolverError as exc:
        raise SolverError(str(exc), trace=exc.trace, stage="newtonian solve") from exc
    u1 = r1.u
    disc.constraints.apply_values(u1, We)
    try:
        prob = FlowProblem(disc, params, We, force)
        traj = transient_solve(prob, u1, 0.0, relaxation_times * We, stepper)
    except SolverError as exc:
        raise SolverError(str(exc), trace=exc.trace, stage="transient", state=exc.state) from exc
    try:
        prob = FlowProblem(disc, params, We, force)
        r3 = newton_solve(prob, traj.u, newton, t=traj.t)
    except SolverError as exc:
        raise SolverError(str(exc), trace=exc.trace, stage="steady newton") from exc
    return r3.u, ContinuationReport(r1, traj, r3)
