"""Solution drivers shared by the command line and the benchmarks."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .fem import BodyForce, Discretization, FieldState, SolverParams
from .config import eval_number
from .solver import FlowProblem, NewtonConfig, SolverError, newton_solve

log = logging.getLogger(__name__)


@dataclass
class ContinuationPoint:
    We: float
    u: np.ndarray
    iterations: int
    amplitude: float = 0.0


@dataclass
class Branch:
    points: list = field(default_factory=list)

    def at(self, We: float, tol: float = 1e-12) -> ContinuationPoint:
        for p in self.points:
            if abs(p.We - We) <= tol:
                return p
        raise KeyError(We)

    @property
    def last(self) -> ContinuationPoint:
        return self.points[-1]


def newtonian_start(disc: Discretization, params: SolverParams, We: float,
                    force: BodyForce | None = None, newton: NewtonConfig = NewtonConfig()) -> np.ndarray:
    """Stokes-like solution with s frozen at zero (inlet values kept) as an initial guess."""
    u0 = disc.new_state(We).u
    u0[disc.layout.off_s:] = 0.0
    prob = FlowProblem(disc, params, We, force, freeze_s=True)
    u = newton_solve(prob, u0, newton).u
    disc.constraints.apply_values(u, We)
    return u


def steady_solve(disc: Discretization, params: SolverParams, We: float, u0: np.ndarray, *,
                 force: BodyForce | None = None,
                 newton: NewtonConfig = NewtonConfig(damping="automatic")):
    prob = FlowProblem(disc, params, We, force)
    return newton_solve(prob, u0, newton)


def continuation(disc: Discretization, params: SolverParams, targets, *, u0: np.ndarray | None = None,
                 force_of: Callable[[float], BodyForce | None] | None = None,
                 newton: NewtonConfig = NewtonConfig(damping="automatic", max_iter=15),
                 min_step: float = 1e-3, on_point=None) -> Branch:
    """Natural-parameter continuation in We through the sorted ``targets``.

    A secant predictor is used once two points are known; a failed Newton solve
    halves the step from the last converged point.
    """
    targets = [float(x) for x in targets]
    if not targets:
        return Branch()
    force_of = force_of or (lambda We: None)
    if u0 is None:
        u0 = newtonian_start(disc, params, targets[0], force_of(targets[0]))
    branch = Branch()
    prev = None  # (We, u) before the current
    cur_We, cur_u = None, np.array(u0, dtype=float)
    for target in targets:
        goal = target
        while True:
            if cur_We is None:
                trial_We = goal
                guess = cur_u
            else:
                trial_We = goal
                guess = cur_u
                if prev is not None and prev[0] != cur_We:
                    w = (trial_We - cur_We) / (cur_We - prev[0])
                    guess = cur_u + w * (cur_u - prev[1])
            try:
                r = steady_solve(disc, params, trial_We, guess, force=force_of(trial_We), newton=newton)
            except SolverError as exc:
                base = cur_We if cur_We is not None else 0.0
                step = trial_We - base
                log.info("continuation failed at We=%.6g (%s, residuals %s); halving step",
                         trial_We, exc, exc.trace)
                if cur_We is None or abs(step) / 2 < min_step:
                    raise SolverError(f"continuation stalled at We={trial_We:.6g}: {exc}",
                                      stage="continuation") from exc
                goal = base + step / 2
                continue
            prev = (cur_We, cur_u) if cur_We is not None else None
            cur_We, cur_u = trial_We, r.u
            if abs(trial_We - target) <= 1e-14:
                pt = ContinuationPoint(trial_We, r.u, r.iterations)
                branch.points.append(pt)
                if on_point is not None:
                    on_point(pt)
                break
            goal = target
    return branch


def amplitude_continuation(disc: Discretization, params: SolverParams, We: float, u0: np.ndarray,
                           force_of_amp: Callable[[float], BodyForce | None], amplitudes, *,
                           newton: NewtonConfig = NewtonConfig(damping="automatic", max_iter=15)) -> list:
    """Continue a steady solution in the amplitude of a body force (ending at the last entry)."""
    out = []
    u = u0
    for a in amplitudes:
        r = steady_solve(disc, params, We, u, force=force_of_amp(a), newton=newton)
        u = r.u
        out.append(ContinuationPoint(We, u, r.iterations, a))
    return out


def state_of(disc: Discretization, u: np.ndarray, We: float, t: float = 0.0) -> FieldState:
    return FieldState(disc.layout, np.asarray(u), t, We)


# ---------------------------------------------------------------------------
# configuration-driven runs


def params_of(cfg) -> SolverParams:
    return SolverParams(Re=cfg["model.Re"], beta=cfg["model.beta"], model=cfg.model(),
                        supg_coeff=cfg["model.supg_coeff"])


def build_case(cfg, mesh_text: str | None = None):
    """Case for a RunConfig; ``file:<path>`` geometries read the mesh from disk."""
    from . import cases
    from .kernel import ModelKind
    from .mesh import load_mesh

    g = cfg.geometry
    h = cfg.h
    model = cfg.model()
    if g == "cylinder":
        c = cases.cylinder_case(h, cfg["model.beta"], cfg["geometry.L_up"], cfg["geometry.L_down"],
                                model=model, Re=cfg["model.Re"])
    elif g == "channel":
        c = cases.channel_case(h, cfg["geometry.length"], cfg["geometry.half_width"],
                               cfg["model.beta"], model=model)
    elif g == "crossslot":
        c = cases.crossslot_case(h, cfg["geometry.L_arm"], cfg["model.beta"], cfg["model.a_max_sq"])
    elif g == "trislot":
        c = cases.trislot_case(h, cfg["geometry.theta"], cfg["geometry.L_in"], cfg["geometry.L_out"],
                               cfg["model.beta"], cfg["model.a_max_sq"])
    else:
        path = g[len("file:"):]
        if mesh_text is None:
            with open(path, encoding="utf-8") as fh:
                mesh_text = fh.read()
        c = cases.file_case(load_mesh(mesh_text), SolverParams(beta=cfg["model.beta"], model=model))
    c.params = params_of(cfg)
    if g in ("crossslot", "trislot") and model.kind != ModelKind.FENE_CR:
        log.info("%s preset model overridden by %s", g, model.kind.value)
    return c


def make_observers(names, case, disc: Discretization) -> dict:
    from . import cases

    beta = case.params.beta
    region = case.region or "square"

    def wrap(f):
        return lambda t, We, u: f(state_of(disc, u, We, t))

    table = {
        "drag": lambda st: cases.drag(disc, st, beta),
        "dissipation": lambda st: cases.dissipation(disc, st, beta),
        "asym_sq": lambda st: cases.vorticity_asymmetry(disc, st, region),
        "vorticity": lambda st: cases.vorticity_integral(disc, st, region),
        "trace_max": lambda st: cases.max_trace(disc, st),
        "flux_balance": lambda st: cases.flux_balance(disc, st)[0],
    }
    return {n: wrap(table[n]) for n in names}


@dataclass
class RunOutcome:
    case: object
    disc: Discretization
    rows: list  # dicts, one per logged step or continuation point
    u: np.ndarray
    We: float
    t: float
    stats: dict = field(default_factory=dict)

    def csv_text(self) -> str:
        import csv
        import io

        out = io.StringIO()
        if not self.rows:
            return ""
        w = csv.DictWriter(out, fieldnames=list(self.rows[0].keys()), lineterminator="\n")
        w.writeheader()
        for row in self.rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in row.items()})
        return out.getvalue()


def _stage(name: str, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except SolverError as exc:
        if exc.stage:
            raise
        raise SolverError(str(exc), trace=exc.trace, stage=name, state=exc.state) from exc


def _perturb(disc: Discretization, u: np.ndarray, amount: float, seed: int) -> np.ndarray:
    if amount == 0.0:
        return u
    u = u.copy()
    rng = np.random.default_rng(seed)
    lo = disc.layout.off_s
    free = ~disc.constraints.fixed[lo:]
    u[lo:][free] += amount * rng.standard_normal(int(free.sum()))
    return u


def execute(cfg, *, u0: np.ndarray | None = None, case=None, disc: Discretization | None = None) -> RunOutcome:
    """Carry out one configured run (transient, steady or continuation)."""
    from .cases import force_field
    from .solver import (RampSpec, TimeStepperConfig, continuation_procedure, transient_solve)

    if case is None:
        case = build_case(cfg)
    else:
        case.params = params_of(cfg)
    disc = disc or case.discretize()
    params = case.params
    newton = NewtonConfig(damping=cfg["newton.damping"], factor=cfg["newton.factor"],
                          max_iter=cfg["newton.max_iter"], backend=cfg["run.backend"])
    fkind = cfg["force.kind"]
    force = None
    if fkind != "none":
        force = force_field(fkind, RampSpec(1.0, 1.0, 0.0, cfg["force.t_end"]), cfg["force.amplitude"])
    observers = make_observers(cfg.observers(), case, disc)
    mode = cfg["run.mode"]
    seed, pert = cfg["run.seed"], cfg["run.perturbation"]

    if mode == "transient":
        We0, We1 = cfg["ramp.We_start"], cfg["ramp.We_end"]
        t0 = cfg["ramp.t_start"]
        ramp = RampSpec(We0, We1, t0, t0 + cfg.T_step())
        if u0 is None:
            u0 = _stage("newtonian solve", newtonian_start, disc, params, We0, force, newton)
        u0 = _perturb(disc, u0, pert, seed)
        hmax = cfg["stepper.h_max"]
        stepper = TimeStepperConfig(rtol=cfg["stepper.rtol"], atol=cfg["stepper.atol"],
                                    h_init=cfg["stepper.h_init"],
                                    h_max=math.inf if hmax == "auto" else float(eval_number(hmax)),
                                    max_order=cfg["stepper.max_order"], backend=cfg["run.backend"])
        prob = FlowProblem(disc, params, ramp, force)
        tr = _stage("transient", transient_solve, prob, u0, 0.0, cfg.t_final(), stepper,
                    observers=observers)
        return RunOutcome(case, disc, tr.log, tr.u, float(prob.We(tr.t)), tr.t, dict(tr.stats))

    rows = []
    if mode == "steady":
        We = cfg["ramp.We_end"]
        if u0 is None:
            u, rep = _stage("steady", continuation_procedure, disc, params, We, newton=newton, force=force)
            iters = rep.steady.iterations
        else:
            r = _stage("steady newton", steady_solve, disc, params, We, _perturb(disc, u0, pert, seed),
                       force=force, newton=newton)
            u, iters = r.u, r.iterations
        row = {"We": We, "newton_iters": iters}
        row.update({k: f(0.0, We, u) for k, f in observers.items()})
        return RunOutcome(case, disc, [row], u, We, 0.0, {"points": 1})

    targets = cfg.We_values()

    def on_point(p):
        row = {"We": p.We, "newton_iters": p.iterations}
        row.update({k: f(0.0, p.We, p.u) for k, f in observers.items()})
        rows.append(row)

    if u0 is not None:
        u0 = _perturb(disc, u0, pert, seed)
    br = _stage("continuation", continuation, disc, params, targets, u0=u0,
                force_of=lambda We: force, newton=newton, on_point=on_point)
    return RunOutcome(case, disc, rows, br.last.u, br.last.We, 0.0, {"points": len(br.points)})
