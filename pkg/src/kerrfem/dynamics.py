"""Semi-discrete Maxwell systems in time: right-hand sides, integrators,
and energy monitors.

Two formulations are supported.  ``lee-madsen`` evolves the electric field
as a cellwise-constant vector against the curl of an edge-element magnetic
field; ``nedelec`` evolves a constrained edge-element electric field against
a face-element magnetic field.  In both, a single coupling matrix appears
once plain and once transposed, which is what makes the semi-discrete energy
identity hold exactly in the linear limit.

Time integration is an addition to the semi-discrete setting: the implicit
midpoint rule (applied to the electric *flux*, with the field recovered by
exact constitutive inversion) preserves the quadratic invariants of the
linear subsystem and is second-order accurate; classical RK4 serves as an
independent cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from . import linalg
from .assembly import (
    AssembledForms,
    assemble_flux_load,
    assemble_nonlinear_mass,
    assemble_nonlinear_mass_curl,
    assemble_source,
    curl_project,
    l2_project,
)
from .fem_spaces import (
    SpaceKind,
    interpolate_edge_dofs,
    interpolate_face_dofs,
)
from .material import d_of_e, e_of_d

FORMULATIONS = ("lee-madsen", "nedelec")


class NonlinearSolveError(Exception):
    """The implicit midpoint iteration failed to converge (try a smaller dt)."""


@dataclass
class State:
    """Coefficient vectors of (E_h, H_h) at time t for one formulation."""

    formulation: str
    e: np.ndarray
    h: np.ndarray
    t: float

    def copy(self) -> "State":
        return State(self.formulation, self.e.copy(), self.h.copy(), self.t)


@dataclass(frozen=True)
class Sources:
    """Time-dependent current densities; ``None`` entries mean zero."""

    j_e: object = None  # callable (t, points (m,3)) -> (m,3)
    j_m: object = None

    @property
    def is_zero(self) -> bool:
        return self.j_e is None and self.j_m is None


ZERO_SOURCES = Sources()


@dataclass
class EnergyTrace:
    """Per-step energy samples of one run.

    ``power[n]`` is the source work rate (J_e, E_h) + (J_m, H_h) evaluated at
    the midpoint of step n; ``source_sq[n]`` the weighted squared source norm
    at sample time n (both zero for source-free runs).  ``e_linf`` tracks the
    max-norm of E_h, reported because the error theory assumes it bounded.
    """

    times: list = dataclass_field(default_factory=list)
    energy: list = dataclass_field(default_factory=list)
    power: list = dataclass_field(default_factory=list)
    source_sq: list = dataclass_field(default_factory=list)
    e_linf: list = dataclass_field(default_factory=list)

    def arrays(self):
        return (
            np.asarray(self.times),
            np.asarray(self.energy),
            np.asarray(self.power),
            np.asarray(self.source_sq),
        )


def _validate_formulation(formulation: str) -> None:
    if formulation not in FORMULATIONS:
        raise ValueError(f"formulation must be one of {FORMULATIONS}, got {formulation!r}")


def initialize(E0, H0, formulation: str, forms: AssembledForms,
               H0_curl=None, t: float = 0.0) -> State:
    """Discrete initial data.

    lee-madsen: E -> cellwise averages, H -> curl-matching projection (pass
    ``H0_curl`` whenever it is known; it defaults to zero, which is exact for
    the zero field).  These choices make the initial-data terms of the error
    bound vanish.  nedelec: tangential edge interpolation of E (boundary
    dofs zeroed) and face-flux interpolation of H.
    """
    _validate_formulation(formulation)
    ctx = forms.ctx
    if formulation == "lee-madsen":
        e = l2_project(ctx, E0)
        if H0_curl is None:
            h = np.zeros(forms.dof_u.num_dofs)
            probe = np.linalg.norm(np.asarray(H0(ctx.phys_pts.reshape(-1, 3))))
            if probe > 0.0:
                raise ValueError("H0_curl is required for nonzero H0 initial data")
        else:
            h = curl_project(ctx, H0, H0_curl)
        return State(formulation, e, h, t)
    e = interpolate_edge_dofs(E0, ctx.mesh, ctx.topo)
    e[forms.dof_u0.constrained] = 0.0
    h = interpolate_face_dofs(H0, ctx.mesh, ctx.topo)
    return State(formulation, e, h, t)


def _loads(forms: AssembledForms, formulation: str, sources: Sources, t: float):
    """Source load vectors (j_e, j_m) against the formulation's test spaces."""
    ctx = forms.ctx
    if formulation == "lee-madsen":
        je = (
            assemble_source(ctx, sources.j_e, SpaceKind.DISCONTINUOUS_VECTOR,
                            forms.dof_w, time=t)
            if sources.j_e is not None else np.zeros(forms.dof_w.num_dofs)
        )
        jm = (
            assemble_source(ctx, sources.j_m, SpaceKind.NEDELEC_EDGE,
                            forms.dof_u, time=t)
            if sources.j_m is not None else np.zeros(forms.dof_u.num_dofs)
        )
    else:
        je = (
            assemble_source(ctx, sources.j_e, SpaceKind.NEDELEC_EDGE,
                            forms.dof_u, time=t)
            if sources.j_e is not None else np.zeros(forms.dof_u.num_dofs)
        )
        jm = (
            assemble_source(ctx, sources.j_m, SpaceKind.RAVIART_THOMAS_FACE,
                            forms.dof_v, time=t)
            if sources.j_m is not None else np.zeros(forms.dof_v.num_dofs)
        )
    return je, jm


def rhs(state: State, sources: Sources, forms: AssembledForms,
        cg_tol: float = 1e-11):
    """Time derivatives (de/dt, dh/dt) of the semi-discrete system."""
    _validate_formulation(state.formulation)
    params = forms.params
    je, jm = _loads(forms, state.formulation, sources, state.t)
    if state.formulation == "lee-madsen":
        meps = assemble_nonlinear_mass(forms.ctx, params, state.e)
        de = meps.solve(forms.coupling_lm @ state.h - je)
        dh = linalg.cg_solve(
            forms.mass_u, -(forms.coupling_lm.T @ state.e) - jm, rel_tol=cg_tol
        )
        return de, dh
    free = forms.dof_u0.free
    meps_full = assemble_nonlinear_mass_curl(forms.ctx, params, forms.dof_u, state.e)
    meps = linalg.from_csr(meps_full.csr[np.ix_(free, free)])
    rhs_e = (forms.coupling_ned.T @ state.h) - je[free]
    de = np.zeros_like(state.e)
    de[free] = linalg.cg_solve(meps, rhs_e, rel_tol=cg_tol)
    dh = forms.discrete_curl @ state.e
    if sources.j_m is not None:
        dh = dh + linalg.cg_solve(forms.mass_v1, jm, rel_tol=cg_tol)
    return de, -dh / params.mu0


def _picard_exit(delta: float, prev_delta: float, scale: float, tol: float,
                 iteration: int, cap: int) -> bool:
    if not np.isfinite(delta):
        raise NonlinearSolveError(
            "midpoint iteration diverged (non-finite update); reduce dt"
        )
    if delta <= 1e-15 * scale:
        return True
    if iteration > 0 and delta >= prev_delta and delta <= tol * scale:
        return True
    if iteration == cap - 1:
        if delta <= tol * scale:
            return True
        raise NonlinearSolveError(
            f"midpoint iteration stalled at relative update {delta / scale:.3e} "
            f"after {cap} sweeps; reduce dt"
        )
    return False


def _step_midpoint_lee_madsen(state: State, dt: float, sources: Sources,
                              forms: AssembledForms, tol: float, cap: int):
    params = forms.params
    ctx = forms.ctx
    nt = ctx.num_tets
    tm = state.t + 0.5 * dt
    je, jm = _loads(forms, "lee-madsen", sources, tm)
    solve_u = forms.mass_solver("U")
    C = forms.coupling_lm
    e0, h0 = state.e, state.h
    d0 = d_of_e(params, e0.reshape(nt, 3))
    e1, h1 = e0.copy(), h0.copy()
    prev = math.inf
    with np.errstate(over="ignore", invalid="ignore"):
        for it in range(cap):
            em = 0.5 * (e0 + e1)
            h1_new = h0 + dt * solve_u(-(C.T @ em) - jm)
            hm = 0.5 * (h0 + h1_new)
            d1 = d0 + (dt / ctx.vol[:, None]) * (C @ hm - je).reshape(nt, 3)
            e1_new = e_of_d(params, d1).ravel()
            delta = max(
                np.linalg.norm(e1_new - e1), np.linalg.norm(h1_new - h1)
            )
            scale = max(np.linalg.norm(e1_new), np.linalg.norm(h1_new), 1.0)
            e1, h1 = e1_new, h1_new
            if _picard_exit(delta, prev, scale, tol, it, cap):
                break
            prev = delta
    return State("lee-madsen", e1, h1, state.t + dt), je, jm


def _step_midpoint_nedelec(state: State, dt: float, sources: Sources,
                           forms: AssembledForms, tol: float, cap: int):
    params = forms.params
    ctx = forms.ctx
    free = forms.dof_u0.free
    tm = state.t + 0.5 * dt
    je, jm = _loads(forms, "nedelec", sources, tm)
    K = forms.coupling_ned
    e0, h0 = state.e, state.h
    jm_term = (
        forms.mass_solver("V1")(jm) if sources.j_m is not None
        else np.zeros(forms.dof_v.num_dofs)
    )
    linear = params.chi3 == 0.0
    if linear:
        if "eps_lin_u0" not in forms._solvers:
            forms._solvers["eps_lin_u0"] = linalg.factorized(forms.linear_eps_mass_u0())
        solve_eps = forms._solvers["eps_lin_u0"]
    d0_free = (
        params.eps_lin * (forms.mass_u1 @ e0)[free] if linear
        else assemble_flux_load(ctx, params, forms.dof_u, e0)[free]
    )
    e1, h1 = e0.copy(), h0.copy()
    prev = math.inf
    for it in range(cap):
        em = 0.5 * (e0 + e1)
        h1_new = h0 - (dt / params.mu0) * (forms.discrete_curl @ em + jm_term)
        hm = 0.5 * (h0 + h1_new)
        target = d0_free + dt * ((K.T @ hm) - je[free])
        e1_new = e1.copy()
        if linear:
            e1_new[free] = solve_eps(target)
        else:
            x = e1[free].copy()
            full = e1.copy()
            res_scale = max(np.linalg.norm(target), 1.0)
            for _ in range(30):
                R = assemble_flux_load(ctx, params, forms.dof_u, full)[free] - target
                if np.linalg.norm(R) <= 1e-13 * res_scale:
                    break
                jac_full = assemble_nonlinear_mass_curl(ctx, params, forms.dof_u, full)
                jac = linalg.from_csr(jac_full.csr[np.ix_(free, free)])
                x = x - linalg.factorized(jac)(R)
                full[free] = x
            else:
                raise NonlinearSolveError("flux-form Newton solve did not converge")
            e1_new = full
        delta = max(np.linalg.norm(e1_new - e1), np.linalg.norm(h1_new - h1))
        scale = max(np.linalg.norm(e1_new), np.linalg.norm(h1_new), 1.0)
        e1, h1 = e1_new, h1_new
        if _picard_exit(delta, prev, scale, tol, it, cap):
            break
        prev = delta
    return State("nedelec", e1, h1, state.t + dt), je, jm


def step_midpoint(state: State, dt: float, sources: Sources, forms: AssembledForms,
                  nonlinear_tol: float = 1e-11, max_iter: int = 50) -> State:
    """One implicit-midpoint step on the flux form; second order in dt."""
    if dt <= 0.0:
        raise ValueError(f"dt must be > 0, got {dt}")
    if state.formulation == "lee-madsen":
        new, _, _ = _step_midpoint_lee_madsen(
            state, dt, sources, forms, nonlinear_tol, max_iter
        )
    else:
        _validate_formulation(state.formulation)
        new, _, _ = _step_midpoint_nedelec(
            state, dt, sources, forms, nonlinear_tol, max_iter
        )
    return new


def step_rk4(state: State, dt: float, sources: Sources, forms: AssembledForms,
             cg_tol: float = 1e-11) -> State:
    """Classical explicit 4-stage step on :func:`rhs`.

    Stability requires dt below roughly 0.5 h sqrt(eps0 mu0); this is the
    caller's responsibility.
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be > 0, got {dt}")

    def f(e, h, t):
        return rhs(State(state.formulation, e, h, t), sources, forms, cg_tol=cg_tol)

    e, h, t = state.e, state.h, state.t
    k1e, k1h = f(e, h, t)
    k2e, k2h = f(e + 0.5 * dt * k1e, h + 0.5 * dt * k1h, t + 0.5 * dt)
    k3e, k3h = f(e + 0.5 * dt * k2e, h + 0.5 * dt * k2h, t + 0.5 * dt)
    k4e, k4h = f(e + dt * k3e, h + dt * k3h, t + dt)
    return State(
        state.formulation,
        e + dt / 6.0 * (k1e + 2 * k2e + 2 * k3e + k4e),
        h + dt / 6.0 * (k1h + 2 * k2h + 2 * k3h + k4h),
        t + dt,
    )


def total_energy(state: State, forms: AssembledForms) -> float:
    """Nonlinear electromagnetic energy W of the current state.

    W = 0.5 [ ||E||^2_{eps0(1+chi1)} + 1.5 || |E|^2 ||^2_{eps0 chi3}
    + ||H||^2_{mu0} ]; cellwise closed form in the lee-madsen case, exact
    quadrature otherwise.
    """
    params = forms.params
    ctx = forms.ctx
    if state.formulation == "lee-madsen":
        E = state.e.reshape(ctx.num_tets, 3)
        e2 = np.sum(E * E, axis=1)
        we = np.sum(ctx.vol * (0.5 * params.eps_lin * e2
                               + 0.75 * params.eps0 * params.chi3 * e2 * e2))
        wh = 0.5 * float(state.h @ (forms.mass_u @ state.h))
        return float(we + wh)
    E = ctx.field_at_quads(forms.dof_u, state.e)
    e2 = np.einsum("tqd,tqd->tq", E, E)
    dens_e = 0.5 * params.eps_lin * e2 + 0.75 * params.eps0 * params.chi3 * e2 * e2
    we = float(np.einsum("q,tq,t->", ctx.rule.weights, dens_e, ctx.det))
    wh = 0.5 * float(state.h @ (forms.mass_v @ state.h))
    return we + wh


def e_max_norm(state: State, forms: AssembledForms) -> float:
    """Max pointwise |E_h| (sampled at quadrature points for edge fields)."""
    ctx = forms.ctx
    if state.formulation == "lee-madsen":
        E = state.e.reshape(ctx.num_tets, 3)
        return float(np.max(np.linalg.norm(E, axis=1))) if E.size else 0.0
    E = ctx.field_at_quads(forms.dof_u, state.e)
    return float(np.sqrt(np.max(np.einsum("tqd,tqd->tq", E, E))))


def discrete_divergence(state: State, forms: AssembledForms) -> np.ndarray:
    """Cellwise divergence of the face-element magnetic field (nedelec)."""
    if state.formulation != "nedelec":
        raise ValueError("divergence monitor applies to the nedelec formulation")
    dof = forms.dof_v
    ctx = forms.ctx
    local = state.h[dof.cell_dofs] * dof.cell_signs
    return np.einsum("ti,ti->t", local, ctx.face_divs)


def source_norm_sq(forms: AssembledForms, sources: Sources, t: float) -> float:
    """||J_e||^2 weighted by 1/(eps0(1+chi1)) plus ||J_m||^2 weighted by 1/mu0."""
    if sources.is_zero:
        return 0.0
    ctx = forms.ctx
    params = forms.params
    total = 0.0
    flat = ctx.phys_pts.reshape(-1, 3)
    if sources.j_e is not None:
        v = np.asarray(sources.j_e(t, flat)).reshape(*ctx.phys_pts.shape)
        sq = np.einsum("tqd,tqd->tq", v, v)
        total += float(np.einsum("q,tq,t->", ctx.rule.weights, sq, ctx.det)) / params.eps_lin
    if sources.j_m is not None:
        v = np.asarray(sources.j_m(t, flat)).reshape(*ctx.phys_pts.shape)
        sq = np.einsum("tqd,tqd->tq", v, v)
        total += float(np.einsum("q,tq,t->", ctx.rule.weights, sq, ctx.det)) / params.mu0
    return total


def integrate(state: State, dt: float, num_steps: int, sources: Sources,
              forms: AssembledForms, stepper: str = "midpoint",
              nonlinear_tol: float = 1e-11, cg_tol: float = 1e-11,
              collect: bool = True):
    """March ``num_steps`` steps, optionally recording an EnergyTrace."""
    if stepper not in ("midpoint", "rk4"):
        raise ValueError(f"stepper must be 'midpoint' or 'rk4', got {stepper!r}")
    trace = EnergyTrace() if collect else None
    if collect:
        trace.times.append(state.t)
        trace.energy.append(total_energy(state, forms))
        trace.source_sq.append(source_norm_sq(forms, sources, state.t))
        trace.e_linf.append(e_max_norm(state, forms))
    current = state
    for _ in range(num_steps):
        tm = current.t + 0.5 * dt
        if stepper == "midpoint":
            if current.formulation == "lee-madsen":
                new, je, jm = _step_midpoint_lee_madsen(
                    current, dt, sources, forms, nonlinear_tol, 50
                )
            else:
                new, je, jm = _step_midpoint_nedelec(
                    current, dt, sources, forms, nonlinear_tol, 50
                )
        else:
            new = step_rk4(current, dt, sources, forms, cg_tol=cg_tol)
            je, jm = (
                _loads(forms, current.formulation, sources, tm)
                if collect and not sources.is_zero else (None, None)
            )
        if collect:
            if sources.is_zero:
                power = 0.0
            else:
                e_mid = 0.5 * (current.e + new.e)
                h_mid = 0.5 * (current.h + new.h)
                power = float(je @ e_mid + jm @ h_mid)
            trace.times.append(new.t)
            trace.energy.append(total_energy(new, forms))
            trace.power.append(power)
            trace.source_sq.append(source_norm_sq(forms, sources, new.t))
            trace.e_linf.append(e_max_norm(new, forms))
        current = new
    return current, trace


def energy_law_residual(trace: EnergyTrace) -> np.ndarray:
    """Residuals r_n = [W(t_{n+1}) - W(t_n)]/dt + (J_e, E) + (J_m, H).

    The continuous-time system satisfies dW/dt = -(J_e, E) - (J_m, H), so
    r_n measures the time-discretization error and decays like dt^2 under
    refinement.  Requires a uniformly sampled trace.
    """
    t, w, p, _ = trace.arrays()
    if len(t) < 2:
        return np.zeros(0)
    dt = np.diff(t)
    if not np.allclose(dt, dt[0], rtol=1e-10, atol=1e-14):
        raise ValueError("energy-law residual requires uniform time samples")
    return np.diff(w) / dt + p


def stability_bound_check(trace: EnergyTrace):
    """Ratios W(t) / [2 W(0) + t * cumulative weighted source norm].

    Returns (ratios, violated) where violated flags any ratio above 1 (a
    tiny roundoff allowance is applied when the bound is exactly 2 W(0)).
    """
    t, w, _, ssq = trace.arrays()
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (ssq[1:] + ssq[:-1]) * np.diff(t))])
    bound = 2.0 * w[0] + t * cum
    ratios = np.empty_like(w)
    for i in range(len(w)):
        if bound[i] > 0.0:
            ratios[i] = w[i] / bound[i]
        else:
            ratios[i] = 0.0 if w[i] <= 1e-30 else np.inf
    return ratios, bool(np.any(ratios > 1.0 + 1e-9))
