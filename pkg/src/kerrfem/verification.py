"""Manufactured solutions, exact reference solutions, error norms, and
convergence-order studies.

A manufactured case carries closures for the exact fields and their space
and time derivatives; the current densities are *defined* as the strong-form
residuals, so the chosen fields solve the forced system identically and any
PDE-residual check reduces to verifying the closures against each other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .assembly import AssembledForms, build_forms, curl_project, l2_project
from .dynamics import Sources, State, initialize, integrate
from .material import MaterialParams
from .mesh import build_topology, generate_structured_cube, mesh_size

PI = math.pi


@dataclass(frozen=True)
class ManufacturedCase:
    """Exact solution closures and the sources that make them exact.

    All field closures map ``(t, points (m, 3))`` to ``(m, 3)`` arrays.  The
    electric field satisfies the perfect-conductor condition on the unit
    cube by construction.  ``j_e``/``j_m`` are ``None`` for source-free
    exact solutions.
    """

    name: str
    params: MaterialParams
    t_final: float
    E: object
    H: object
    dt_E: object
    dt_H: object
    curl_E: object
    curl_H: object
    j_e: object = None
    j_m: object = None

    @property
    def sources(self) -> Sources:
        return Sources(j_e=self.j_e, j_m=self.j_m)


def _sin_products(X):
    sx, sy, sz = np.sin(PI * X[:, 0]), np.sin(PI * X[:, 1]), np.sin(PI * X[:, 2])
    return sx, sy, sz


def kerr_manufactured_case(params: MaterialParams, t_final: float = 1.0) -> ManufacturedCase:
    """Smooth forced solution on the unit cube for arbitrary Kerr parameters.

    E(t, x) = cos(t) (sin pi y sin pi z, sin pi x sin pi z, sin pi x sin pi y)
    vanishes tangentially on all six faces; H(t, x) = sin(t)
    (sin pi y, sin pi z, sin pi x) starts at zero, so projection-based
    initial data is exact.  The currents absorb both equations' residuals.
    """

    def E_shape(X):
        sx, sy, sz = _sin_products(X)
        return np.stack([sy * sz, sx * sz, sx * sy], axis=-1)

    def H_shape(X):
        sx, sy, sz = _sin_products(X)
        return np.stack([sy, sz, sx], axis=-1)

    def E(t, X):
        return math.cos(t) * E_shape(np.atleast_2d(X))

    def H(t, X):
        return math.sin(t) * H_shape(np.atleast_2d(X))

    def dt_E(t, X):
        return -math.sin(t) * E_shape(np.atleast_2d(X))

    def dt_H(t, X):
        return math.cos(t) * H_shape(np.atleast_2d(X))

    def curl_E(t, X):
        X = np.atleast_2d(X)
        sx, sy, sz = _sin_products(X)
        cx, cy, cz = np.cos(PI * X[:, 0]), np.cos(PI * X[:, 1]), np.cos(PI * X[:, 2])
        return (
            math.cos(t)
            * PI
            * np.stack([sx * (cy - cz), sy * (cz - cx), sz * (cx - cy)], axis=-1)
        )

    def curl_H(t, X):
        X = np.atleast_2d(X)
        cx, cy, cz = np.cos(PI * X[:, 0]), np.cos(PI * X[:, 1]), np.cos(PI * X[:, 2])
        return -PI * math.sin(t) * np.stack([cz, cx, cy], axis=-1)

    def j_e(t, X):
        X = np.atleast_2d(X)
        Ev = E(t, X)
        dEv = dt_E(t, X)
        es = 1.0 + params.chi1 + params.chi3 * np.sum(Ev * Ev, axis=-1)
        eps_dtE = params.eps0 * (
            es[:, None] * dEv
            + 2.0 * params.chi3 * np.sum(Ev * dEv, axis=-1)[:, None] * Ev
        )
        return curl_H(t, X) - eps_dtE

    def j_m(t, X):
        X = np.atleast_2d(X)
        return -params.mu0 * dt_H(t, X) - curl_E(t, X)

    return ManufacturedCase(
        name="kerr-manufactured",
        params=params,
        t_final=t_final,
        E=E,
        H=H,
        dt_E=dt_E,
        dt_H=dt_H,
        curl_E=curl_E,
        curl_H=curl_H,
        j_e=j_e,
        j_m=j_m,
    )


def cavity_mode_case(t_final: float = 1.0) -> ManufacturedCase:
    """Source-free eigenmode of the linear unit-cube cavity.

    E = (0, 0, sin pi x sin pi y cos omega t) with omega = sqrt(2) pi; the
    matching H solves the source-free system exactly with vacuum parameters
    and satisfies the divergence-free and zero-normal-trace conditions, and
    the total energy is constant (= 1/8) in time.
    """
    params = MaterialParams()
    omega = math.sqrt(2.0) * PI

    def E(t, X):
        X = np.atleast_2d(X)
        sx, sy, _ = _sin_products(X)
        out = np.zeros_like(X)
        out[:, 2] = sx * sy * math.cos(omega * t)
        return out

    def H(t, X):
        X = np.atleast_2d(X)
        sx, sy = np.sin(PI * X[:, 0]), np.sin(PI * X[:, 1])
        cx, cy = np.cos(PI * X[:, 0]), np.cos(PI * X[:, 1])
        amp = (PI / omega) * math.sin(omega * t)
        return amp * np.stack([-sx * cy, cx * sy, np.zeros(len(X))], axis=-1)

    def dt_E(t, X):
        X = np.atleast_2d(X)
        sx, sy, _ = _sin_products(X)
        out = np.zeros_like(X)
        out[:, 2] = -omega * sx * sy * math.sin(omega * t)
        return out

    def dt_H(t, X):
        X = np.atleast_2d(X)
        sx, sy = np.sin(PI * X[:, 0]), np.sin(PI * X[:, 1])
        cx, cy = np.cos(PI * X[:, 0]), np.cos(PI * X[:, 1])
        amp = PI * math.cos(omega * t)
        return amp * np.stack([-sx * cy, cx * sy, np.zeros(len(X))], axis=-1)

    def curl_E(t, X):
        X = np.atleast_2d(X)
        sx, sy = np.sin(PI * X[:, 0]), np.sin(PI * X[:, 1])
        cx, cy = np.cos(PI * X[:, 0]), np.cos(PI * X[:, 1])
        amp = PI * math.cos(omega * t)
        return amp * np.stack([sx * cy, -cx * sy, np.zeros(len(X))], axis=-1)

    def curl_H(t, X):
        X = np.atleast_2d(X)
        sx, sy, _ = _sin_products(X)
        out = np.zeros_like(X)
        out[:, 2] = -omega * math.sin(omega * t) * sx * sy
        return out

    return ManufacturedCase(
        name="cavity",
        params=params,
        t_final=t_final,
        E=E,
        H=H,
        dt_E=dt_E,
        dt_H=dt_H,
        curl_E=curl_E,
        curl_H=curl_H,
    )


def get_case(name: str, params: MaterialParams | None = None,
             t_final: float | None = None) -> ManufacturedCase:
    if name == "cavity":
        return cavity_mode_case(t_final=t_final if t_final is not None else 1.0)
    if name == "kerr-manufactured":
        if params is None:
            params = MaterialParams(chi3=1.0)
        return kerr_manufactured_case(
            params, t_final=t_final if t_final is not None else 1.0
        )
    raise ValueError(f"unknown case {name!r}")


def error_norms(state: State, case: ManufacturedCase,
                forms: AssembledForms) -> tuple[float, float]:
    """Weighted errors (||E_h - E||_eps0, ||H_h - H||_mu0) at state.t."""
    ctx = forms.ctx
    params = forms.params
    flat = ctx.phys_pts.reshape(-1, 3)
    E_exact = np.asarray(case.E(state.t, flat)).reshape(*ctx.phys_pts.shape)
    H_exact = np.asarray(case.H(state.t, flat)).reshape(*ctx.phys_pts.shape)
    if state.formulation == "lee-madsen":
        E_h = ctx.field_at_quads(forms.dof_w, state.e)
        H_h = ctx.field_at_quads(forms.dof_u, state.h)
    else:
        E_h = ctx.field_at_quads(forms.dof_u, state.e)
        H_h = ctx.field_at_quads(forms.dof_v, state.h)
    de = E_h - E_exact
    dh = H_h - H_exact
    err_e = params.eps0 * np.einsum("q,tqd,tqd,t->", ctx.rule.weights, de, de, ctx.det)
    err_h = params.mu0 * np.einsum("q,tqd,tqd,t->", ctx.rule.weights, dh, dh, ctx.det)
    return float(np.sqrt(err_e)), float(np.sqrt(err_h))


@dataclass
class EocTable:
    """Mesh sizes, terminal-time errors, and experimental convergence orders."""

    levels: np.ndarray   # subdivision counts n, doubling
    h: np.ndarray
    err_e: np.ndarray
    err_h: np.ndarray
    eoc_e: np.ndarray    # len(levels) - 1 entries
    eoc_h: np.ndarray
    monotone: bool = True

    def combined_eoc(self) -> np.ndarray:
        total = self.err_e + self.err_h
        return np.log2(total[:-1] / total[1:])

    def rows(self):
        out = []
        for i, n in enumerate(self.levels):
            ee = "" if i == 0 else f"{self.eoc_e[i - 1]:.6f}"
            eh = "" if i == 0 else f"{self.eoc_h[i - 1]:.6f}"
            out.append(
                f"{n},{self.h[i]:.12e},{self.err_e[i]:.12e},"
                f"{self.err_h[i]:.12e},{ee},{eh}"
            )
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("n,h,errE,errH,eocE,eocH\n")
            for row in self.rows():
                fh.write(row + "\n")


def _check_doubling(levels) -> np.ndarray:
    levels = np.asarray(levels, dtype=np.int64)
    if len(levels) < 2:
        raise ValueError("need at least two refinement levels")
    if np.any(levels[1:] != 2 * levels[:-1]):
        raise ValueError(f"levels must double, got {levels.tolist()}")
    return levels


def _make_table(levels, hs, errs_e, errs_h) -> EocTable:
    errs_e = np.asarray(errs_e)
    errs_h = np.asarray(errs_h)
    total = errs_e + errs_h
    return EocTable(
        levels=np.asarray(levels),
        h=np.asarray(hs),
        err_e=errs_e,
        err_h=errs_h,
        eoc_e=np.log2(errs_e[:-1] / errs_e[1:]),
        eoc_h=np.log2(errs_h[:-1] / errs_h[1:]),
        monotone=bool(np.all(total[1:] < total[:-1])),
    )


def run_convergence(case: ManufacturedCase, levels, formulation: str = "lee-madsen",
                    dt_factor: float = 0.08, stepper: str = "midpoint",
                    nonlinear_tol: float = 1e-11, collect_traces: bool = False):
    """Terminal-time error study under mesh halving with dt proportional to
    h^2, so the midpoint's temporal error stays well below the spatial one.

    Returns an EocTable (and the per-level EnergyTraces when requested).
    """
    levels = _check_doubling(levels)
    hs, errs_e, errs_h, traces = [], [], [], []
    T = case.t_final
    for n in levels:
        mesh = generate_structured_cube(int(n))
        topo = build_topology(mesh)
        forms = build_forms(mesh, topo, case.params)
        h = mesh_size(mesh)
        dt_target = dt_factor * h * h
        num_steps = max(1, math.ceil(T / dt_target))
        dt = T / num_steps
        state = initialize(
            lambda X: case.E(0.0, X),
            lambda X: case.H(0.0, X),
            formulation,
            forms,
            H0_curl=lambda X: case.curl_H(0.0, X),
        )
        state, trace = integrate(
            state, dt, num_steps, case.sources, forms,
            stepper=stepper, nonlinear_tol=nonlinear_tol,
            collect=collect_traces,
        )
        ee, eh = error_norms(state, case, forms)
        hs.append(h)
        errs_e.append(ee)
        errs_h.append(eh)
        traces.append(trace)
    table = _make_table(levels, hs, errs_e, errs_h)
    return (table, traces) if collect_traces else table


def projection_study(levels, quad_degree: int = 5) -> EocTable:
    """Rates of the two projection operators on smooth reference fields.

    Column errE holds the cellwise-average projection error of
    sin(pi x) e_1; column errH the curl-matching projection error of the
    divergence-free, tangential-boundary field
    (-sin pi x cos pi y, cos pi x sin pi y, 0).  Both decay like h.
    """
    levels = _check_doubling(levels)

    def w_field(X):
        X = np.atleast_2d(X)
        out = np.zeros_like(X)
        out[:, 0] = np.sin(PI * X[:, 0])
        return out

    def v_field(X):
        X = np.atleast_2d(X)
        sx, sy = np.sin(PI * X[:, 0]), np.sin(PI * X[:, 1])
        cx, cy = np.cos(PI * X[:, 0]), np.cos(PI * X[:, 1])
        return np.stack([-sx * cy, cx * sy, np.zeros(len(X))], axis=-1)

    def v_curl(X):
        X = np.atleast_2d(X)
        sx, sy = np.sin(PI * X[:, 0]), np.sin(PI * X[:, 1])
        out = np.zeros_like(X)
        out[:, 2] = -2.0 * PI * sx * sy
        return out

    hs, errs_w, errs_v = [], [], []
    for n in levels:
        mesh = generate_structured_cube(int(n))
        topo = build_topology(mesh)
        forms = build_forms(mesh, topo, MaterialParams(), quad_degree=quad_degree)
        ctx = forms.ctx
        flat = ctx.phys_pts.reshape(-1, 3)

        wc = l2_project(ctx, w_field)
        w_h = ctx.field_at_quads(forms.dof_w, wc)
        dw = w_h - np.asarray(w_field(flat)).reshape(*ctx.phys_pts.shape)
        err_w = math.sqrt(
            np.einsum("q,tqd,tqd,t->", ctx.rule.weights, dw, dw, ctx.det)
        )

        vc = curl_project(ctx, v_field, v_curl)
        v_h = ctx.field_at_quads(forms.dof_u, vc)
        dv = v_h - np.asarray(v_field(flat)).reshape(*ctx.phys_pts.shape)
        err_v = math.sqrt(
            np.einsum("q,tqd,tqd,t->", ctx.rule.weights, dv, dv, ctx.det)
        )
        hs.append(mesh_size(mesh))
        errs_w.append(err_w)
        errs_v.append(err_v)
    return _make_table(levels, hs, errs_w, errs_v)
