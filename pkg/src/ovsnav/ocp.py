"""Gauss-Newton SQP solver for discrete-time optimal control problems.

Transcription is direct multiple shooting: the decision variables are all
N+1 knot states and N inputs, tied together by one-step integrator defect
constraints and a pinned initial state.  Each SQP iteration linearizes the
dynamics, builds a Gauss-Newton quadratic model of the cost and solves the
resulting equality-constrained QP with a Riccati sweep.  Input box bounds
are handled by an active-set loop on the QP; globalization is a
backtracking Armijo line search on an exact l1 penalty of the defects.

The recorded iteration history holds that penalized cost (cost plus the
weighted l1 defect norm); once the defects are closed it coincides with
the plain cost.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Protocol

import numpy as np

from .dynamics import state_difference


class CostModel(Protocol):
    def value(self, states: np.ndarray, inputs: np.ndarray) -> float: ...

    def quadratics(self, states: np.ndarray, inputs: np.ndarray):
        """Return (W, q, Ru, ru): GN Hessians and gradients per knot.

        W: (N+1, n, n), q: (N+1, n) including the terminal knot;
        Ru: (N, m, m), ru: (N, m).
        """
        ...


class DynModel(Protocol):
    def step(self, x: np.ndarray, u: np.ndarray) -> np.ndarray: ...

    def linearize(self, x: np.ndarray, u: np.ndarray): ...


@dataclass
class OcpResult:
    states: np.ndarray
    inputs: np.ndarray
    converged: bool
    iterations: int
    kkt_residual: float
    max_defect: float
    cost: float
    merit_history: list = field(default_factory=list)
    multipliers: Optional[np.ndarray] = None
    status: str = ""


def _defects(dyn: DynModel, x_init, states, inputs):
    pred = dyn.step(states[:-1], inputs)
    c = state_difference(pred, states[1:])
    c0 = state_difference(x_init, states[0])
    return c0, c


def _riccati(a, b, w, q, ru_mat, ru_vec, c0, c, fix_lo, fix_hi, du_lo, du_hi):
    """Solve the LQR subproblem with some input components held fixed.

    Returns (dx, du, lam) plus per-stage (Quu, Qux, Qu) for multiplier checks.
    """
    n_u = ru_vec.shape[1]
    n_x = q.shape[1]
    horizon = ru_vec.shape[0]

    v_mat = w[-1].copy()
    v_vec = q[-1].copy()
    gains_k = np.empty((horizon, n_u))
    gains_kx = np.empty((horizon, n_u, n_x))
    quu_all = np.empty((horizon, n_u, n_u))
    qux_all = np.empty((horizon, n_u, n_x))
    qu_all = np.empty((horizon, n_u))
    v_mats = np.empty((horizon + 1, n_x, n_x))
    v_vecs = np.empty((horizon + 1, n_x))
    v_mats[-1] = v_mat
    v_vecs[-1] = v_vec

    for k in range(horizon - 1, -1, -1):
        m_vec = v_vec + v_mat @ c[k]
        qx = q[k] + a[k].T @ m_vec
        qu = ru_vec[k] + b[k].T @ m_vec
        qxx = w[k] + a[k].T @ v_mat @ a[k]
        quu = ru_mat[k] + b[k].T @ v_mat @ b[k]
        qux = b[k].T @ v_mat @ a[k]

        fixed = fix_lo[k] | fix_hi[k]
        kvec = np.empty(n_u)
        kmat = np.zeros((n_u, n_x))
        d_fix = np.where(fix_lo[k], du_lo[k], 0.0) + np.where(fix_hi[k], du_hi[k], 0.0)
        if fixed.all():
            kvec[:] = d_fix
        else:
            free = ~fixed
            quu_ff = quu[np.ix_(free, free)]
            rhs_vec = qu[free] + quu[np.ix_(free, fixed)] @ d_fix[fixed]
            rhs = np.concatenate([rhs_vec[:, None], qux[free]], axis=1)
            for reg in (0.0, 1e-10, 1e-8, 1e-6):
                try:
                    sol = np.linalg.solve(quu_ff + reg * np.eye(free.sum()), rhs)
                    break
                except np.linalg.LinAlgError:
                    continue
            kvec[free] = -sol[:, 0]
            kmat[free] = -sol[:, 1:]
            kvec[fixed] = d_fix[fixed]

        quu_all[k] = quu
        qux_all[k] = qux
        qu_all[k] = qu
        gains_k[k] = kvec
        gains_kx[k] = kmat

        kq = kmat.T @ quu
        v_mat = qxx + kq @ kmat + kmat.T @ qux + qux.T @ kmat
        v_mat = 0.5 * (v_mat + v_mat.T)
        v_vec = qx + kmat.T @ qu + kq @ kvec + qux.T @ kvec
        v_mats[k] = v_mat
        v_vecs[k] = v_vec

    dx = np.empty((horizon + 1, n_x))
    du = np.empty((horizon, n_u))
    lam = np.empty((horizon + 1, n_x))
    dx[0] = c0
    for k in range(horizon):
        du[k] = gains_k[k] + gains_kx[k] @ dx[k]
        dx[k + 1] = a[k] @ dx[k] + b[k] @ du[k] + c[k]
    for k in range(horizon + 1):
        lam[k] = v_mats[k] @ dx[k] + v_vecs[k]
    return dx, du, lam, quu_all, qux_all, qu_all


def _solve_qp(a, b, w, q, ru_mat, ru_vec, c0, c, inputs, u_min, u_max, max_passes=20):
    """Riccati solve plus primal active-set handling of the input box."""
    horizon, n_u = inputs.shape
    du_lo = u_min[None, :] - inputs
    du_hi = u_max[None, :] - inputs
    fix_lo = np.zeros((horizon, n_u), dtype=bool)
    fix_hi = np.zeros((horizon, n_u), dtype=bool)

    for _ in range(max_passes):
        dx, du, lam, quu, qux, qu = _riccati(
            a, b, w, q, ru_mat, ru_vec, c0, c, fix_lo, fix_hi, du_lo, du_hi
        )
        free = ~(fix_lo | fix_hi)
        viol_lo = free & (du < du_lo - 1e-12)
        viol_hi = free & (du > du_hi + 1e-12)
        if viol_lo.any() or viol_hi.any():
            fix_lo |= viol_lo
            fix_hi |= viol_hi
            continue
        grad = np.einsum("kij,kj->ki", quu, du) + np.einsum("kij,kj->ki", qux, dx[:-1]) + qu
        rel_lo = fix_lo & (grad < -1e-9)
        rel_hi = fix_hi & (grad > 1e-9)
        if rel_lo.any() or rel_hi.any():
            fix_lo &= ~rel_lo
            fix_hi &= ~rel_hi
            continue
        return dx, du, lam
    du = np.clip(du, du_lo, du_hi)
    return dx, du, lam


def _kkt_residual(a, b, q, ru_vec, lam, inputs, u_min, u_max):
    horizon = ru_vec.shape[0]
    res = float(np.abs(q[-1] - lam[-1]).max())
    for k in range(1, horizon):
        s = q[k] + a[k].T @ lam[k + 1] - lam[k]
        res = max(res, float(np.abs(s).max()))
    su = ru_vec + np.einsum("kji,kj->ki", b, lam[1:])
    at_lo = inputs <= u_min[None, :] + 1e-9
    at_hi = inputs >= u_max[None, :] - 1e-9
    su = np.where(at_lo, np.minimum(su, 0.0), su)
    su = np.where(at_hi, np.maximum(su, 0.0), su)
    res = max(res, float(np.abs(su).max()))
    return res


def solve_ocp(
    dyn: DynModel,
    cost: CostModel,
    x_init: np.ndarray,
    states0: np.ndarray,
    inputs0: np.ndarray,
    u_min: np.ndarray,
    u_max: np.ndarray,
    kkt_tol: float = 1e-5,
    defect_tol: float = 1e-6,
    stall_tol: float = 1e-9,
    stall_window: int = 3,
    max_iterations: int = 120,
) -> OcpResult:
    """Run the SQP loop from the supplied initial guess."""
    x_init = np.asarray(x_init, dtype=float).reshape(-1)
    states = np.array(states0, dtype=float)
    inputs = np.clip(np.array(inputs0, dtype=float), u_min[None, :], u_max[None, :])
    horizon = inputs.shape[0]
    if states.shape[0] != horizon + 1:
        raise ValueError("states/inputs length mismatch")

    mu = 10.0
    history: list = []
    iterations = 0
    converged = False
    status = "max_iterations"
    kkt = np.inf
    defect_inf = np.inf

    for _ in range(max_iterations):
        c0, c = _defects(dyn, x_init, states, inputs)
        defect_inf = max(float(np.abs(c).max()) if c.size else 0.0, float(np.abs(c0).max()))
        a, b = dyn.linearize(states[:-1], inputs)
        w, q, ru_mat, ru_vec = cost.quadratics(states, inputs)
        cost_now = cost.value(states, inputs)

        dx, du, lam = _solve_qp(a, b, w, q, ru_mat, ru_vec, c0, c, inputs, u_min, u_max)
        kkt = _kkt_residual(a, b, q, ru_vec, lam, inputs, u_min, u_max)

        lam_inf = float(np.abs(lam).max()) if lam.size else 0.0
        mu_needed = 1.2 * lam_inf + 1e-3
        if mu < mu_needed:
            mu = 2.0 * mu_needed
            history = []

        violation = float(np.abs(c).sum() + np.abs(c0).sum())
        merit_now = cost_now + mu * violation
        if not history:
            history.append(merit_now)

        if kkt < kkt_tol and defect_inf < defect_tol:
            converged = True
            status = "kkt"
            break
        if (
            len(history) > stall_window
            and history[-1 - stall_window] - history[-1] < stall_tol
            and defect_inf < defect_tol
        ):
            converged = True
            status = "stalled"
            break

        grad_step = float(np.einsum("ki,ki->", q, dx) + np.einsum("ki,ki->", ru_vec, du))
        descent = grad_step - mu * violation

        alpha = 1.0
        accepted = False
        while alpha >= 1e-6:
            trial_states = states + alpha * dx
            trial_inputs = inputs + alpha * du
            tc0, tc = _defects(dyn, x_init, trial_states, trial_inputs)
            trial_violation = float(np.abs(tc).sum() + np.abs(tc0).sum())
            trial_merit = cost.value(trial_states, trial_inputs) + mu * trial_violation
            if np.isfinite(trial_merit) and trial_merit <= merit_now + 1e-4 * alpha * descent:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            status = "line_search_failed"
            break

        states = trial_states
        inputs = np.clip(trial_inputs, u_min[None, :], u_max[None, :])
        iterations += 1
        history.append(trial_merit)

    final_cost = cost.value(states, inputs)
    c0, c = _defects(dyn, x_init, states, inputs)
    defect_inf = max(float(np.abs(c).max()) if c.size else 0.0, float(np.abs(c0).max()))
    return OcpResult(
        states=states,
        inputs=inputs,
        converged=converged,
        iterations=iterations,
        kkt_residual=kkt,
        max_defect=defect_inf,
        cost=final_cost,
        merit_history=history,
        multipliers=None,
        status=status,
    )
