"""Direct single-shooting solver for pinned-endpoint and long-horizon problems.

The decision variable is the stacked input vector. An augmented-Lagrangian
outer loop handles the endpoint equality and any constraint rows that are not
per-coordinate input bounds; the inner loop is an accelerated proximal
gradient where input boxes are enforced by clipping and absolute-value input
costs by soft-thresholding. Gradients come from one adjoint sweep per
evaluation, reusing the models' one-step Jacobians.
"""
from dataclasses import dataclass, field

import numpy as np

from .candidates import CandidateSet
from .cost import ParametricCost
from .dynamics import DynamicsModel
from .rollout import Trajectory


@dataclass
class SolverSettings:
    max_outer: int = 50
    max_inner: int = 20_000
    penalty_init: float = 10.0
    penalty_growth: float = 10.0
    tol_constraint: float = 1e-7
    tol_stationarity: float = 1e-7
    smooth_abs_eps: float = None      # sqrt(u^2 + eps) mode for |u| cross-checks
    seed: int = 0
    max_restarts: int = 2


@dataclass
class ForwardProblem:
    model: DynamicsModel
    cost: ParametricCost
    x0: np.ndarray
    horizon: int
    constraints: CandidateSet = None
    x_end: np.ndarray = None          # None: free endpoint
    end_selector: np.ndarray = None   # rows of the endpoint equality; default identity
    settings: SolverSettings = field(default_factory=SolverSettings)

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float)
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.x_end is not None:
            self.x_end = np.atleast_1d(np.asarray(self.x_end, dtype=float))
        if self.end_selector is not None:
            self.end_selector = np.atleast_2d(np.asarray(self.end_selector, dtype=float))


@dataclass
class ForwardSolution:
    U: np.ndarray
    trajectory: Trajectory
    objective: float
    kkt: dict
    converged: bool
    diagnostics: dict = field(default_factory=dict)


def _split_rows(cset: CandidateSet, m: int):
    """Separate per-coordinate input bounds (handled by clipping) from rows
    that need multiplier treatment."""
    lo = np.full(m, -np.inf)
    hi = np.full(m, np.inf)
    general = []
    if cset is None:
        return lo, hi, general
    for row in cset.rows:
        nz = np.nonzero(row.normal)[0]
        if nz.size == 1 and cset.signals[nz[0]].kind == "input":
            c = cset.signals[nz[0]].index
            w = row.normal[nz[0]]
            if w > 0:
                hi[c] = min(hi[c], row.offset / w)
            else:
                lo[c] = max(lo[c], row.offset / w)
        elif nz.size > 0:
            parts = [(cset.signals[k], row.normal[k]) for k in nz]
            general.append((parts, row.offset, row.label))
    return lo, hi, general


class _ShootingWorkspace:
    """Caches problem structure; evaluates the AL merit and its gradient."""

    def __init__(self, problem: ForwardProblem):
        self.problem = problem
        self.model = problem.model
        self.cost = problem.cost
        self.e = problem.horizon
        self.m = problem.model.input_dim
        self.n = problem.model.state_dim
        self.lo, self.hi, self.general = _split_rows(problem.constraints, self.m)
        self.smooth_eps = problem.settings.smooth_abs_eps
        self.w_smooth = self.cost.smooth_weights()
        self.abs_w = np.zeros(self.m)
        for p in self.cost.abs_indices:
            self.abs_w[self.cost.features[p].coord] += self.cost.L[p]
        self.l1 = np.zeros(self.m) if self.smooth_eps is not None else self.abs_w
        if problem.x_end is not None:
            self.E = problem.end_selector if problem.end_selector is not None \
                else np.eye(self.n)
            self.target = problem.x_end
        else:
            self.E = None
            self.target = None

    def rollout(self, inputs):
        return self.model.rollout_states(self.problem.x0, inputs)

    def general_values(self, states, inputs):
        """(n_general, e) constraint values; -inf where a row is undefined."""
        e = self.e
        out = np.full((len(self.general), e), -np.inf)
        for a, (parts, offset, _) in enumerate(self.general):
            valid = e
            vals = np.zeros(e)
            for spec, w in parts:
                if spec.kind == "state":
                    vals += w * states[:e, spec.index]
                elif spec.kind == "input":
                    vals += w * inputs[:, spec.index]
                else:
                    valid = min(valid, e - 1)
                    vals[:e - 1] += w * np.diff(inputs[:, spec.index]) / self.model.T_s
            out[a, :valid] = vals[:valid] - offset
        return out

    def endpoint_gap(self, states):
        if self.E is None:
            return np.zeros(0)
        return self.E @ states[-1] - self.target

    def _stage_smooth(self, states, inputs) -> float:
        total = float(self.w_smooth @ self.cost.feature_values(states[:-1], inputs).sum(axis=1))
        if self.smooth_eps is not None:
            total += float(np.sum(np.sqrt(inputs ** 2 + self.smooth_eps) @ self.abs_w))
        return total

    def phi(self, inputs, nu, mu, rho):
        states = self.rollout(inputs)
        return self._phi_given(states, inputs, nu, mu, rho), states

    def _phi_given(self, states, inputs, nu, mu, rho) -> float:
        val = self._stage_smooth(states, inputs)
        if self.E is not None:
            h = self.endpoint_gap(states)
            val += float(nu @ h) + 0.5 * rho * float(h @ h)
        if self.general:
            g = self.general_values(states, inputs)
            active = np.maximum(0.0, mu + rho * g)
            val += float(np.sum(active ** 2 - mu ** 2)) / (2.0 * rho)
        return val

    def phi_grad(self, inputs, nu, mu, rho):
        """Merit value and gradient via one adjoint sweep."""
        e = self.e
        states = self.rollout(inputs)
        val = self._phi_given(states, inputs, nu, mu, rho)
        gxs, gus = self.cost.stage_gradients(states[:-1], inputs,
                                             weights=self.w_smooth)
        if self.smooth_eps is not None:
            gus = gus + self.abs_w * inputs / np.sqrt(inputs ** 2 + self.smooth_eps)
        if self.general:
            g = self.general_values(states, inputs)
            slope = np.maximum(0.0, mu + rho * g)
            for a, (parts, _, _) in enumerate(self.general):
                sa = slope[a]
                for spec, w in parts:
                    if spec.kind == "state":
                        gxs[:, spec.index] += w * sa
                    elif spec.kind == "input":
                        gus[:, spec.index] += w * sa
                    else:
                        gus[1:, spec.index] += w * sa[:e - 1] / self.model.T_s
                        gus[:e - 1, spec.index] -= w * sa[:e - 1] / self.model.T_s
        p = self.E.T @ (nu + rho * self.endpoint_gap(states)) \
            if self.E is not None else np.zeros(self.n)
        A, B = self.model.jacobians_along(states, inputs)
        grad = self.model.adjoint_gradient(A, B, gxs, gus, p)
        return val, grad, states

    def psi(self, inputs) -> float:
        if not np.any(self.l1):
            return 0.0
        return float(np.sum(np.abs(inputs) @ self.l1))

    def prox(self, inputs, eta):
        """Soft-threshold by eta * l1 weight, then clip into the input box."""
        out = inputs
        if np.any(self.l1):
            out = np.sign(out) * np.maximum(np.abs(out) - eta * self.l1, 0.0)
        return np.clip(out, self.lo, self.hi)

    def violation(self, states, inputs) -> float:
        v = 0.0
        if self.E is not None:
            h = self.endpoint_gap(states)
            v = float(np.max(np.abs(h))) if h.size else 0.0
        if self.general:
            g = self.general_values(states, inputs)
            finite = g[np.isfinite(g)]
            if finite.size:
                v = max(v, float(np.max(finite)))
        return v


def _inner_solve(ws, U, nu, mu, rho, tol, max_inner, eta):
    """Monotone accelerated proximal gradient on the AL merit.

    Termination requires the prox-gradient mapping at an accepted iterate
    (not at a momentum point) to fall below ``tol``.
    """
    U = ws.prox(U, 0.0)
    phi_U, states = ws.phi(U, nu, mu, rho)
    F_U = phi_U + ws.psi(U)
    U_prev = U.copy()
    y = U.copy()
    t_mom = 1.0
    worst_increase = 0.0
    pg_norm = np.inf
    it = 0
    while it < max_inner:
        it += 1
        plain_step = np.array_equal(y, U)
        phi_y, grad_y, _ = ws.phi_grad(y, nu, mu, rho)
        backtracked = False
        while True:
            U_new = ws.prox(y - eta * grad_y, eta)
            diff = U_new - y
            phi_new, states_new = ws.phi(U_new, nu, mu, rho)
            bound = phi_y + float(np.sum(grad_y * diff)) \
                + float(np.sum(diff * diff)) / (2.0 * eta)
            if phi_new <= bound + 1e-12 * (1.0 + abs(bound)) or eta < 1e-18:
                break
            eta *= 0.5
            backtracked = True
        F_new = phi_new + ws.psi(U_new)
        if F_new > F_U + 1e-12 * (1.0 + abs(F_U)):
            if plain_step:
                break   # no descent possible at this resolution
            y = U.copy()
            t_mom = 1.0
            continue
        worst_increase = max(worst_increase, (F_new - F_U) / (1.0 + abs(F_U)))
        pg_norm = float(np.linalg.norm(diff)) / eta
        U_prev, U, F_U, states = U, U_new, F_new, states_new
        if pg_norm <= tol:
            if plain_step:
                break
            y = U.copy()      # confirm with an unaccelerated step
            t_mom = 1.0
            continue
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_mom * t_mom))
        y = U + ((t_mom - 1.0) / t_next) * (U - U_prev)
        t_mom = t_next
        if not backtracked:
            eta *= 1.2
    return U, states, pg_norm, eta, worst_increase, it


def _al_solve(ws: _ShootingWorkspace, U0: np.ndarray) -> ForwardSolution:
    s = ws.problem.settings
    e = ws.e
    nu = np.zeros(ws.E.shape[0]) if ws.E is not None else np.zeros(0)
    mu = np.zeros((len(ws.general), e))
    rho = s.penalty_init
    U = U0.copy()
    inner_budget = 0
    worst_increase = 0.0
    pg_norm = np.inf
    v_prev = np.inf
    converged = False
    states = None
    outer = 0
    eta = 1.0
    for outer in range(1, s.max_outer + 1):
        constrained = ws.E is not None or ws.general
        inner_tol = s.tol_stationarity if not constrained \
            else max(s.tol_stationarity, min(1e-2, 0.1 * v_prev))
        U, states, pg_norm, eta, winc, used = _inner_solve(
            ws, U, nu, mu, rho, inner_tol, s.max_inner, eta)
        inner_budget += used
        worst_increase = max(worst_increase, winc)
        viol = ws.violation(states, U)
        if viol <= s.tol_constraint and pg_norm <= s.tol_stationarity:
            converged = True
            break
        if ws.E is not None:
            nu = nu + rho * ws.endpoint_gap(states)
        if ws.general:
            g = ws.general_values(states, U)
            mu = np.maximum(0.0, mu + rho * np.where(np.isfinite(g), g, -np.inf))
        if viol > 0.25 * v_prev and rho < 1e12:
            rho *= s.penalty_growth
        v_prev = viol
    h = ws.endpoint_gap(states)
    g = ws.general_values(states, U) if ws.general else np.zeros((0, e))
    finite_g = g[np.isfinite(g)]
    kkt = {
        "stationarity": pg_norm,
        "endpoint_violation": float(np.max(np.abs(h))) if h.size else 0.0,
        "inequality_violation": float(max(0.0, np.max(finite_g))) if finite_g.size else 0.0,
        "total_violation": ws.violation(states, U),
        "outer_iterations": outer,
        "inner_iterations": inner_budget,
        "penalty": rho,
        "worst_merit_increase": worst_increase,
    }
    traj = Trajectory(ws.model.T_s, states, U, tag="simulated")
    objective = float(np.sum(ws.cost.stage_values(states[:-1], U)))
    return ForwardSolution(U=U.reshape(-1), trajectory=traj, objective=objective,
                           kkt=kkt, converged=converged,
                           diagnostics={"multiplier_nu": nu.tolist(),
                                        "penalty": rho})


def solve_forward(problem: ForwardProblem) -> ForwardSolution:
    """Core solve with deterministic perturbed restarts on non-convergence."""
    ws = _ShootingWorkspace(problem)
    s = problem.settings
    best = None
    for attempt in range(s.max_restarts + 1):
        if attempt == 0:
            U0 = np.zeros((ws.e, ws.m))
        else:
            rng = np.random.default_rng(s.seed + attempt)
            span = np.where(np.isfinite(ws.hi) & np.isfinite(ws.lo),
                            ws.hi - ws.lo, 1.0)
            U0 = 0.05 * span * rng.standard_normal((ws.e, ws.m))
        sol = _al_solve(ws, U0)
        sol.diagnostics["restarts"] = attempt
        if sol.converged:
            return sol
        if best is None or sol.kkt["total_violation"] < best.kkt["total_violation"]:
            best = sol
    return best


def solve_shortest_path(problem: ForwardProblem) -> ForwardSolution:
    """Pinned-endpoint solve; requires ``x_end``."""
    if problem.x_end is None:
        raise ValueError("shortest-path problems need an endpoint")
    sol = solve_forward(problem)
    sol.trajectory.tag = "shortest-path"
    return sol


def solve_long_horizon(problem: ForwardProblem) -> ForwardSolution:
    """Long-horizon approximation of the infinite-horizon problem.

    The endpoint anchors the trajectory at the cost's equilibrium; a settling
    diagnostic reports whether the state had already come to rest before the
    anchor (i.e. the horizon was long enough).
    """
    if problem.x_end is None:
        raise ValueError("long-horizon problems need an equilibrium anchor")
    sol = solve_forward(problem)
    states = sol.trajectory.states
    tail = max(1, problem.horizon // 20)
    drift = float(np.max(np.abs(states[-tail:] - states[-1])))
    sol.diagnostics["tail_drift"] = drift
    sol.diagnostics["settled"] = bool(drift <= 1e-3 * (1.0 + float(np.max(np.abs(states[0])))))
    sol.trajectory.tag = "simulated-optimal"
    return sol


def predict_and_rms(model, cost, constraints, x0, x_e, e, reference_traj,
                    settings: SolverSettings = None) -> float:
    """Shortest-path prediction error against a reference segment.

    Returns ``sqrt(mean over steps 1..e of ||xhat_i - x_i||^2 / n)`` in the
    reference's state units.
    """
    ref = reference_traj
    if ref.states.shape[0] != e + 1:
        raise ValueError(f"reference must carry e+1 = {e + 1} states")
    problem = ForwardProblem(model=model, cost=cost, x0=x0, horizon=e,
                             constraints=constraints, x_end=x_e,
                             settings=settings or SolverSettings())
    sol = solve_shortest_path(problem)
    diff = sol.trajectory.states[1:] - ref.states[1:]
    n = ref.state_dim
    return float(np.sqrt(np.sum(diff ** 2) / (n * e)))
