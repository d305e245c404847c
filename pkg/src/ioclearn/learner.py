"""Stationarity-system assembly and the relaxed convex recovery program.

The gradient of the segment Lagrangian with respect to the stacked inputs is
linear in the unknowns (free cost weights, active-pair multipliers, endpoint
multiplier), so it assembles into ``M theta + c``. Recovery minimizes
``||M theta + c||^2`` over the structural constraint set: PSD cost blocks,
nonnegative multipliers and absolute-value weights, and the normalization.
"""
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls as scipy_nnls

from .candidates import CandidateSet, evaluate_activity
from .cost import ParametricCost, project_simplex, psd_clip, spectraplex_project
from .dynamics import DynamicsModel
from .errors import SegmentTooShortError
from .rollout import Trajectory, rollout_sensitivities

DEFAULT_THRESHOLD = 1e-3


@dataclass
class LearnOptions:
    threshold: float = DEFAULT_THRESHOLD
    finite_horizon: bool = False
    max_iterations: int = 50_000
    tolerance: float = 1e-9

    def __post_init__(self):
        if self.threshold < 0:
            raise ValueError("identification threshold must be nonnegative")


@dataclass
class LearnProblem:
    model: DynamicsModel
    cost: ParametricCost
    segment: Trajectory
    candidates: CandidateSet = None
    options: LearnOptions = field(default_factory=LearnOptions)


@dataclass
class StationaritySystem:
    """``grad_U Lagrangian = M theta + c`` with column bookkeeping.

    theta = (free cost weights, multipliers for active pairs, endpoint
    multiplier); the endpoint block is absent in finite-horizon mode.
    """

    M: np.ndarray
    c: np.ndarray
    free_features: np.ndarray          # cost feature indices, order of L columns
    active_pairs: list                 # (step, row) pairs, order of lambda columns
    nu_dim: int                        # 0 in finite-horizon mode
    n_rows_candidates: int
    horizon: int
    mismatch: float
    activity: np.ndarray = None        # (e, J) boolean

    @property
    def n_L(self) -> int:
        return self.free_features.size

    @property
    def n_lambda(self) -> int:
        return len(self.active_pairs)

    def split(self, theta: np.ndarray):
        nL, nlam = self.n_L, self.n_lambda
        return theta[:nL], theta[nL:nL + nlam], theta[nL + nlam:]


def assemble_stationarity(problem: LearnProblem) -> StationaritySystem:
    """Build the linear stationarity operator for one trajectory segment.

    The segment inputs are rolled out from the segment's first state; gradients
    are taken along the rolled-out states. A mismatch against the stored states
    is reported (nonzero for measured rather than simulated data). Constraint
    activity is evaluated on the stored data.
    """
    seg = problem.segment
    model, cost = problem.model, problem.cost
    e, m = seg.horizon, seg.input_dim
    if e < 2:
        raise SegmentTooShortError(f"segment has horizon {e}; need at least 2 steps")
    sens = rollout_sensitivities(model, seg.states[0], seg.stacked_inputs())
    mismatch = float(np.max(np.abs(sens.states - seg.states)))
    states, inputs = sens.states, sens.inputs
    dF = sens.dF

    gx, gu = cost.feature_gradients(states[:-1], inputs)

    def gradient_column(grad_x, grad_u):
        """Stack d/du_j of sum_i f(x_i, u_i) given per-stage gradients."""
        col = grad_u.reshape(-1).copy()
        for i in range(1, e):
            col[:m * i] += dF[i].T @ grad_x[i]
        return col

    feature_cols = np.stack([gradient_column(gx[p], gu[p])
                             for p in range(cost.n_features)], axis=1)

    columns = [feature_cols[:, cost.free_indices]]
    c = feature_cols[:, cost.frozen] @ cost.L[cost.frozen]

    active_pairs: list = []
    activity = None
    n_rows = 0
    if problem.candidates is not None and problem.candidates.n_rows > 0:
        cand = problem.candidates
        n_rows = cand.n_rows
        activity, _ = evaluate_activity(cand, seg)
        lam_cols = []
        for j in range(n_rows):
            row = cand.rows[j]
            for i in np.nonzero(activity[:, j])[0]:
                col = np.zeros(m * e)
                for s_idx, spec in enumerate(cand.signals):
                    w = row.normal[s_idx]
                    if w == 0.0:
                        continue
                    if spec.kind == "state":
                        if i > 0:
                            col[:m * i] += w * dF[i][spec.index, :]
                    elif spec.kind == "input":
                        col[m * i + spec.index] += w
                    else:  # input_rate, defined for i <= e-2
                        col[m * (i + 1) + spec.index] += w / seg.T_s
                        col[m * i + spec.index] -= w / seg.T_s
                lam_cols.append(col)
                active_pairs.append((int(i), int(j)))
        if lam_cols:
            columns.append(np.stack(lam_cols, axis=1))

    nu_dim = 0
    if not problem.options.finite_horizon:
        nu_dim = model.state_dim
        columns.append(dF[e].T)

    M = np.hstack(columns) if columns else np.zeros((m * e, 0))
    return StationaritySystem(
        M=M, c=c, free_features=cost.free_indices,
        active_pairs=active_pairs, nu_dim=nu_dim, n_rows_candidates=n_rows,
        horizon=e, mismatch=mismatch, activity=activity)


@dataclass
class LearnResult:
    """Recovered weights, multipliers, and identification bookkeeping."""

    cost: ParametricCost                 # carries the recovered weight vector
    L: np.ndarray
    lam: np.ndarray                      # (e, J), zeros off the active support
    nu: np.ndarray                       # None for the finite-horizon baseline
    Lambda: np.ndarray                   # per-row multiplier sums
    identified: list
    residual: float
    labels: list
    diagnostics: dict = field(default_factory=dict)

    def Q(self) -> np.ndarray:
        return self.cost.Q()

    def R(self) -> np.ndarray:
        return self.cost.R()

    def r_weights(self) -> np.ndarray:
        return self.cost.r_weights()


def identify_constraints(result_or_Lambda, threshold: float = DEFAULT_THRESHOLD) -> list:
    """Indices of candidate rows whose summed multiplier reaches the threshold."""
    Lambda = getattr(result_or_Lambda, "Lambda", result_or_Lambda)
    return [int(j) for j in np.nonzero(np.asarray(Lambda) >= threshold)[0]]


# ---------------------------------------------------------------------------
# constrained least-squares machinery


def _nnls_with_free(A: np.ndarray, c: np.ndarray, nonneg: np.ndarray,
                    max_iter: int) -> np.ndarray:
    """Minimize ``||A theta + c||`` with ``theta[nonneg] >= 0``.

    Free coordinates are eliminated through their least-squares optimum
    (orthogonal projection), the reduced problem goes to active-set NNLS, and
    the free part is recovered by back-substitution.
    """
    free = ~nonneg
    An, Af = A[:, nonneg], A[:, free]
    if Af.shape[1] > 0:
        Uf, sf, _ = np.linalg.svd(Af, full_matrices=False)
        keep = sf > max(Af.shape) * np.finfo(float).eps * (sf[0] if sf.size else 0)
        Uf = Uf[:, keep]
        Ar = An - Uf @ (Uf.T @ An)
        cr = c - Uf @ (Uf.T @ c)
    else:
        Ar, cr = An, c
    if An.shape[1] > 0:
        z, _ = scipy_nnls(Ar, -cr, maxiter=max(max_iter, 10 * An.shape[1]))
    else:
        z = np.zeros(0)
    theta = np.zeros(A.shape[1])
    theta[nonneg] = z
    if Af.shape[1] > 0:
        y, *_ = np.linalg.lstsq(Af, -(An @ z + c), rcond=None)
        theta[free] = y
    return theta


def _needs_eigen_projection(cost: ParametricCost) -> bool:
    """True when a free block needs a spectral projection or the trace rule."""
    if cost.normalization == "trace":
        return True
    for block in (cost.q_block, cost.r_block):
        if block is not None and not block.frozen and not block.is_diagonal:
            return True
    return False


def _structural_projection(system: StationaritySystem, cost: ParametricCost):
    """Exact Euclidean projection onto the product constraint set."""
    free_pos = {int(p): k for k, p in enumerate(system.free_features)}
    blocks = []
    for block, is_r in ((cost.q_block, False), (cost.r_block, True)):
        if block is None or block.frozen:
            continue
        entries = [(a, b, free_pos[int(block.index[a, b])])
                   for a in range(block.dim) for b in range(a, block.dim)
                   if block.index[a, b] >= 0]
        trace_mode = is_r and cost.normalization == "trace"
        blocks.append((block.dim, entries, trace_mode, block.is_diagonal))
    abs_pos = [free_pos[p] for p in cost.abs_indices if int(p) in free_pos]
    lam_lo, lam_hi = system.n_L, system.n_L + system.n_lambda

    def project(theta: np.ndarray) -> np.ndarray:
        out = theta.copy()
        for dim, entries, trace_mode, diagonal in blocks:
            if diagonal:
                d = np.array([out[k] for _, _, k in entries])
                d = project_simplex(d, cost.trace_target) if trace_mode \
                    else np.maximum(d, 0.0)
                for (_, _, k), v in zip(entries, d):
                    out[k] = v
                continue
            Mb = np.zeros((dim, dim))
            for a, b, k in entries:
                Mb[a, b] = Mb[b, a] = out[k]
            Mb = spectraplex_project(Mb, cost.trace_target) if trace_mode \
                else psd_clip(Mb)
            for a, b, k in entries:
                out[k] = Mb[a, b]
        for k in abs_pos:
            if out[k] < 0.0:
                out[k] = 0.0
        np.maximum(out[lam_lo:lam_hi], 0.0, out=out[lam_lo:lam_hi])
        return out

    return project


def _solve_pg(system: StationaritySystem, cost: ParametricCost,
              options: LearnOptions):
    """Accelerated projected gradient on ``||M theta + c||^2`` from theta = 0."""
    M, c = system.M, system.c
    n_cols = M.shape[1]
    if n_cols == 0:
        return np.zeros(0), {"iterations": 0, "converged": True, "pg_norm": 0.0}
    G = M.T @ M
    g = M.T @ c
    lip = 2.0 * max(float(np.linalg.eigvalsh(G)[-1]), 1e-300)
    eta = 1.0 / lip
    project = _structural_projection(system, cost)

    theta = project(np.zeros(n_cols))
    y = theta.copy()
    t_mom = 1.0
    f_prev = np.inf
    pg_norm = np.inf
    it = 0
    for it in range(1, options.max_iterations + 1):
        grad_y = 2.0 * (G @ y + g)
        theta_new = project(y - eta * grad_y)
        grad_t = 2.0 * (G @ theta_new + g)
        pg_vec = (theta_new - project(theta_new - eta * grad_t)) * lip
        pg_norm = float(np.linalg.norm(pg_vec))
        if pg_norm <= options.tolerance:
            theta = theta_new
            break
        f_new = float(theta_new @ (G @ theta_new) + 2.0 * (g @ theta_new))
        if f_new > f_prev:      # adaptive restart on objective increase
            y = theta.copy()
            t_mom = 1.0
            f_prev = np.inf
            continue
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_mom * t_mom))
        y = theta_new + ((t_mom - 1.0) / t_next) * (theta_new - theta)
        theta, t_mom, f_prev = theta_new, t_next, f_new
    converged = pg_norm <= options.tolerance
    return theta, {"iterations": it, "converged": bool(converged),
                   "pg_norm": pg_norm}


def _solve_system(system: StationaritySystem, cost: ParametricCost,
                  options: LearnOptions):
    if _needs_eigen_projection(cost):
        theta, info = _solve_pg(system, cost, options)
        info["solver"] = "projected_gradient"
        return theta, info
    # diagonal blocks only: exact active-set nonnegative least squares
    nonneg = np.zeros(system.M.shape[1], dtype=bool)
    free_pos = {int(p): k for k, p in enumerate(system.free_features)}
    for block in (cost.q_block, cost.r_block):
        if block is None or block.frozen:
            continue
        for a in range(block.dim):
            k = int(block.index[a, a])
            if k >= 0 and k in free_pos:
                nonneg[free_pos[k]] = True
    for p in cost.abs_indices:
        if int(p) in free_pos:
            nonneg[free_pos[int(p)]] = True
    nonneg[system.n_L:system.n_L + system.n_lambda] = True
    theta = _nnls_with_free(system.M, system.c, nonneg, options.max_iterations)
    grad = 2.0 * system.M.T @ (system.M @ theta + system.c)
    kkt = np.where(nonneg & (theta <= 0.0), np.minimum(grad, 0.0), grad)
    info = {"iterations": 0, "converged": True, "solver": "nnls",
            "pg_norm": float(np.linalg.norm(kkt))}
    return theta, info


def _result_from_theta(problem: LearnProblem, system: StationaritySystem,
                       theta: np.ndarray, info: dict) -> LearnResult:
    cost = problem.cost
    L = cost.L.copy()
    thL, thlam, thnu = system.split(theta)
    L[system.free_features] = thL
    lam = np.zeros((system.horizon, system.n_rows_candidates))
    for (i, j), v in zip(system.active_pairs, thlam):
        lam[i, j] = v
    Lambda = lam.sum(axis=0)
    residual = float(np.linalg.norm(system.M @ theta + system.c) ** 2)
    diagnostics = dict(info)
    diagnostics.update({
        "mismatch": system.mismatch,
        "active_pairs": len(system.active_pairs),
        "finite_horizon": bool(problem.options.finite_horizon),
    })
    labels = problem.candidates.labels if problem.candidates is not None else []
    return LearnResult(
        cost=cost.with_weights(L), L=L, lam=lam,
        nu=thnu.copy() if system.nu_dim else None, Lambda=Lambda,
        identified=identify_constraints(Lambda, problem.options.threshold),
        residual=residual, labels=labels, diagnostics=diagnostics)


def solve_relaxed(problem: LearnProblem) -> LearnResult:
    """Recover cost weights and multipliers for one segment."""
    system = assemble_stationarity(problem)
    theta, info = _solve_system(system, problem.cost, problem.options)
    return _result_from_theta(problem, system, theta, info)


def learn_finite_horizon_baseline(problem: LearnProblem) -> LearnResult:
    """Same recovery with the endpoint multiplier removed."""
    opts = LearnOptions(threshold=problem.options.threshold, finite_horizon=True,
                        max_iterations=problem.options.max_iterations,
                        tolerance=problem.options.tolerance)
    return solve_relaxed(LearnProblem(model=problem.model, cost=problem.cost,
                                      segment=problem.segment,
                                      candidates=problem.candidates,
                                      options=opts))


def solve_relaxed_multi(problems: list) -> LearnResult:
    """Joint recovery over several segments sharing one cost structure.

    Cost-weight columns are shared; each segment keeps its own multipliers.
    Per-row multiplier sums are averaged over segments so the identification
    threshold keeps its single-segment scale.
    """
    if not problems:
        raise ValueError("need at least one segment")
    cost = problems[0].cost
    options = problems[0].options
    systems = [assemble_stationarity(p) for p in problems]
    nL = systems[0].n_L
    lam_total = sum(s.n_lambda for s in systems)
    nu_total = sum(s.nu_dim for s in systems)
    M = np.zeros((sum(s.M.shape[0] for s in systems), nL + lam_total + nu_total))
    c = np.zeros(M.shape[0])
    r0, lam_off, nu_off = 0, nL, nL + lam_total
    lam_slices, nu_slices = [], []
    for s in systems:
        rows = s.M.shape[0]
        M[r0:r0 + rows, :nL] = s.M[:, :nL]
        M[r0:r0 + rows, lam_off:lam_off + s.n_lambda] = s.M[:, nL:nL + s.n_lambda]
        M[r0:r0 + rows, nu_off:nu_off + s.nu_dim] = s.M[:, nL + s.n_lambda:]
        c[r0:r0 + rows] = s.c
        lam_slices.append(slice(lam_off, lam_off + s.n_lambda))
        nu_slices.append(slice(nu_off, nu_off + s.nu_dim))
        r0 += rows
        lam_off += s.n_lambda
        nu_off += s.nu_dim
    all_pairs = [(seg_idx, pair) for seg_idx, s in enumerate(systems)
                 for pair in s.active_pairs]
    joint = StationaritySystem(
        M=M, c=c, free_features=systems[0].free_features,
        active_pairs=all_pairs, nu_dim=nu_total,
        n_rows_candidates=systems[0].n_rows_candidates,
        horizon=max(s.horizon for s in systems),
        mismatch=max(s.mismatch for s in systems))
    theta, info = _solve_system(joint, cost, options)

    L = cost.L.copy()
    L[systems[0].free_features] = theta[:nL]
    J = systems[0].n_rows_candidates
    Lambda = np.zeros(J)
    lam_per_segment = []
    for s, lsl in zip(systems, lam_slices):
        lam = np.zeros((s.horizon, J))
        for (i, j), v in zip(s.active_pairs, theta[lsl]):
            lam[i, j] = v
        lam_per_segment.append(lam)
        if J:
            Lambda += lam.sum(axis=0)
    if J:
        Lambda /= len(systems)
    residual = float(np.linalg.norm(M @ theta + c) ** 2)
    diagnostics = dict(info)
    diagnostics.update({"segments": len(systems),
                        "mismatch": joint.mismatch,
                        "active_pairs": lam_total})
    labels = problems[0].candidates.labels if problems[0].candidates is not None else []
    result = LearnResult(
        cost=cost.with_weights(L), L=L, lam=None, nu=None, Lambda=Lambda,
        identified=identify_constraints(Lambda, options.threshold),
        residual=residual, labels=labels, diagnostics=diagnostics)
    result.diagnostics["lam_per_segment"] = lam_per_segment
    return result


def learn_result_to_json(result: LearnResult) -> dict:
    lam_triplets = []
    if result.lam is not None:
        for i, j in zip(*np.nonzero(result.lam)):
            lam_triplets.append([int(i), int(j), float(result.lam[i, j])])
    return {
        "L": [float(v) for v in result.L],
        "Q": result.Q().tolist(),
        "R": result.R().tolist(),
        "r": [float(v) for v in result.r_weights()],
        "lambda": lam_triplets,
        "nu": None if result.nu is None else [float(v) for v in result.nu],
        "Lambda": [float(v) for v in result.Lambda],
        "identified": [int(j) for j in result.identified],
        "identified_labels": [result.labels[j] for j in result.identified
                              if j < len(result.labels)],
        "residual": float(result.residual),
        "diagnostics": {k: v for k, v in result.diagnostics.items()
                        if isinstance(v, (int, float, bool, str))},
    }


def write_result_json(result: LearnResult, path) -> None:
    with open(path, "w") as fh:
        json.dump(learn_result_to_json(result), fh, indent=2, sort_keys=True)
        fh.write("\n")
