"""Stage costs that are linear in their parameter vector.

A cost is a weighted sum of scalar features of ``(x, u)``: quadratic monomials
of the tracking error ``S x - y_s``, quadratic monomials of the input, and
absolute-value input features. Weights are grouped into structural blocks
(symmetric PSD matrices Q and R, nonnegative scalars r, frozen features) with
either a fixed-feature or a trace normalization pinning the overall scale.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateNormalizationError, DimensionMismatchError


def psd_clip(M: np.ndarray) -> np.ndarray:
    """Project a matrix onto the PSD cone (symmetrize, clip eigenvalues at 0)."""
    M = 0.5 * (M + M.T)
    w, V = np.linalg.eigh(M)
    w = np.maximum(w, 0.0)
    return (V * w) @ V.T


def project_simplex(v: np.ndarray, total: float = 1.0) -> np.ndarray:
    """Euclidean projection of ``v`` onto ``{w >= 0, sum w = total}``."""
    if total <= 0.0:
        raise ValueError("simplex total must be positive")
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - total
    ks = np.arange(1, v.size + 1)
    cond = u - css / ks > 0
    rho = np.nonzero(cond)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def spectraplex_project(M: np.ndarray, total: float = 1.0) -> np.ndarray:
    """Project onto ``{M PSD, trace M = total}`` (eigenvalues onto the simplex)."""
    M = 0.5 * (M + M.T)
    w, V = np.linalg.eigh(M)
    w = project_simplex(w, total)
    return (V * w) @ V.T


@dataclass(frozen=True)
class Feature:
    """One scalar feature. ``quad_*`` kinds carry matrix entry (a, b) with an
    implicit factor 2 when a != b; ``abs_input`` carries the input coordinate."""

    kind: str                 # "quad_state" | "quad_input" | "abs_input"
    a: int = 0
    b: int = 0
    coord: int = 0
    label: str = ""


@dataclass(frozen=True)
class QuadBlock:
    """Where a symmetric parameter matrix lives inside the weight vector.

    ``index[a, b]`` is the feature position of entry (a, b), or -1 when that
    entry is structurally absent (diagonal mode).
    """

    dim: int
    index: np.ndarray
    frozen: bool = False

    def matrix(self, L: np.ndarray) -> np.ndarray:
        M = np.zeros((self.dim, self.dim))
        for a in range(self.dim):
            for b in range(self.dim):
                k = self.index[a, b]
                if k >= 0:
                    M[a, b] = L[k]
        return M

    def write(self, L: np.ndarray, M: np.ndarray) -> None:
        for a in range(self.dim):
            for b in range(a, self.dim):
                k = self.index[a, b]
                if k >= 0:
                    L[k] = M[a, b]

    @property
    def is_diagonal(self) -> bool:
        off = ~np.eye(self.dim, dtype=bool)
        return bool(np.all(self.index[off] < 0))


@dataclass
class ParametricCost:
    """Stage cost ``l(x, u; L) = sum_p L_p * phi_p(x, u)``."""

    state_dim: int
    input_dim: int
    features: list
    L: np.ndarray
    selector: np.ndarray           # S, shape (n_y, n)
    reference: np.ndarray          # y_s, shape (n_y,)
    q_block: QuadBlock = None
    r_block: QuadBlock = None
    abs_indices: list = field(default_factory=list)
    frozen: np.ndarray = None      # boolean mask over features
    normalization: str = "fixed"   # "fixed" | "trace"
    trace_target: float = 1.0

    def __post_init__(self):
        self.L = np.asarray(self.L, dtype=float).copy()
        if self.frozen is None:
            self.frozen = np.zeros(len(self.features), dtype=bool)
        self.frozen = np.asarray(self.frozen, dtype=bool)
        self.selector = np.atleast_2d(np.asarray(self.selector, dtype=float))
        self.reference = np.atleast_1d(np.asarray(self.reference, dtype=float))

    # -- evaluation ---------------------------------------------------------

    @property
    def n_features(self) -> int:
        return len(self.features)

    @property
    def free_indices(self) -> np.ndarray:
        return np.nonzero(~self.frozen)[0]

    def _check(self, states, inputs):
        states = np.atleast_2d(np.asarray(states, dtype=float))
        inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
        if states.shape[1] != self.state_dim or inputs.shape[1] != self.input_dim:
            raise DimensionMismatchError(
                f"expected (*, {self.state_dim}) states and (*, {self.input_dim}) inputs, "
                f"got {states.shape} and {inputs.shape}")
        return states, inputs

    def feature_values(self, states, inputs) -> np.ndarray:
        """Feature matrix of shape (P, e) over the stage points."""
        states, inputs = self._check(states, inputs)
        y = states @ self.selector.T - self.reference
        out = np.empty((self.n_features, states.shape[0]))
        for p, f in enumerate(self.features):
            if f.kind == "quad_state":
                fac = 1.0 if f.a == f.b else 2.0
                out[p] = fac * y[:, f.a] * y[:, f.b]
            elif f.kind == "quad_input":
                fac = 1.0 if f.a == f.b else 2.0
                out[p] = fac * inputs[:, f.a] * inputs[:, f.b]
            elif f.kind == "abs_input":
                out[p] = np.abs(inputs[:, f.coord])
            else:
                raise ValueError(f"unknown feature kind {f.kind!r}")
        return out

    def feature_gradients(self, states, inputs) -> tuple[np.ndarray, np.ndarray]:
        """Per-feature gradients, shapes (P, e, n) and (P, e, m).

        Absolute-value features use the sign subgradient, zero exactly at 0.
        """
        states, inputs = self._check(states, inputs)
        e = states.shape[0]
        y = states @ self.selector.T - self.reference
        gx = np.zeros((self.n_features, e, self.state_dim))
        gu = np.zeros((self.n_features, e, self.input_dim))
        S = self.selector
        for p, f in enumerate(self.features):
            if f.kind == "quad_state":
                fac = 1.0 if f.a == f.b else 2.0
                gx[p] = fac * (np.outer(y[:, f.b], S[f.a]) + np.outer(y[:, f.a], S[f.b]))
            elif f.kind == "quad_input":
                fac = 1.0 if f.a == f.b else 2.0
                gu[p, :, f.a] += fac * inputs[:, f.b]
                gu[p, :, f.b] += fac * inputs[:, f.a]
            elif f.kind == "abs_input":
                gu[p, :, f.coord] = np.sign(inputs[:, f.coord])
        return gx, gu

    def stage_values(self, states, inputs) -> np.ndarray:
        return self.L @ self.feature_values(states, inputs)

    def stage_gradients(self, states, inputs, weights=None):
        """Weighted total gradients per stage, shapes (e, n) and (e, m)."""
        w = self.L if weights is None else weights
        gx, gu = self.feature_gradients(states, inputs)
        return np.einsum("p,pen->en", w, gx), np.einsum("p,pem->em", w, gu)

    def l1_weights(self) -> np.ndarray:
        """Per-input-coordinate absolute-value weights (the nonsmooth part)."""
        w = np.zeros(self.input_dim)
        for p in self.abs_indices:
            w[self.features[p].coord] += self.L[p]
        return w

    def smooth_weights(self) -> np.ndarray:
        """Weight vector with absolute-value features zeroed out."""
        w = self.L.copy()
        w[list(self.abs_indices)] = 0.0
        return w

    def with_weights(self, L: np.ndarray) -> "ParametricCost":
        out = ParametricCost(
            state_dim=self.state_dim, input_dim=self.input_dim,
            features=self.features, L=np.asarray(L, dtype=float),
            selector=self.selector, reference=self.reference,
            q_block=self.q_block, r_block=self.r_block,
            abs_indices=list(self.abs_indices), frozen=self.frozen.copy(),
            normalization=self.normalization, trace_target=self.trace_target)
        return out

    # -- structured views ---------------------------------------------------

    def Q(self) -> np.ndarray:
        return self.q_block.matrix(self.L) if self.q_block else np.zeros((0, 0))

    def R(self) -> np.ndarray:
        return self.r_block.matrix(self.L) if self.r_block else np.zeros((0, 0))

    def r_weights(self) -> np.ndarray:
        return self.L[list(self.abs_indices)]


def cost_value(cost: ParametricCost, x, u) -> float:
    """Stage cost at a single point, frozen features included."""
    return float(cost.stage_values(np.atleast_2d(x), np.atleast_2d(u))[0])


def cost_gradients(cost: ParametricCost, x, u):
    """Analytic gradients at one point.

    Returns ``(dl_dx, dl_du, feat_gx, feat_gu)`` where the last two stack the
    per-feature gradients, shapes (P, n) and (P, m).
    """
    gx, gu = cost.feature_gradients(np.atleast_2d(x), np.atleast_2d(u))
    return cost.L @ gx[:, 0, :], cost.L @ gu[:, 0, :], gx[:, 0, :], gu[:, 0, :]


def project_parameters(cost: ParametricCost, L_raw) -> np.ndarray:
    """Pull a raw weight vector back to the cost's structural constraint set.

    Q/R blocks are symmetrized and eigen-clipped to the PSD cone, absolute-value
    weights clipped at zero, then the normalization is re-imposed: the trace
    rule rescales the whole vector so that sum(R_ii) hits the target, while the
    fixed-feature rule leaves frozen weights untouched.
    """
    L = np.asarray(L_raw, dtype=float).copy()
    if L.shape != cost.L.shape:
        raise DimensionMismatchError(f"weight vector has shape {L.shape}, "
                                     f"expected {cost.L.shape}")
    for block in (cost.q_block, cost.r_block):
        if block is not None and not block.frozen:
            block.write(L, psd_clip(block.matrix(L)))
    for p in cost.abs_indices:
        L[p] = max(L[p], 0.0)
    if cost.normalization == "trace":
        trace = float(np.trace(cost.r_block.matrix(L)))
        if trace <= 0.0:
            raise DegenerateNormalizationError(
                "trace normalization undefined: R diagonal sums to zero")
        L *= cost.trace_target / trace
    else:
        L[cost.frozen] = cost.L[cost.frozen]
    return L


def _sym_block(dim: int, start: int, diagonal: bool, kind: str, prefix: str,
               features: list) -> QuadBlock:
    index = -np.ones((dim, dim), dtype=int)
    k = start
    for a in range(dim):
        for b in range(a, dim):
            if diagonal and a != b:
                continue
            features.append(Feature(kind=kind, a=a, b=b, label=f"{prefix}{a+1}{b+1}"))
            index[a, b] = index[b, a] = k
            k += 1
    return QuadBlock(dim=dim, index=index)


def pendulum_cost(Q=None, r: float = 0.0, freeze_quadratic_input: bool = True,
                  state_dim: int = 2) -> ParametricCost:
    """``x'Qx + r|u| + u^2`` with the quadratic input weight frozen at 1.

    The frozen feature pins the scale; dropping the freeze makes the all-zero
    weight vector a trivial stationarity solution.
    """
    features: list = []
    q_block = _sym_block(state_dim, 0, False, "quad_state", "Q", features)
    features.append(Feature(kind="abs_input", coord=0, label="r"))
    abs_idx = len(features) - 1
    features.append(Feature(kind="quad_input", a=0, b=0, label="u_sq"))
    frozen = np.zeros(len(features), dtype=bool)
    frozen[-1] = freeze_quadratic_input
    L = np.zeros(len(features))
    Qm = np.eye(state_dim) if Q is None else np.asarray(Q, dtype=float)
    q_block.write(L, Qm)
    L[abs_idx] = r
    L[-1] = 1.0
    r_block = QuadBlock(dim=1, index=np.array([[len(features) - 1]]),
                        frozen=freeze_quadratic_input)
    return ParametricCost(
        state_dim=state_dim, input_dim=1, features=features, L=L,
        selector=np.eye(state_dim), reference=np.zeros(state_dim),
        q_block=q_block, r_block=r_block, abs_indices=[abs_idx],
        frozen=frozen, normalization="fixed")


def lqr_cost(state_dim: int, input_dim: int, Q=None) -> ParametricCost:
    """``x'Qx + u'u`` with the input block frozen at the identity."""
    features: list = []
    q_block = _sym_block(state_dim, 0, False, "quad_state", "Q", features)
    r_start = len(features)
    r_block = _sym_block(input_dim, r_start, True, "quad_input", "R", features)
    r_block = QuadBlock(dim=input_dim, index=r_block.index, frozen=True)
    frozen = np.zeros(len(features), dtype=bool)
    frozen[r_start:] = True
    L = np.zeros(len(features))
    Qm = np.eye(state_dim) if Q is None else np.asarray(Q, dtype=float)
    q_block.write(L, Qm)
    r_block.write(L, np.eye(input_dim))
    return ParametricCost(
        state_dim=state_dim, input_dim=input_dim, features=features, L=L,
        selector=np.eye(state_dim), reference=np.zeros(state_dim),
        q_block=q_block, r_block=r_block, abs_indices=[],
        frozen=frozen, normalization="fixed")


def tracking_cost(state_dim: int, input_dim: int, selected_states, y_s,
                  Q=None, R=None, diagonal_r: bool = False,
                  trace_target: float = 1.0) -> ParametricCost:
    """``(Sx - y_s)'Q(Sx - y_s) + u'Ru`` with ``sum(R_ii) = trace_target``.

    ``selected_states`` lists the state coordinates S picks out. Off-diagonal R
    entries are free parameters unless ``diagonal_r``.
    """
    sel = list(selected_states)
    n_y = len(sel)
    S = np.zeros((n_y, state_dim))
    for row, idx in enumerate(sel):
        S[row, idx] = 1.0
    features: list = []
    q_block = _sym_block(n_y, 0, False, "quad_state", "Q", features)
    r_block = _sym_block(input_dim, len(features), diagonal_r, "quad_input", "R", features)
    L = np.zeros(len(features))
    Qm = np.eye(n_y) if Q is None else np.asarray(Q, dtype=float)
    Rm = (np.eye(input_dim) / input_dim * trace_target
          if R is None else np.asarray(R, dtype=float))
    q_block.write(L, Qm)
    r_block.write(L, Rm)
    return ParametricCost(
        state_dim=state_dim, input_dim=input_dim, features=features, L=L,
        selector=S, reference=np.asarray(y_s, dtype=float),
        q_block=q_block, r_block=r_block, abs_indices=[],
        frozen=np.zeros(len(features), dtype=bool),
        normalization="trace", trace_target=trace_target)


def cost_from_config(cfg: dict, state_dim: int, input_dim: int) -> ParametricCost:
    """Build a cost from a config mapping (see shipped presets for schema)."""
    kind = cfg.get("kind")
    if kind == "pendulum_quadratic":
        return pendulum_cost(Q=np.asarray(cfg.get("Q", np.eye(2)), dtype=float),
                             r=float(cfg.get("r", 0.0)), state_dim=state_dim)
    if kind == "tracking":
        return tracking_cost(
            state_dim=state_dim, input_dim=input_dim,
            selected_states=cfg["S"], y_s=cfg["y_s"],
            Q=np.asarray(cfg["Q"], dtype=float) if "Q" in cfg else None,
            R=np.asarray(cfg["R"], dtype=float) if "R" in cfg else None,
            diagonal_r=bool(cfg.get("diagonal_R", False)),
            trace_target=float(cfg.get("trace_target", 1.0)))
    if kind == "lqr":
        return lqr_cost(state_dim, input_dim,
                        Q=np.asarray(cfg["Q"], dtype=float) if "Q" in cfg else None)
    from .errors import ConfigError
    raise ConfigError(f"unknown cost kind: {kind!r}")
