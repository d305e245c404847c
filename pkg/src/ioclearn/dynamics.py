"""Discrete-time system models: pendulum, planar kinematic arm chain, linear systems.

Every model maps ``(x, u) -> x_next`` with a fixed sampling period and exposes
state/input Jacobians of that map, either analytically or by central finite
differences.
"""
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionMismatchError

FD_STEP_BASE = 1e-6


class DynamicsModel(ABC):
    """Base class for discrete-time dynamics ``x_next = step(x, u)``."""

    state_dim: int
    input_dim: int
    T_s: float
    analytic_jacobians_available: bool = False

    @abstractmethod
    def step(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Advance the state by one sampling period."""
        raise NotImplementedError

    def jacobians(self, x: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(A, B)`` with ``A = d step/dx`` and ``B = d step/du``."""
        return finite_difference_jacobians(self.step, x, u)

    def rollout_states(self, x0: np.ndarray, inputs: np.ndarray) -> np.ndarray:
        """Simulate the input matrix (e, m); returns the (e+1, n) state array."""
        e = inputs.shape[0]
        states = np.empty((e + 1, self.state_dim))
        states[0] = x0
        for i in range(e):
            states[i + 1] = self.step(states[i], inputs[i])
        return states

    def jacobians_along(self, states, inputs):
        """One-step Jacobians at every stage; returns (e, n, n) and (e, n, m)."""
        e, n, m = inputs.shape[0], self.state_dim, self.input_dim
        A = np.empty((e, n, n))
        B = np.empty((e, n, m))
        for i in range(e):
            A[i], B[i] = self.jacobians(states[i], inputs[i])
        return A, B

    def adjoint_gradient(self, A, B, gxs, gus, p_end):
        """Gradient of ``sum_i l_i + terminal`` w.r.t. the input matrix via one
        backward costate sweep; ``p_end`` is the terminal seed."""
        e = gus.shape[0]
        grad = np.empty_like(gus)
        p = np.asarray(p_end, dtype=float)
        for i in range(e - 1, -1, -1):
            grad[i] = B[i].T @ p + gus[i]
            p = A[i].T @ p + gxs[i]
        return grad

    def check_dims(self, x, u) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=float)
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if x.shape != (self.state_dim,):
            raise DimensionMismatchError(
                f"state has shape {x.shape}, expected ({self.state_dim},)")
        if u.shape != (self.input_dim,):
            raise DimensionMismatchError(
                f"input has shape {u.shape}, expected ({self.input_dim},)")
        return x, u


def finite_difference_jacobians(step, x, u, scale: float = 1.0):
    """Central finite-difference Jacobians of ``step`` at ``(x, u)``.

    The per-coordinate step is ``scale * 1e-6 * (1 + |value|)``; ``scale`` is
    exposed so tests can run a half-step Richardson self-check.
    """
    x = np.asarray(x, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    n, m = x.size, u.size
    A = np.empty((n, n))
    B = np.empty((n, m))
    for j in range(n):
        h = scale * FD_STEP_BASE * (1.0 + abs(x[j]))
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        A[:, j] = (step(xp, u) - step(xm, u)) / (2.0 * h)
    for j in range(m):
        h = scale * FD_STEP_BASE * (1.0 + abs(u[j]))
        up, um = u.copy(), u.copy()
        up[j] += h
        um[j] -= h
        B[:, j] = (step(x, up) - step(x, um)) / (2.0 * h)
    return A, B


def model_jacobians(model: DynamicsModel, x, u) -> tuple[np.ndarray, np.ndarray]:
    """Jacobians of the one-step map, analytic when the model provides them."""
    return model.jacobians(np.asarray(x, dtype=float),
                           np.atleast_1d(np.asarray(u, dtype=float)))


@dataclass(frozen=True)
class PendulumModel(DynamicsModel):
    """Torque-driven pendulum, Euler-discretized around the hanging equilibrium.

    ``torque_bound`` is metadata only; enforcing it is the candidate-constraint
    machinery's job.
    """

    gravity: float = 9.81
    length: float = 1.0
    mass: float = 1.0
    T_s: float = 0.01
    torque_bound: float = 5.0

    state_dim: int = field(default=2, init=False)
    input_dim: int = field(default=1, init=False)
    analytic_jacobians_available: bool = field(default=True, init=False)

    def __post_init__(self):
        for name in ("gravity", "length", "mass", "T_s"):
            if getattr(self, name) <= 0.0:
                raise ConfigError(f"pendulum parameter {name} must be positive")

    def step(self, x, u):
        x, u = self.check_dims(x, u)
        g, l, m, ts = self.gravity, self.length, self.mass, self.T_s
        return np.array([
            x[0] + ts * x[1],
            x[1] - ts * (g / l) * np.sin(x[0]) + ts * u[0] / (m * l * l),
        ])

    def jacobians(self, x, u):
        g, l, m, ts = self.gravity, self.length, self.mass, self.T_s
        A = np.array([[1.0, ts],
                      [-ts * (g / l) * np.cos(x[0]), 1.0]])
        B = np.array([[0.0], [ts / (m * l * l)]])
        return A, B

    def rollout_states(self, x0, inputs):
        import math
        ts = self.T_s
        c_grav = ts * self.gravity / self.length
        c_in = ts / (self.mass * self.length * self.length)
        e = inputs.shape[0]
        u = inputs[:, 0]
        states = np.empty((e + 1, 2))
        x1, x2 = float(x0[0]), float(x0[1])
        states[0, 0], states[0, 1] = x1, x2
        sin = math.sin
        for i in range(e):
            x1_next = x1 + ts * x2
            x2 = x2 - c_grav * sin(x1) + c_in * u[i]
            x1 = x1_next
            states[i + 1, 0] = x1
            states[i + 1, 1] = x2
        return states

    def jacobians_along(self, states, inputs):
        e = inputs.shape[0]
        ts = self.T_s
        A = np.zeros((e, 2, 2))
        A[:, 0, 0] = 1.0
        A[:, 0, 1] = ts
        A[:, 1, 0] = -ts * (self.gravity / self.length) * np.cos(states[:e, 0])
        A[:, 1, 1] = 1.0
        B = np.zeros((e, 2, 1))
        B[:, 1, 0] = ts / (self.mass * self.length * self.length)
        return A, B

    def adjoint_gradient(self, A, B, gxs, gus, p_end):
        e = gus.shape[0]
        ts = self.T_s
        b2 = ts / (self.mass * self.length * self.length)
        a21 = A[:, 1, 0].tolist()
        gx1 = gxs[:, 0].tolist()
        gx2 = gxs[:, 1].tolist()
        gu = gus[:, 0].tolist()
        out = [0.0] * e
        p1, p2 = float(p_end[0]), float(p_end[1])
        for i in range(e - 1, -1, -1):
            out[i] = b2 * p2 + gu[i]
            p1, p2 = p1 + a21[i] * p2 + gx1[i], ts * p1 + p2 + gx2[i]
        return np.asarray(out).reshape(e, 1)


def pendulum_step(x, u, model: PendulumModel) -> np.ndarray:
    """One pendulum step; ``u`` may be a bare scalar."""
    return model.step(np.asarray(x, dtype=float), np.atleast_1d(u))


def planar_chain_jacobian(link_lengths: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Planar body Jacobian (vx, vy, omega) of a revolute chain's end frame.

    Column k is the end-frame twist produced by unit rate of joint k, with
    absolute link angles ``cumsum(q)``.
    """
    angles = np.cumsum(q)
    s, c = np.sin(angles), np.cos(angles)
    K = q.size
    J = np.zeros((3, K))
    # d p_end / d q_k = sum over links at or after joint k
    vx = -link_lengths * s
    vy = link_lengths * c
    J[0, :] = np.cumsum(vx[::-1])[::-1]
    J[1, :] = np.cumsum(vy[::-1])[::-1]
    J[2, :] = 1.0
    return J


def truncated_pinv(J: np.ndarray, rel_cutoff: float) -> tuple[np.ndarray, int]:
    """Moore-Penrose pseudo-inverse via SVD; returns it and the number of
    singular values treated as zero."""
    U, s, Vt = np.linalg.svd(J, full_matrices=False)
    cutoff = rel_cutoff * (s[0] if s.size else 0.0)
    keep = s > cutoff
    s_inv = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
    return (Vt.T * s_inv) @ U.T, int(np.sum(~keep))


@dataclass(frozen=True)
class ArmStepDiagnostics:
    truncated_singular_values: int


@dataclass(frozen=True)
class PlanarArmModel(DynamicsModel):
    """Human arm chain driving a passive planar object chain through a shared grip.

    State is ``(x_h, x_o)``; the input is the human joint-rate vector. Object
    rates follow from the grip-twist coupling ``pinv(J_o) @ J_h @ u``.
    """

    link_lengths_human: tuple
    link_lengths_object: tuple
    T_s: float = 0.0185
    pinv_rel_cutoff: float = 1e-8

    def __post_init__(self):
        lh = tuple(float(v) for v in self.link_lengths_human)
        lo = tuple(float(v) for v in self.link_lengths_object)
        if not lh or not lo or min(lh) <= 0.0 or min(lo) <= 0.0:
            raise ConfigError("all link lengths must be positive")
        if self.T_s <= 0.0:
            raise ConfigError("sampling period must be positive")
        object.__setattr__(self, "link_lengths_human", lh)
        object.__setattr__(self, "link_lengths_object", lo)

    @property
    def human_joint_count(self) -> int:
        return len(self.link_lengths_human)

    @property
    def object_joint_count(self) -> int:
        return len(self.link_lengths_object)

    @property
    def state_dim(self) -> int:
        return self.human_joint_count + self.object_joint_count

    @property
    def input_dim(self) -> int:
        return self.human_joint_count

    def split(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        nh = self.human_joint_count
        return x[:nh], x[nh:]

    def coupling(self, x: np.ndarray) -> tuple[np.ndarray, int]:
        """Matrix mapping human joint rates to object joint rates at state x."""
        x_h, x_o = self.split(x)
        J_h = planar_chain_jacobian(np.asarray(self.link_lengths_human), x_h)
        J_o = planar_chain_jacobian(np.asarray(self.link_lengths_object), x_o)
        J_o_pinv, truncated = truncated_pinv(J_o, self.pinv_rel_cutoff)
        return J_o_pinv @ J_h, truncated

    def step_with_diagnostics(self, x, u) -> tuple[np.ndarray, ArmStepDiagnostics]:
        x, u = self.check_dims(x, u)
        x_h, x_o = self.split(x)
        G, truncated = self.coupling(x)
        x_next = np.concatenate([x_h + self.T_s * u, x_o + self.T_s * (G @ u)])
        return x_next, ArmStepDiagnostics(truncated_singular_values=truncated)

    def step(self, x, u):
        return self.step_with_diagnostics(x, u)[0]

    def rollout_states(self, x0, inputs):
        e = inputs.shape[0]
        nh = self.human_joint_count
        lh = np.asarray(self.link_lengths_human)
        lo = np.asarray(self.link_lengths_object)
        states = np.empty((e + 1, self.state_dim))
        states[0] = x0
        for i in range(e):
            x_h, x_o = states[i, :nh], states[i, nh:]
            J_h = planar_chain_jacobian(lh, x_h)
            J_o = planar_chain_jacobian(lo, x_o)
            J_o_pinv, _ = truncated_pinv(J_o, self.pinv_rel_cutoff)
            states[i + 1, :nh] = x_h + self.T_s * inputs[i]
            states[i + 1, nh:] = x_o + self.T_s * (J_o_pinv @ (J_h @ inputs[i]))
        return states


def arm_step(x, u, model: PlanarArmModel) -> np.ndarray:
    return model.step(np.asarray(x, dtype=float), np.asarray(u, dtype=float))


@dataclass(frozen=True)
class LinearModel(DynamicsModel):
    """``x_next = A x + B u``, mainly for oracles and unit tests."""

    A: np.ndarray
    B: np.ndarray
    T_s: float = 1.0

    analytic_jacobians_available: bool = field(default=True, init=False)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B[:, None]
        if A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0]:
            raise ConfigError("A must be square and B conformable")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def state_dim(self) -> int:
        return self.A.shape[0]

    @property
    def input_dim(self) -> int:
        return self.B.shape[1]

    def step(self, x, u):
        x, u = self.check_dims(x, u)
        return self.A @ x + self.B @ u

    def jacobians(self, x, u):
        return self.A.copy(), self.B.copy()

    def rollout_states(self, x0, inputs):
        e = inputs.shape[0]
        states = np.empty((e + 1, self.state_dim))
        states[0] = x0
        for i in range(e):
            states[i + 1] = self.A @ states[i] + self.B @ inputs[i]
        return states

    def jacobians_along(self, states, inputs):
        e = inputs.shape[0]
        return (np.broadcast_to(self.A, (e,) + self.A.shape).copy(),
                np.broadcast_to(self.B, (e,) + self.B.shape).copy())


def model_from_config(cfg: dict) -> DynamicsModel:
    """Build a model from a config mapping (see the shipped presets for schema)."""
    kind = cfg.get("kind")
    if kind == "pendulum":
        return PendulumModel(
            gravity=float(cfg.get("g", 9.81)),
            length=float(cfg.get("l", 1.0)),
            mass=float(cfg.get("m", 1.0)),
            T_s=float(cfg.get("T_s", 0.01)),
            torque_bound=float(cfg.get("torque_bound", 5.0)),
        )
    if kind == "planar_arm":
        return PlanarArmModel(
            link_lengths_human=tuple(cfg["link_lengths_human"]),
            link_lengths_object=tuple(cfg["link_lengths_object"]),
            T_s=float(cfg.get("T_s", 0.0185)),
        )
    if kind == "linear":
        return LinearModel(A=np.asarray(cfg["A"], dtype=float),
                           B=np.asarray(cfg["B"], dtype=float),
                           T_s=float(cfg.get("T_s", 1.0)))
    raise ConfigError(f"unknown system kind: {kind!r}")
