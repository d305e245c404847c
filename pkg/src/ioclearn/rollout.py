"""Input-eliminated state recursion and its exact first-order sensitivities.

``rollout`` turns a stacked input vector into the state sequence it produces;
``rollout_sensitivities`` additionally propagates the Jacobian of every state
with respect to the stacked inputs (forward chain rule through the one-step
Jacobians). Trajectories round-trip through a plain CSV format.
"""
from dataclasses import dataclass, field

import numpy as np

from .dynamics import DynamicsModel
from .errors import DimensionMismatchError


@dataclass
class Trajectory:
    """Time-indexed state/input segment with fixed sampling period.

    ``states`` has one more row than ``inputs``; ``start_index`` is the absolute
    time index of the first state, so row i sits at time ``(start_index+i)*T_s``.
    """

    T_s: float
    states: np.ndarray   # (e+1, n)
    inputs: np.ndarray   # (e, m)
    start_index: int = 0
    tag: str = ""
    times: np.ndarray = None  # optional override, kept verbatim by CSV I/O

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        inputs = np.asarray(self.inputs, dtype=float)
        if inputs.ndim == 1:
            inputs = inputs.reshape(-1, 1) if inputs.size else inputs.reshape(0, 0)
        self.inputs = inputs
        if self.states.shape[0] != self.inputs.shape[0] + 1:
            raise DimensionMismatchError(
                f"{self.states.shape[0]} states vs {self.inputs.shape[0]} inputs")
        if self.times is None:
            self.times = (self.start_index + np.arange(self.states.shape[0])) * self.T_s
        else:
            self.times = np.asarray(self.times, dtype=float)

    @property
    def horizon(self) -> int:
        return self.states.shape[0] - 1

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    def stacked_inputs(self) -> np.ndarray:
        return self.inputs.reshape(-1)

    def segment(self, i0: int, i1: int) -> "Trajectory":
        """Sub-trajectory covering states i0..i1 (inclusive) of this one."""
        if not 0 <= i0 < i1 <= self.horizon:
            raise ValueError(f"invalid segment [{i0}, {i1}] of horizon {self.horizon}")
        return Trajectory(self.T_s, self.states[i0:i1 + 1].copy(),
                          self.inputs[i0:i1].copy(),
                          start_index=self.start_index + i0, tag=self.tag,
                          times=self.times[i0:i1 + 1].copy())

    def segment_by_time(self, t_i: float, t_e: float) -> "Trajectory":
        i0 = int(round(t_i / self.T_s)) - self.start_index
        i1 = int(round(t_e / self.T_s)) - self.start_index
        return self.segment(i0, i1)


def rollout(model: DynamicsModel, x0, U) -> Trajectory:
    """Simulate ``model`` from ``x0`` under the stacked input vector ``U``."""
    x0 = np.asarray(x0, dtype=float)
    U = np.asarray(U, dtype=float).reshape(-1)
    m = model.input_dim
    if U.size % m != 0:
        raise DimensionMismatchError(f"stacked input length {U.size} not divisible by {m}")
    e = U.size // m
    inputs = U.reshape(e, m)
    states = np.empty((e + 1, model.state_dim))
    states[0] = x0
    for i in range(e):
        states[i + 1] = model.step(states[i], inputs[i])
    return Trajectory(model.T_s, states, inputs, tag="simulated")


@dataclass
class RolloutSensitivities:
    """States plus the Jacobians ``dF[i] = d x_i / d U`` for i = 0..e.

    Blocks with input index j >= i are zero by causality and are not stored:
    ``dF[i]`` holds only the leading ``m*i`` columns.
    """

    states: np.ndarray
    inputs: np.ndarray
    dF: list = field(default_factory=list)   # dF[i]: (n, m*i)
    A: np.ndarray = None                     # (e, n, n) one-step Jacobians
    B: np.ndarray = None                     # (e, n, m)

    @property
    def horizon(self) -> int:
        return self.states.shape[0] - 1

    def block(self, i: int, j: int) -> np.ndarray:
        """Dense block ``d x_i / d u_j`` (zero when j >= i)."""
        n, m = self.states.shape[1], self.inputs.shape[1]
        if j >= i:
            return np.zeros((n, m))
        return self.dF[i][:, j * m:(j + 1) * m]

    def dense(self, i: int) -> np.ndarray:
        """Full ``n x (m*e)`` Jacobian of state i, zero blocks included."""
        n, m, e = self.states.shape[1], self.inputs.shape[1], self.horizon
        out = np.zeros((n, m * e))
        out[:, :self.dF[i].shape[1]] = self.dF[i]
        return out


def rollout_sensitivities(model: DynamicsModel, x0, U) -> RolloutSensitivities:
    """Rollout plus exact forward-propagated input sensitivities."""
    traj = rollout(model, x0, U)
    e, n, m = traj.horizon, model.state_dim, model.input_dim
    A = np.empty((e, n, n))
    B = np.empty((e, n, m))
    for i in range(e):
        A[i], B[i] = model.jacobians(traj.states[i], traj.inputs[i])
    dF = [np.zeros((n, 0))]
    for i in range(e):
        nxt = np.empty((n, m * (i + 1)))
        if i > 0:
            nxt[:, :m * i] = A[i] @ dF[i]
        nxt[:, m * i:] = B[i]
        dF.append(nxt)
    return RolloutSensitivities(states=traj.states, inputs=traj.inputs,
                                dF=dF, A=A, B=B)


def _format(v: float) -> str:
    return "%.17g" % v


def write_csv(traj: Trajectory, path) -> None:
    """Write the ``t, x1..xn, u1..um`` CSV form (last row has empty input cells)."""
    n, m = traj.state_dim, traj.input_dim
    header = ["t"] + [f"x{i+1}" for i in range(n)] + [f"u{i+1}" for i in range(m)]
    lines = [",".join(header)]
    for i in range(traj.states.shape[0]):
        cells = [_format(traj.times[i])] + [_format(v) for v in traj.states[i]]
        if i < traj.inputs.shape[0]:
            cells += [_format(v) for v in traj.inputs[i]]
        else:
            cells += [""] * m
        lines.append(",".join(cells))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_csv(path) -> Trajectory:
    """Read a trajectory written by :func:`write_csv`."""
    with open(path) as fh:
        rows = [line.strip() for line in fh if line.strip()]
    header = rows[0].split(",")
    n = sum(1 for h in header if h.startswith("x"))
    m = sum(1 for h in header if h.startswith("u"))
    times, states, inputs = [], [], []
    for row in rows[1:]:
        cells = row.split(",")
        times.append(float(cells[0]))
        states.append([float(c) for c in cells[1:1 + n]])
        u_cells = cells[1 + n:1 + n + m]
        if m > 0 and all(c != "" for c in u_cells):
            inputs.append([float(c) for c in u_cells])
    states = np.asarray(states)
    inputs = np.asarray(inputs, dtype=float).reshape(len(inputs), m)
    times = np.asarray(times)
    T_s = float(times[1] - times[0]) if len(times) >= 2 else 1.0
    start_index = int(round(times[0] / T_s)) if T_s else 0
    return Trajectory(T_s, states, inputs, start_index=start_index, times=times)
