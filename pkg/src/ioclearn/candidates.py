"""Data-driven candidate constraints: per-signal boxes and 2-D convex hulls.

Candidates are linear inequalities ``normal . z <= offset`` over a signal
space drawn from state coordinates, input coordinates, and input-rate
coordinates. Every building data point satisfies every row by construction;
the learner decides which rows matter via their summed multipliers.
"""
import json
from dataclasses import dataclass, field

import numpy as np

from .rollout import Trajectory

SIGNAL_KINDS = ("state", "input", "input_rate")


@dataclass(frozen=True)
class SignalSpec:
    """One scalar signal: a state, input, or input-rate coordinate.

    The rate signal at step i is ``(u[i+1] - u[i]) / T_s``, defined only for
    i <= e-2.
    """

    kind: str
    index: int

    def __post_init__(self):
        if self.kind not in SIGNAL_KINDS:
            raise ValueError(f"unknown signal kind {self.kind!r}")
        if self.index < 0:
            raise ValueError("signal index must be nonnegative")

    @property
    def name(self) -> str:
        prefix = {"state": "x", "input": "u", "input_rate": "a"}[self.kind]
        return f"{prefix}{self.index + 1}"


def signal_values(spec: SignalSpec, traj: Trajectory) -> np.ndarray:
    """Signal samples over stages 0..e-1; NaN where the signal is undefined."""
    e = traj.horizon
    if spec.kind == "state":
        if spec.index >= traj.state_dim:
            raise ValueError(f"state index {spec.index} out of range")
        return traj.states[:e, spec.index].copy()
    if spec.kind == "input":
        if spec.index >= traj.input_dim:
            raise ValueError(f"input index {spec.index} out of range")
        return traj.inputs[:, spec.index].copy()
    vals = np.full(e, np.nan)
    if spec.index >= traj.input_dim:
        raise ValueError(f"input index {spec.index} out of range")
    if e >= 2:
        vals[:e - 1] = np.diff(traj.inputs[:, spec.index]) / traj.T_s
    return vals


@dataclass
class CandidateRow:
    normal: np.ndarray
    offset: float
    label: str

    def __post_init__(self):
        self.normal = np.atleast_1d(np.asarray(self.normal, dtype=float))


@dataclass
class CandidateSet:
    """Rows ``normal . z <= offset`` over a shared list of signals."""

    signals: list
    rows: list
    activity_tol: float = 1e-6
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    @property
    def labels(self) -> list:
        return [row.label for row in self.rows]

    def signal_matrix(self, traj: Trajectory) -> np.ndarray:
        """Stacked signal samples, shape (e, n_signals); NaN where undefined."""
        cols = [signal_values(s, traj) for s in self.signals]
        return np.stack(cols, axis=1) if cols else np.zeros((traj.horizon, 0))

    def values(self, traj: Trajectory) -> np.ndarray:
        """Constraint values ``normal . z_i - offset``, shape (e, n_rows)."""
        Z = self.signal_matrix(traj)
        P = np.stack([row.normal for row in self.rows]) if self.rows else np.zeros((0, Z.shape[1]))
        p = np.array([row.offset for row in self.rows])
        return Z @ P.T - p

    def subset(self, indices) -> "CandidateSet":
        return CandidateSet(signals=list(self.signals),
                            rows=[self.rows[j] for j in indices],
                            activity_tol=self.activity_tol,
                            diagnostics=dict(self.diagnostics))

    @staticmethod
    def merge(sets: list) -> "CandidateSet":
        """Union of several candidate sets over the union of their signals."""
        signals: list = []
        for cs in sets:
            for s in cs.signals:
                if s not in signals:
                    signals.append(s)
        rows = []
        for cs in sets:
            pos = [signals.index(s) for s in cs.signals]
            for row in cs.rows:
                normal = np.zeros(len(signals))
                normal[pos] = row.normal
                rows.append(CandidateRow(normal, row.offset, row.label))
        tol = min((cs.activity_tol for cs in sets), default=1e-6)
        diag = {}
        for cs in sets:
            diag.update(cs.diagnostics)
        return CandidateSet(signals=signals, rows=rows, activity_tol=tol,
                            diagnostics=diag)


def build_box_candidates(traj: Trajectory, specs, activity_tol: float = 1e-6) -> CandidateSet:
    """Upper/lower bound rows ``z <= max z_i`` and ``-z <= -min z_i`` per signal."""
    specs = list(specs)
    if traj.horizon < 1:
        raise ValueError("cannot build candidates from an empty trajectory")
    rows = []
    for k, spec in enumerate(specs):
        vals = signal_values(spec, traj)
        finite = vals[np.isfinite(vals)]
        if finite.size == 0:
            raise ValueError(f"signal {spec.name} has no defined samples")
        hi, lo = float(np.max(finite)), float(np.min(finite))
        up = np.zeros(len(specs))
        up[k] = 1.0
        dn = np.zeros(len(specs))
        dn[k] = -1.0
        rows.append(CandidateRow(up, hi, f"{spec.name}_upper"))
        rows.append(CandidateRow(dn, -lo, f"{spec.name}_lower"))
    return CandidateSet(signals=specs, rows=rows, activity_tol=activity_tol)


def monotone_chain_hull(points: np.ndarray) -> np.ndarray:
    """Convex hull vertices in counterclockwise order (Andrew's monotone chain)."""
    pts = np.unique(points, axis=0)
    if pts.shape[0] < 3:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper = []
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def build_hull_candidates_2d(traj: Trajectory, spec_pair,
                             activity_tol: float = 1e-6) -> CandidateSet:
    """Half-space rows of the 2-D convex hull of a signal pair.

    Falls back to box rows (with a diagnostic flag) when the points are
    collinear or fewer than three.
    """
    spec_pair = list(spec_pair)
    if len(spec_pair) != 2:
        raise ValueError("hull candidates need exactly two signals")
    if traj.horizon < 1:
        raise ValueError("cannot build candidates from an empty trajectory")
    za = signal_values(spec_pair[0], traj)
    zb = signal_values(spec_pair[1], traj)
    ok = np.isfinite(za) & np.isfinite(zb)
    pts = np.stack([za[ok], zb[ok]], axis=1)
    if pts.shape[0] < 1:
        raise ValueError("no jointly defined samples for the signal pair")
    hull = monotone_chain_hull(pts)
    if hull.shape[0] < 3:
        out = build_box_candidates(traj, spec_pair, activity_tol)
        out.diagnostics["hull_fallback"] = True
        return out
    rows = []
    nv = hull.shape[0]
    for k in range(nv):
        a, b = hull[k], hull[(k + 1) % nv]
        d = b - a
        normal = np.array([d[1], -d[0]])
        normal /= np.linalg.norm(normal)
        rows.append(CandidateRow(normal, float(normal @ a), f"hull_{k}"))
    cs = CandidateSet(signals=spec_pair, rows=rows, activity_tol=activity_tol)
    cs.diagnostics["hull_vertices"] = hull.tolist()
    return cs


def evaluate_activity(cset: CandidateSet, traj: Trajectory):
    """Activity matrix and raw constraint values over the segment.

    Row j is active at step i when ``|normal_j . z_i - offset_j|`` is within
    the relative tolerance ``activity_tol * (1 + |offset_j|)``.
    """
    vals = cset.values(traj)
    tol = cset.activity_tol * (1.0 + np.abs(np.array([r.offset for r in cset.rows])))
    with np.errstate(invalid="ignore"):
        active = np.abs(vals) <= tol
    active &= np.isfinite(vals)
    return active, vals


def candidate_set_to_json(cset: CandidateSet) -> dict:
    return {
        "signals": [{"kind": s.kind, "index": s.index} for s in cset.signals],
        "rows": [{"label": r.label, "normal": list(map(float, r.normal)),
                  "offset": float(r.offset)} for r in cset.rows],
        "activity_tol": cset.activity_tol,
        "diagnostics": cset.diagnostics,
    }


def candidate_set_from_json(obj) -> CandidateSet:
    if isinstance(obj, str):
        obj = json.loads(obj)
    signals = [SignalSpec(kind=s["kind"], index=int(s["index"])) for s in obj["signals"]]
    rows = [CandidateRow(np.asarray(r["normal"], dtype=float), float(r["offset"]),
                         r.get("label", f"row_{k}"))
            for k, r in enumerate(obj["rows"])]
    return CandidateSet(signals=signals, rows=rows,
                        activity_tol=float(obj.get("activity_tol", 1e-6)),
                        diagnostics=dict(obj.get("diagnostics", {})))
