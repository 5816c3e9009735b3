"""Deformation Jacobian of control-point positions with respect to the rod's initial values.

Columns follow a fixed block order ``[dp0 (3), dtheta0 (3), dn0 (3), dm0 (3)]``.
Rotation columns perturb ``R0 <- R0 exp(hat(delta e_i))`` so their unit is the
radian. In clamped-base mode the two pose blocks are dropped and only the
wrench columns remain.
"""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ArcLengthError, JacobianError
from .rod import BoundaryState, RodParameters, integrate_arrays, interpolate_positions, interpolation_weights
from .so3 import exp_so3

BLOCKS = ("dp0", "dtheta0", "dn0", "dm0")
AXES = ("x", "y", "z")


class BoundaryConditionMode(enum.Enum):
    BI_ARM = "biarm"
    CLAMPED_BASE = "clamped"

    @property
    def blocks(self) -> tuple[str, ...]:
        return BLOCKS if self is BoundaryConditionMode.BI_ARM else BLOCKS[2:]

    @property
    def n_columns(self) -> int:
        return 3 * len(self.blocks)

    @property
    def column_labels(self) -> list[str]:
        return [f"{b}.{a}" for b in self.blocks for a in AXES]


@dataclass(frozen=True)
class ControlPointLayout:
    arclengths: tuple[float, ...]

    def __post_init__(self):
        s = tuple(float(x) for x in self.arclengths)
        if len(s) < 2:
            raise ValueError("at least two control points are required")
        if any(b <= a for a, b in zip(s, s[1:])):
            raise ValueError("control-point arclengths must be strictly increasing")
        object.__setattr__(self, "arclengths", s)

    @property
    def n_points(self) -> int:
        return len(self.arclengths)

    @classmethod
    def uniform(cls, length: float, n_points: int) -> "ControlPointLayout":
        """Interior points at ``L i / (n + 1)``; the grippers carry the ends."""
        return cls(tuple(length * (i + 1) / (n_points + 1) for i in range(n_points)))

    def validate(self, length: float) -> None:
        if self.arclengths[0] < 0.0 or self.arclengths[-1] > length:
            raise ArcLengthError(f"control points must lie in [0, {length}]")


@dataclass(frozen=True)
class PerturbationDeltas:
    """Finite-difference step per column block.

    ``None`` for a wrench block means: scale from the stiffness, which keeps the
    induced displacement in a useful range from rubber to steel.
    """

    position: float = 1e-5
    rotation: float = 1e-5
    force: Optional[float] = None
    moment: Optional[float] = None
    relative: float = 1e-5

    def resolve(self, params: RodParameters) -> np.ndarray:
        """Step sizes in block order (position, rotation, force, moment)."""
        L = params.length
        force = self.force if self.force is not None else self.relative * np.linalg.norm(params.kr) / L**3
        moment = self.moment if self.moment is not None else self.relative * np.linalg.norm(params.kr) / L**2
        out = np.array([self.position, self.rotation, force, moment], dtype=float)
        if not np.all(out > 0):
            raise ValueError("perturbation magnitudes must be strictly positive")
        return out


@dataclass(frozen=True, eq=False)
class DeformationJacobian:
    matrix: np.ndarray
    singular_values: np.ndarray
    U: np.ndarray
    Vt: np.ndarray
    mode: BoundaryConditionMode
    damping: float = 0.0

    @classmethod
    def from_matrix(cls, matrix, mode: BoundaryConditionMode, damping: float = 0.0) -> "DeformationJacobian":
        matrix = np.asarray(matrix, dtype=float)
        if matrix.shape[1] != mode.n_columns:
            raise ValueError(f"{mode.value} Jacobian needs {mode.n_columns} columns, got {matrix.shape[1]}")
        U, sv, Vt = np.linalg.svd(matrix, full_matrices=False)
        return cls(matrix, sv, U, Vt, mode, float(damping))

    def with_damping(self, damping: float) -> "DeformationJacobian":
        return DeformationJacobian(self.matrix, self.singular_values, self.U, self.Vt, self.mode, float(damping))

    @property
    def column_labels(self) -> list[str]:
        return self.mode.column_labels

    @property
    def wrench_block(self) -> np.ndarray:
        return self.matrix[:, -6:]

    def to_csv(self, fh=None) -> str:
        buf = io.StringIO() if fh is None else fh
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["row", *self.column_labels])
        for i, row in enumerate(self.matrix):
            w.writerow([f"c{i // 3}.{AXES[i % 3]}", *(repr(float(x)) for x in row)])
        return buf.getvalue() if fh is None else ""


def apply_increment(gamma0: BoundaryState, delta: np.ndarray, mode: BoundaryConditionMode) -> BoundaryState:
    """``gamma0 (+) delta``: additive on p0, n0, m0 and right exponential on R0."""
    delta = np.asarray(delta, dtype=float)
    if delta.shape != (mode.n_columns,):
        raise ValueError(f"increment must have {mode.n_columns} entries")
    if mode is BoundaryConditionMode.CLAMPED_BASE:
        return BoundaryState(gamma0.p, gamma0.R, gamma0.n + delta[0:3], gamma0.m + delta[3:6])
    return BoundaryState(
        gamma0.p + delta[0:3],
        gamma0.R @ exp_so3(delta[3:6]),
        gamma0.n + delta[6:9],
        gamma0.m + delta[9:12],
    )


def perturbation_batch(gamma0: BoundaryState, mode: BoundaryConditionMode, steps: np.ndarray, sign: float = 1.0):
    """Stacked initial values: the unperturbed state first, then one per column.

    ``steps`` holds the per-block magnitudes in (position, rotation, force,
    moment) order; the blocks absent from ``mode`` are ignored.
    """
    k = mode.n_columns
    P0 = np.repeat(gamma0.p[None], k + 1, axis=0)
    R0 = np.repeat(gamma0.R[None], k + 1, axis=0)
    N0 = np.repeat(gamma0.n[None], k + 1, axis=0)
    M0 = np.repeat(gamma0.m[None], k + 1, axis=0)
    cols = []
    col = 1
    for block in mode.blocks:
        h = sign * steps[BLOCKS.index(block)]
        for a in range(3):
            e = np.zeros(3)
            e[a] = h
            if block == "dp0":
                P0[col] += e
            elif block == "dtheta0":
                R0[col] = gamma0.R @ exp_so3(e)
            elif block == "dn0":
                N0[col] += e
            else:
                M0[col] += e
            cols.append(h)
            col += 1
    return P0, R0, N0, M0, np.array(cols)


def _check_bad(bad: np.ndarray, labels: Sequence[str], ds: float, offset: int = 1) -> None:
    if bad[0] >= 0:
        raise JacobianError("unperturbed", float(bad[0] * ds))
    for j, b in enumerate(bad[offset:]):
        if b >= 0:
            raise JacobianError(labels[j], float(b * ds))


def control_point_response(gamma0: BoundaryState, params: RodParameters, layout: ControlPointLayout,
                           mode: BoundaryConditionMode, steps: np.ndarray, sign: float = 1.0):
    """Control-point positions for the unperturbed and each perturbed initial state.

    Returns ``(base, perturbed, h)``: stacked (3 n_c,) base positions, the
    (m_l, 3 n_c) perturbed positions and the signed step per column.
    """
    layout.validate(params.length)
    P0, R0, N0, M0, h = perturbation_batch(gamma0, mode, steps, sign)
    P, _, _, _, bad = integrate_arrays(P0, R0, N0, M0, params)
    _check_bad(bad, mode.column_labels, params.ds)
    idx, w = interpolation_weights(layout.arclengths, params.length, params.n_steps)
    pts = interpolate_positions(P, idx, w).reshape(len(P0), -1)
    return pts[0], pts[1:], h


def compute_jacobian(gamma0_hat: BoundaryState, params: RodParameters, layout: ControlPointLayout,
                     mode: BoundaryConditionMode, deltas: Optional[PerturbationDeltas] = None,
                     damping: float = 0.0) -> DeformationJacobian:
    """Forward-difference Jacobian, one integration per perturbable component.

    Column ``j`` is ``(p_c(gamma0 + delta_j) - p_c(gamma0)) / delta_j``.
    """
    steps = (deltas or PerturbationDeltas()).resolve(params)
    base, pert, h = control_point_response(gamma0_hat, params, layout, mode, steps)
    matrix = ((pert - base[None]) / h[:, None]).T
    return DeformationJacobian.from_matrix(matrix, mode, damping)


def central_difference_jacobian(gamma0: BoundaryState, params: RodParameters, layout: ControlPointLayout,
                                mode: BoundaryConditionMode, steps: np.ndarray) -> np.ndarray:
    """Independent central-difference reference; used only for verification."""
    _, plus, h = control_point_response(gamma0, params, layout, mode, steps, 1.0)
    _, minus, _ = control_point_response(gamma0, params, layout, mode, steps, -1.0)
    return ((plus - minus) / (2.0 * h[:, None])).T


def damped_pinv(jac: DeformationJacobian, damping: Optional[float] = None) -> np.ndarray:
    """``V diag(s / (s^2 + eps^2)) U^T``; the Moore-Penrose inverse when ``eps`` is zero."""
    eps = jac.damping if damping is None else damping
    s = jac.singular_values
    denom = s * s + eps * eps
    s_inv = np.divide(s, denom, out=np.zeros_like(s), where=denom > 0.0)
    return (jac.Vt.T * s_inv) @ jac.U.T


def stability_margin(jac: DeformationJacobian) -> float:
    """Smallest singular value of the (3 n_c x 6) force/moment column block."""
    return float(np.linalg.svd(jac.wrench_block, compute_uv=False)[-1])
