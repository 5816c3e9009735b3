"""Cosserat rod statics: boundary states, parameters and the arclength IVP.

Internal force ``n`` and moment ``m`` are world-frame quantities; the
constitutive law maps them to body strains through ``R.T``::

    p' = R v,   v = Kt^-1 R^T n + v_rest
    R' = R hat(u),   u = Kr^-1 R^T m + u_rest
    n' = -f
    m' = -p' x n - l
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from typing import Iterator, Sequence, Union

import numpy as np

from . import _kernels
from .errors import ArcLengthError, DivergenceError, ParameterError, StateError
from .so3 import Pose, hat, orthonormality_error

SHAPE_CSV_HEADER = (
    ["s", "px", "py", "pz"]
    + [f"r{i}{j}" for i in range(3) for j in range(3)]
    + ["nx", "ny", "nz", "mx", "my", "mz"]
)


def _frozen(a, shape) -> np.ndarray:
    out = np.array(a, dtype=float).reshape(shape)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class BoundaryState:
    """Rod state at one arclength: position, orientation, internal force and moment."""

    p: np.ndarray
    R: np.ndarray
    n: np.ndarray
    m: np.ndarray

    def __post_init__(self):
        try:
            p = _frozen(self.p, 3)
            R = _frozen(self.R, (3, 3))
            n = _frozen(self.n, 3)
            m = _frozen(self.m, 3)
        except ValueError as exc:
            raise StateError(f"malformed boundary state: {exc}") from None
        for name, a in (("p", p), ("R", R), ("n", n), ("m", m)):
            if not np.all(np.isfinite(a)):
                raise StateError(f"non-finite {name} in boundary state")
        if orthonormality_error(R) >= 1e-9 or np.linalg.det(R) <= 0.0:
            raise StateError("R is not a proper rotation")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "m", m)

    @classmethod
    def rest(cls, p=(0.0, 0.0, 0.0), R=None) -> "BoundaryState":
        return cls(np.asarray(p, float), np.eye(3) if R is None else R, np.zeros(3), np.zeros(3))

    @property
    def pose(self) -> Pose:
        return Pose(self.p, self.R)

    @property
    def wrench(self) -> np.ndarray:
        return np.concatenate([self.n, self.m])

    def with_wrench(self, n, m) -> "BoundaryState":
        return replace(self, n=n, m=m)

    def with_pose(self, p, R) -> "BoundaryState":
        return replace(self, p=p, R=R)

    def to_row(self) -> list[float]:
        return np.concatenate([self.p, self.R.ravel(), self.n, self.m]).tolist()

    def __eq__(self, other):
        if not isinstance(other, BoundaryState):
            return NotImplemented
        return all(np.array_equal(getattr(self, k), getattr(other, k)) for k in "pRnm")

    __hash__ = None


@dataclass(frozen=True)
class CircularSection:
    radius: float

    @property
    def area(self) -> float:
        return np.pi * self.radius**2

    @property
    def second_moments(self) -> tuple[float, float]:
        i = np.pi * self.radius**4 / 4.0
        return i, i

    @property
    def torsion_constant(self) -> float:
        return np.pi * self.radius**4 / 2.0


@dataclass(frozen=True)
class SquareSection:
    side: float

    @property
    def area(self) -> float:
        return self.side**2

    @property
    def second_moments(self) -> tuple[float, float]:
        i = self.side**4 / 12.0
        return i, i

    @property
    def torsion_constant(self) -> float:
        # Saint-Venant constant of a square, beta = 0.1406
        return 0.1406 * self.side**4


Section = Union[CircularSection, SquareSection]


@dataclass(frozen=True)
class StiffnessBuilder:
    """Diagonal stiffness matrices from an isotropic material and a cross-section.

    ``Kt = diag(GA, GA, EA)`` and ``Kr = diag(E Ix, E Iy, G J)`` with
    ``G = E / (2 (1 + nu))``. No shear correction factor is applied.
    """

    E: float
    nu: float
    section: Section

    def __post_init__(self):
        if not self.E > 0:
            raise ParameterError("Young modulus must be positive")
        if not -1.0 < self.nu <= 0.5:
            raise ParameterError("Poisson ratio must lie in (-1, 0.5]")
        dims = [getattr(self.section, k) for k in ("radius", "side") if hasattr(self.section, k)]
        if not dims or not dims[0] > 0:
            raise ParameterError("section dimension must be positive")

    @property
    def shear_modulus(self) -> float:
        return self.E / (2.0 * (1.0 + self.nu))

    def kt(self) -> np.ndarray:
        A = self.section.area
        G = self.shear_modulus
        return np.diag([G * A, G * A, self.E * A])

    def kr(self) -> np.ndarray:
        ix, iy = self.section.second_moments
        return np.diag([self.E * ix, self.E * iy, self.shear_modulus * self.section.torsion_constant])


def _check_spd(name: str, K: np.ndarray) -> None:
    if K.shape != (3, 3) or not np.all(np.isfinite(K)):
        raise ParameterError(f"{name} must be a finite 3x3 matrix")
    if not np.allclose(K, K.T, rtol=1e-12, atol=0.0):
        raise ParameterError(f"{name} must be symmetric")
    try:
        np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        raise ParameterError(f"{name} must be positive definite") from None


@dataclass(frozen=True)
class RodParameters:
    length: float
    kt: np.ndarray
    kr: np.ndarray
    v_rest: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    u_rest: np.ndarray = field(default_factory=lambda: np.zeros(3))
    f_dist: np.ndarray = field(default_factory=lambda: np.zeros(3))
    l_dist: np.ndarray = field(default_factory=lambda: np.zeros(3))
    n_steps: int = 100

    def __post_init__(self):
        if not (np.isfinite(self.length) and self.length > 0):
            raise ParameterError("rod length must be positive")
        if int(self.n_steps) != self.n_steps or self.n_steps < 10:
            raise ParameterError("n_steps must be an integer >= 10")
        for name, shape in (("kt", (3, 3)), ("kr", (3, 3)), ("v_rest", 3), ("u_rest", 3), ("f_dist", 3), ("l_dist", 3)):
            try:
                object.__setattr__(self, name, _frozen(getattr(self, name), shape))
            except ValueError:
                raise ParameterError(f"{name} has the wrong shape") from None
        _check_spd("kt", self.kt)
        _check_spd("kr", self.kr)
        object.__setattr__(self, "n_steps", int(self.n_steps))
        object.__setattr__(self, "length", float(self.length))
        object.__setattr__(self, "_kt_inv", np.ascontiguousarray(np.linalg.inv(self.kt)))
        object.__setattr__(self, "_kr_inv", np.ascontiguousarray(np.linalg.inv(self.kr)))

    @classmethod
    def from_material(cls, length: float, E: float, nu: float, section: Section, **kw) -> "RodParameters":
        sb = StiffnessBuilder(E, nu, section)
        return cls(length=length, kt=sb.kt(), kr=sb.kr(), **kw)

    @property
    def ds(self) -> float:
        return self.length / self.n_steps

    @property
    def arclengths(self) -> np.ndarray:
        return np.linspace(0.0, self.length, self.n_steps + 1)

    def scaled(self, kt_factor: float = 1.0, kr_factor: float = 1.0, kr_axes=(1.0, 1.0, 1.0)) -> "RodParameters":
        """Stiffness multiplied by scalars, with ``kr_axes`` scaling Kr per body axis as ``D Kr D``."""
        d = np.sqrt(np.asarray(kr_axes, dtype=float))
        return replace(self, kt=self.kt * kt_factor, kr=(self.kr * kr_factor) * np.outer(d, d))

    def to_dict(self) -> dict:
        return {
            "length_m": self.length,
            "kt_n": self.kt.tolist(),
            "kr_nm2": self.kr.tolist(),
            "v_rest": self.v_rest.tolist(),
            "u_rest_per_m": self.u_rest.tolist(),
            "f_dist_n_per_m": self.f_dist.tolist(),
            "l_dist_nm_per_m": self.l_dist.tolist(),
            "n_steps": self.n_steps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RodParameters":
        kw = dict(length=d["length_m"], kt=d["kt_n"], kr=d["kr_nm2"])
        for key, name in (("v_rest", "v_rest"), ("u_rest_per_m", "u_rest"), ("f_dist_n_per_m", "f_dist"),
                          ("l_dist_nm_per_m", "l_dist"), ("n_steps", "n_steps")):
            if key in d:
                kw[name] = d[key]
        return cls(**kw)

    def __eq__(self, other):
        if not isinstance(other, RodParameters):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    __hash__ = None


def ode_rhs(state: BoundaryState, params: RodParameters):
    """Arclength derivatives ``(dp, dR, dn, dm)`` of the state."""
    R, n, m = state.R, state.n, state.m
    v = params._kt_inv @ (R.T @ n) + params.v_rest
    u = params._kr_inv @ (R.T @ m) + params.u_rest
    dp = R @ v
    dR = R @ hat(u)
    dn = -params.f_dist
    dm = -np.cross(dp, n) - params.l_dist
    return dp, dR, dn, dm


def integrate_arrays(p0, R0, n0, m0, params: RodParameters):
    """Batched IVP on stacked initial values of shape (B, 3) / (B, 3, 3).

    Returns ``(P, R, N, M, bad)`` where ``bad[b]`` is the index of the first
    non-finite sample of trajectory ``b`` or -1.
    """
    p0 = np.ascontiguousarray(p0, dtype=float)
    B = p0.shape[0]
    ns = params.n_steps
    P = np.empty((B, ns + 1, 3))
    Rs = np.empty((B, ns + 1, 3, 3))
    N = np.empty((B, ns + 1, 3))
    M = np.empty((B, ns + 1, 3))
    bad = np.empty(B, dtype=np.int64)
    _kernels.integrate_batch(
        p0,
        np.ascontiguousarray(R0, dtype=float),
        np.ascontiguousarray(n0, dtype=float),
        np.ascontiguousarray(m0, dtype=float),
        params._kt_inv,
        params._kr_inv,
        np.ascontiguousarray(params.v_rest),
        np.ascontiguousarray(params.u_rest),
        np.ascontiguousarray(params.f_dist),
        np.ascontiguousarray(params.l_dist),
        params.length,
        ns,
        P, Rs, N, M, bad,
    )
    return P, Rs, N, M, bad


@dataclass(frozen=True, eq=False)
class RodShape:
    """Uniform arclength samples of an integrated rod, stored as stacked arrays."""

    s: np.ndarray
    p: np.ndarray
    R: np.ndarray
    n: np.ndarray
    m: np.ndarray

    def __post_init__(self):
        for k in ("s", "p", "R", "n", "m"):
            a = np.asarray(getattr(self, k), dtype=float)
            a.flags.writeable = False
            object.__setattr__(self, k, a)

    @property
    def length(self) -> float:
        return float(self.s[-1])

    def __len__(self) -> int:
        return len(self.s)

    def state(self, i: int) -> BoundaryState:
        return BoundaryState(self.p[i], self.R[i], self.n[i], self.m[i])

    @property
    def samples(self) -> list[tuple[float, BoundaryState]]:
        return [(float(self.s[i]), self.state(i)) for i in range(len(self.s))]

    def __iter__(self) -> Iterator[tuple[float, BoundaryState]]:
        return iter(self.samples)

    @property
    def base(self) -> BoundaryState:
        return self.state(0)

    @property
    def tip(self) -> BoundaryState:
        return self.state(-1)

    def rows(self) -> list[list[float]]:
        a = np.column_stack([self.s, self.p, self.R.reshape(-1, 9), self.n, self.m])
        return a.tolist()

    def to_csv(self, fh=None) -> str:
        """CSV with one row per sample: s, p, R (row-major), n, m."""
        buf = io.StringIO() if fh is None else fh
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SHAPE_CSV_HEADER)
        for row in self.rows():
            w.writerow([repr(x) for x in row])
        return buf.getvalue() if fh is None else ""

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[float]]) -> "RodShape":
        a = np.asarray(rows, dtype=float)
        return cls(a[:, 0], a[:, 1:4], a[:, 4:13].reshape(-1, 3, 3), a[:, 13:16], a[:, 16:19])


def integrate_ivp(gamma0: BoundaryState, params: RodParameters) -> RodShape:
    """Fixed-step fourth-order Lie-group Runge-Kutta over ``[0, L]``."""
    P, Rs, N, M, bad = integrate_arrays(
        gamma0.p[None], gamma0.R[None], gamma0.n[None], gamma0.m[None], params
    )
    if bad[0] >= 0:
        raise DivergenceError(float(bad[0] * params.ds))
    return RodShape(params.arclengths, P[0], Rs[0], N[0], M[0])


def interpolation_weights(arclengths, length: float, n_steps: int) -> tuple[np.ndarray, np.ndarray]:
    """Lower sample index and linear weight for each arclength; exact at samples."""
    s = np.asarray(arclengths, dtype=float)
    if np.any(s < 0.0) or np.any(s > length) or not np.all(np.isfinite(s)):
        raise ArcLengthError(f"arclengths must lie in [0, {length}]")
    x = s / length * n_steps
    idx = np.floor(x).astype(np.int64)
    w = x - idx
    snap = np.abs(x - np.round(x)) < 1e-9
    idx[snap] = np.round(x[snap]).astype(np.int64)
    w[snap] = 0.0
    # only s == L can land here, and it is snapped to w == 0
    idx = np.minimum(idx, n_steps)
    return idx, w


def interpolate_positions(P: np.ndarray, idx: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Linear interpolation on sample arrays of shape (..., n_steps+1, 3)."""
    lo = P[..., idx, :]
    hi = P[..., np.minimum(idx + 1, P.shape[-2] - 1), :]
    return lo + w[:, None] * (hi - lo)


def positions_at(shape: RodShape, arclengths) -> np.ndarray:
    """Positions (k, 3) at the requested arclengths."""
    n_steps = len(shape.s) - 1
    idx, w = interpolation_weights(arclengths, shape.length, n_steps)
    return interpolate_positions(shape.p, idx, w)
