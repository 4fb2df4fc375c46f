"""
Asteroid gravity: exterior spherical-harmonic expansion and the homogeneous
triaxial ellipsoid.

Harmonic potential (fully normalized Stokes coefficients)::

    U = mu/r * sum_n (R/r)^n sum_m Pbar_nm(sin lat) (C_nm cos m lon + S_nm sin m lon)

The Legendre functions are generated with the forward column recursion on
``Abar_nm(u) = Pbar_nm(u) / cos(lat)^m``, which are polynomials in
``u = z/r``.  Combined with ``(x + i y)^m = r^m cos(lat)^m exp(i m lon)`` this
gives a pole-free Cartesian form whose gradient follows by differentiating the
recursion exactly.

Ellipsoid acceleration uses Carlson's R_D::

    a_i = -mu x_i R_D(a_j^2 + lam, a_k^2 + lam, a_i^2 + lam)

with ``lam`` the confocal parameter of the point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy.optimize import brentq
from scipy.special import elliprd, elliprf

from .errors import GravityDomainError


@dataclass(frozen=True)
class HarmonicField:
    """Normalized spherical-harmonic gravity field.

    Attributes:
        mu: gravitational parameter [km^3/s^2].
        ref_radius: reference radius of the expansion [km].
        degree, order: maximum degree and order stored.
        C, S: (degree+1, degree+1) arrays indexed ``[n, m]``.
        brillouin_radius: radius inside which evaluation is refused
            (``policy='error'``) or allowed anyway (``policy='extrapolate'``).
    """

    mu: float
    ref_radius: float
    degree: int
    order: int
    C: np.ndarray
    S: np.ndarray
    brillouin_radius: Optional[float] = None
    policy: str = "error"
    _a: np.ndarray = field(init=False, repr=False, compare=False)
    _b: np.ndarray = field(init=False, repr=False, compare=False)
    _diag: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.order > self.degree:
            raise ValueError("order exceeds degree")
        C = np.array(self.C, dtype=float)
        S = np.array(self.S, dtype=float)
        shape = (self.degree + 1, self.degree + 1)
        if C.shape != shape or S.shape != shape:
            raise ValueError(f"coefficient tables must be {shape}")
        if C[0, 0] != 1.0:
            raise ValueError("C[0][0] must equal 1")
        if not (np.all(np.isfinite(C)) and np.all(np.isfinite(S))):
            raise ValueError("non-finite coefficient")
        if self.policy not in ("error", "extrapolate"):
            raise ValueError("policy must be 'error' or 'extrapolate'")
        C.setflags(write=False)
        S.setflags(write=False)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "S", S)
        if self.brillouin_radius is None:
            object.__setattr__(self, "brillouin_radius", float(self.ref_radius))
        a, b, diag = _recursion_tables(self.degree)
        object.__setattr__(self, "_a", a)
        object.__setattr__(self, "_b", b)
        object.__setattr__(self, "_diag", diag)

    def truncated(self, cap_degree: int) -> "HarmonicField":
        cap = min(cap_degree, self.degree)
        return HarmonicField(self.mu, self.ref_radius, cap, min(self.order, cap),
                             self.C[:cap + 1, :cap + 1], self.S[:cap + 1, :cap + 1],
                             self.brillouin_radius, self.policy)


@dataclass(frozen=True)
class EllipsoidField:
    """Homogeneous triaxial ellipsoid with semi-axes a >= b >= c > 0."""

    a: float
    b: float
    c: float
    mu: float

    def __post_init__(self):
        if not (self.a >= self.b >= self.c > 0.0):
            raise ValueError("semi-axes must satisfy a >= b >= c > 0")

    @property
    def semi_axes(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c])


def _recursion_tables(degree: int):
    n_max = degree + 1
    a = np.zeros((n_max, n_max))
    b = np.zeros((n_max, n_max))
    diag = np.ones(n_max)
    for m in range(1, n_max):
        diag[m] = diag[m - 1] * (math.sqrt(3.0) if m == 1 else math.sqrt((2 * m + 1) / (2 * m)))
    for n in range(1, n_max):
        for m in range(0, n):
            a[n, m] = math.sqrt((2 * n + 1) * (2 * n - 1) / ((n - m) * (n + m)))
            if n >= m + 2:
                b[n, m] = math.sqrt((2 * n + 1) * (n + m - 1) * (n - m - 1)
                                    / ((n - m) * (n + m) * (2 * n - 3)))
    return a, b, diag


def _legendre_stripped(field: HarmonicField, cap: int, u: float):
    """Abar_nm(u) and d/du Abar_nm(u) for n <= cap."""
    n_max = cap + 1
    A = np.zeros((n_max, n_max))
    dA = np.zeros((n_max, n_max))
    a, b = field._a, field._b
    for m in range(n_max):
        A[m, m] = field._diag[m]
        if m + 1 < n_max:
            A[m + 1, m] = a[m + 1, m] * u * A[m, m]
            dA[m + 1, m] = a[m + 1, m] * A[m, m]
        for n in range(m + 2, n_max):
            A[n, m] = a[n, m] * u * A[n - 1, m] - b[n, m] * A[n - 2, m]
            dA[n, m] = a[n, m] * (A[n - 1, m] + u * dA[n - 1, m]) - b[n, m] * dA[n - 2, m]
    return A, dA


def _resolve_cap(field: HarmonicField, cap_degree: Optional[int]) -> int:
    if cap_degree is None:
        return field.degree
    if cap_degree < 0 or cap_degree > field.degree:
        raise ValueError(f"cap_degree {cap_degree} outside 0..{field.degree}")
    return cap_degree


def _check_radius(field: HarmonicField, rn: float) -> None:
    if rn == 0.0:
        raise GravityDomainError("harmonic field evaluated at the origin")
    if field.policy == "error" and rn < field.brillouin_radius:
        raise GravityDomainError(
            f"|r| = {rn:.6g} km inside Brillouin sphere {field.brillouin_radius:.6g} km")


def harmonic_potential(r, field: HarmonicField, cap_degree: Optional[int] = None) -> float:
    """Exterior potential [km^2/s^2] truncated at ``cap_degree``."""
    x, y, z = (float(c) for c in r)
    rn = math.sqrt(x * x + y * y + z * z)
    _check_radius(field, rn)
    cap = _resolve_cap(field, cap_degree)
    if cap == 0:
        return field.mu / rn
    xs, ys, u = x / rn, y / rn, z / rn
    A, _ = _legendre_stripped(field, cap, u)
    rho, iota = 1.0, 0.0
    total = np.zeros(cap + 1)
    for m in range(min(cap, field.order) + 1):
        for n in range(m, cap + 1):
            total[n] += A[n, m] * (field.C[n, m] * rho + field.S[n, m] * iota)
        rho, iota = xs * rho - ys * iota, xs * iota + ys * rho
    q = field.ref_radius / rn
    return field.mu / rn * sum(total[n] * q ** n for n in range(cap + 1))


def harmonic_acceleration(r, field: HarmonicField, cap_degree: Optional[int] = None) -> np.ndarray:
    """Gradient of :func:`harmonic_potential` [km/s^2], asteroid-fixed frame."""
    x, y, z = (float(c) for c in r)
    rn = math.sqrt(x * x + y * y + z * z)
    _check_radius(field, rn)
    cap = _resolve_cap(field, cap_degree)
    mu = field.mu
    if cap == 0:
        k = -mu / rn ** 3
        return np.array([k * x, k * y, k * z])

    r2 = rn * rn
    xs, ys, u = x / rn, y / rn, z / rn
    # du/dx_j (times r): (-u xs, -u ys, 1 - u^2)
    du = (-u * xs, -u * ys, 1.0 - u * u)
    A, dA = _legendre_stripped(field, cap, u)
    q = field.ref_radius / rn

    gx = gy = gz = 0.0
    rho_prev, iota_prev = 0.0, 0.0
    rho, iota = 1.0, 0.0
    for m in range(min(cap, field.order) + 1):
        for n in range(m, cap + 1):
            Cnm, Snm = field.C[n, m], field.S[n, m]
            if Cnm == 0.0 and Snm == 0.0:
                continue
            T = Cnm * rho + Snm * iota
            scale = q ** n
            radial = -(n + m + 1) * A[n, m] * T
            polar = dA[n, m] * T
            gx += scale * (radial * xs + polar * du[0] + A[n, m] * m * (Cnm * rho_prev + Snm * iota_prev))
            gy += scale * (radial * ys + polar * du[1] + A[n, m] * m * (-Cnm * iota_prev + Snm * rho_prev))
            gz += scale * (radial * u + polar * du[2])
        rho_prev, iota_prev = rho, iota
        rho, iota = xs * rho - ys * iota, xs * iota + ys * rho
    k = mu / r2
    return np.array([k * gx, k * gy, k * gz])


def _confocal_lambda(r, axes2) -> float:
    x2 = np.asarray(r, dtype=float) ** 2

    def g(lam):
        return float(np.sum(x2 / (axes2 + lam)) - 1.0)

    hi = float(np.sum(x2))
    while g(hi) > 0.0:
        hi *= 2.0
    return brentq(g, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)


def _check_exterior(r, field: EllipsoidField):
    r = np.asarray(r, dtype=float)
    if np.sum((r / field.semi_axes) ** 2) <= 1.0:
        raise GravityDomainError("point inside the ellipsoid")
    return r


def ellipsoid_acceleration(r, field: EllipsoidField) -> np.ndarray:
    """Exterior attraction of a homogeneous ellipsoid [km/s^2]."""
    r = _check_exterior(r, field)
    axes2 = field.semi_axes ** 2
    lam = _confocal_lambda(r, axes2)
    s = axes2 + lam
    rd = np.array([
        elliprd(s[1], s[2], s[0]),
        elliprd(s[0], s[2], s[1]),
        elliprd(s[0], s[1], s[2]),
    ])
    return -field.mu * r * rd


def ellipsoid_potential(r, field: EllipsoidField) -> float:
    """Exterior potential of a homogeneous ellipsoid [km^2/s^2]."""
    r = _check_exterior(r, field)
    axes2 = field.semi_axes ** 2
    lam = _confocal_lambda(r, axes2)
    s = axes2 + lam
    rd = np.array([
        elliprd(s[1], s[2], s[0]),
        elliprd(s[0], s[2], s[1]),
        elliprd(s[0], s[1], s[2]),
    ])
    return float(1.5 * field.mu * elliprf(*s) - 0.5 * field.mu * np.dot(r * r, rd))


def ellipsoid_degree2(field: EllipsoidField, ref_radius: float):
    """Normalized (C20, C22) of a homogeneous ellipsoid aligned with the axes."""
    a2, b2, c2 = field.semi_axes ** 2
    R2 = ref_radius ** 2
    C20 = (2.0 * c2 - a2 - b2) / (10.0 * R2)
    C22 = (a2 - b2) / (20.0 * R2)
    return C20 / math.sqrt(5.0), C22 / math.sqrt(5.0 / 12.0)


@dataclass(frozen=True)
class GravityProvider:
    """Tagged gravity model; calling it returns the acceleration at ``r``."""

    kind: str
    harmonic: Optional[HarmonicField] = None
    ellipsoid: Optional[EllipsoidField] = None
    cap_degree: Optional[int] = None

    def __post_init__(self):
        if self.kind == "harmonic":
            if self.harmonic is None:
                raise ValueError("harmonic provider needs a field")
            _resolve_cap(self.harmonic, self.cap_degree)
        elif self.kind == "ellipsoid":
            if self.ellipsoid is None:
                raise ValueError("ellipsoid provider needs a field")
        else:
            raise ValueError(f"unknown gravity kind {self.kind!r}")

    @classmethod
    def from_harmonic(cls, field: HarmonicField, cap_degree: Optional[int] = None):
        return cls("harmonic", harmonic=field, cap_degree=cap_degree)

    @classmethod
    def from_ellipsoid(cls, field: EllipsoidField):
        return cls("ellipsoid", ellipsoid=field)

    @property
    def mu(self) -> float:
        return self.harmonic.mu if self.kind == "harmonic" else self.ellipsoid.mu

    def acceleration(self, r) -> np.ndarray:
        if self.kind == "harmonic":
            return harmonic_acceleration(r, self.harmonic, self.cap_degree)
        return ellipsoid_acceleration(r, self.ellipsoid)

    def potential(self, r) -> float:
        if self.kind == "harmonic":
            return harmonic_potential(r, self.harmonic, self.cap_degree)
        return ellipsoid_potential(r, self.ellipsoid)

    __call__ = acceleration


def low_fidelity_acceleration(r, provider: GravityProvider) -> np.ndarray:
    """F-hat: the control model's gravity, whatever the provider's kind."""
    return provider.acceleration(r)


# --- coefficient files -------------------------------------------------------

def load_harmonic_field(path: Union[str, Path], policy: str = "error",
                        brillouin_radius: Optional[float] = None) -> HarmonicField:
    """Parse ``mu R_ref degree order`` then ``n m C_nm S_nm`` lines; ``#`` starts a comment."""
    header = None
    entries = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if header is None:
                if len(parts) != 4:
                    raise ValueError(f"{path}:{lineno}: header needs 'mu R_ref degree order'")
                header = (float(parts[0]), float(parts[1]), int(parts[2]), int(parts[3]))
                continue
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: expected 'n m C S'")
            entries.append((int(parts[0]), int(parts[1]), float(parts[2]), float(parts[3])))
    if header is None:
        raise ValueError(f"{path}: missing header")
    mu, ref_radius, degree, order = header
    C = np.zeros((degree + 1, degree + 1))
    S = np.zeros((degree + 1, degree + 1))
    C[0, 0] = 1.0
    for n, m, c, s in entries:
        if not (0 <= m <= n <= degree and m <= order):
            raise ValueError(f"{path}: coefficient ({n},{m}) outside degree/order")
        C[n, m], S[n, m] = c, s
    return HarmonicField(mu, ref_radius, degree, order, C, S,
                         brillouin_radius=brillouin_radius, policy=policy)


def write_harmonic_field(path: Union[str, Path], field: HarmonicField, comment: str = "") -> None:
    lines = []
    for text in comment.splitlines():
        lines.append(f"# {text}")
    lines.append(f"{float(field.mu)!r} {float(field.ref_radius)!r} {field.degree} {field.order}")
    for n in range(field.degree + 1):
        for m in range(min(n, field.order) + 1):
            lines.append(f"{n} {m} {float(field.C[n, m])!r} {float(field.S[n, m])!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def synthetic_field(mu: float, ref_radius: float, ellipsoid: EllipsoidField,
                    degree: int = 8, scale: float = 0.02, seed: int = 0) -> HarmonicField:
    """Degree-2 terms of ``ellipsoid`` plus seeded random higher terms ~ scale/n^2."""
    rng = np.random.default_rng(seed)
    C = np.zeros((degree + 1, degree + 1))
    S = np.zeros((degree + 1, degree + 1))
    C[0, 0] = 1.0
    C[2, 0], C[2, 2] = ellipsoid_degree2(ellipsoid, ref_radius)
    for n in range(3, degree + 1):
        for m in range(n + 1):
            C[n, m] = scale / n ** 2 * rng.standard_normal()
            if m > 0:
                S[n, m] = scale / n ** 2 * rng.standard_normal()
    return HarmonicField(mu, ref_radius, degree, degree, C, S)
