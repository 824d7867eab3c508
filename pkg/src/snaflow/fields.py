"""Parameter-dependent non-autonomous vector fields with exact partials.

Every family evaluates F(theta, x) together with its first and second partial
derivatives analytically (nothing is finite-differenced here). Evaluation
methods are numpy-vectorised: ``theta`` has shape (n, D) and ``x`` shape (n,);
scalars broadcast. Families are immutable; the bifurcation parameter ``beta``
is a call-site argument, never state, so concurrent sweeps need no locking.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .torus import TorusPoint, nearest_lift_offset

__all__ = [
    "BumpProfile",
    "FieldEval",
    "ForcedField",
    "RadialLogistic",
    "Cos11",
    "LogisticHarvest",
    "AutonomousRiccati",
    "eval_field",
    "bump_value",
    "radial_to_harvest",
]


@dataclass(frozen=True)
class BumpProfile:
    """Radial bump h(y) = (1 - (y/R)^2)^3 on [0, R), zero beyond.

    h(0) = 1, h'(0) = 0, h''(0) = -6/R^2 < 0, h' < 0 on (0, R), and value,
    first and second derivative all vanish at y = R, so h is C^2 on [0, inf).
    """

    R_support: float

    def __post_init__(self):
        if not (self.R_support > 0.0):
            raise ValueError("bump support radius must be positive")

    def triple(self, y):
        """(h, h', h'') at y >= 0, vectorised."""
        y = np.asarray(y, dtype=float)
        if np.any(y < 0.0):
            raise ValueError("bump argument must be nonnegative")
        R2 = self.R_support**2
        u = 1.0 - y * y / R2
        inside = u > 0.0
        u = np.where(inside, u, 0.0)
        h = u**3
        hp = np.where(inside, -6.0 * y / R2 * u * u, 0.0)
        hpp = np.where(inside, -6.0 / R2 * u * u + 24.0 * y * y / (R2 * R2) * u, 0.0)
        return h, hp, hpp


def bump_value(profile: BumpProfile, y):
    """Exact (h, h', h'') triple; the zero triple for y >= R."""
    h, hp, hpp = profile.triple(y)
    if np.ndim(y) == 0:
        return float(h), float(hp), float(hpp)
    return h, hp, hpp


@dataclass(frozen=True)
class FieldEval:
    """All exact partials of one field evaluation at (theta, x, beta).

    ``dtheta``/``dtheta2``/``dtheta_dx`` are directional along the supplied
    unit vector.
    """

    value: float
    dx: float
    dxx: float
    dtheta: float
    dtheta2: float
    dtheta_dx: float
    dbeta: float


class ForcedField:
    """Shared behaviour of the built-in families."""

    D: int
    beta_range: tuple
    theta_independent: bool = False

    def check_beta(self, beta: float) -> None:
        lo, hi = self.beta_range
        if not (lo <= beta <= hi):
            raise ValueError(f"beta = {beta} outside beta_range [{lo}, {hi}]")

    # Partials; subclasses implement the *_raw methods on broadcast arrays.
    def value(self, beta, theta, x):
        raise NotImplementedError

    def dx(self, beta, theta, x):
        raise NotImplementedError

    def dxx(self, beta, theta, x):
        raise NotImplementedError

    def dtheta(self, beta, theta, x, direction):
        raise NotImplementedError

    def dtheta2(self, beta, theta, x, direction):
        raise NotImplementedError

    def dtheta_dx(self, beta, theta, x, direction):
        raise NotImplementedError

    def dbeta(self, beta, theta, x):
        raise NotImplementedError

    # Section geometry used by the invariant-graph machinery.
    def section_bounds(self) -> tuple:
        """(gamma_minus, gamma_plus): vertical extent of the working section."""
        raise NotImplementedError

    def default_escape(self) -> tuple:
        """Default blow-up guard window for the integrator."""
        raise NotImplementedError


def _as_direction(direction, D):
    v = np.atleast_1d(np.asarray(direction, dtype=float))
    if v.size == D - 1:
        v = np.concatenate([v, [0.0]])  # section direction lifted into T^D
    if v.size != D:
        raise ValueError(f"direction must have {D} (or {D - 1}) components")
    n = float(np.linalg.norm(v))
    if not math.isclose(n, 1.0, rel_tol=0.0, abs_tol=1e-9):
        raise ValueError("direction must be a unit vector")
    return v


@dataclass(frozen=True)
class RadialLogistic(ForcedField):
    """F_beta(theta, x) = -b x^2 + b - beta * b/(1 - b^(-1/2)) * h(|theta - center|).

    The forcing is a radially symmetric bump around ``center`` on T^D; b > 1.
    """

    b: float
    bump: BumpProfile
    center: np.ndarray
    beta_range: tuple = (0.0, 1.0)

    def __init__(self, b, bump, center, beta_range=(0.0, 1.0)):
        if b <= 1.0:
            raise ValueError("RadialLogistic requires b > 1")
        c = TorusPoint(center).coords
        object.__setattr__(self, "b", float(b))
        object.__setattr__(self, "bump", bump)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "beta_range", (float(beta_range[0]), float(beta_range[1])))
        object.__setattr__(self, "D", c.size)

    @property
    def forcing_coeff(self) -> float:
        """b / (1 - b^(-1/2)): scale of the beta-term."""
        return self.b / (1.0 - self.b ** (-0.5))

    # -- bump field g(theta) = h(|theta - center|) as a polynomial in the lift
    def _offsets(self, theta):
        return nearest_lift_offset(theta, self.center)

    def _g(self, theta):
        u = self._offsets(theta)
        q = np.sum(u * u, axis=-1)
        R2 = self.bump.R_support**2
        w = np.maximum(1.0 - q / R2, 0.0)
        return w * w * w

    def _g_dir(self, theta, v):
        u = self._offsets(theta)
        q = np.sum(u * u, axis=-1)
        R2 = self.bump.R_support**2
        w = np.maximum(1.0 - q / R2, 0.0)
        uv = u @ v
        g1 = -6.0 / R2 * w * w * uv
        g2 = -6.0 / R2 * w * w + 24.0 / (R2 * R2) * w * uv * uv
        return g1, g2

    def value(self, beta, theta, x):
        b = self.b
        return -b * x * x + b - beta * self.forcing_coeff * self._g(theta)

    def dx(self, beta, theta, x):
        return -2.0 * self.b * x

    def dxx(self, beta, theta, x):
        return np.broadcast_to(-2.0 * self.b, np.shape(x)) if np.ndim(x) else -2.0 * self.b

    def dtheta(self, beta, theta, x, direction):
        g1, _ = self._g_dir(theta, direction)
        return -beta * self.forcing_coeff * g1

    def dtheta2(self, beta, theta, x, direction):
        _, g2 = self._g_dir(theta, direction)
        return -beta * self.forcing_coeff * g2

    def dtheta_dx(self, beta, theta, x, direction):
        return np.zeros(np.shape(x)) if np.ndim(x) else 0.0

    def dbeta(self, beta, theta, x):
        return -self.forcing_coeff * self._g(theta)

    def section_bounds(self):
        return (-1.0, 1.25)

    def default_escape(self):
        return (-10.0, 10.0)


def _cos_pow(c, n):
    """c**n for n in {9, 10, 11} by squaring; exact sign for odd n."""
    c2 = c * c
    c4 = c2 * c2
    c8 = c4 * c4
    if n == 9:
        return c8 * c
    if n == 10:
        return c8 * c2
    if n == 11:
        return c8 * c2 * c
    raise ValueError(n)


@dataclass(frozen=True)
class Cos11(ForcedField):
    """F_beta(theta, x) = -x^2 + b - beta * (2 - cos^11(2 pi theta_1) - cos^11(2 pi theta_2)) / 4.

    Two-frequency forcing with a unique forcing maximum at (1/2, 1/2); D = 2.
    """

    b: float
    beta_range: tuple = (0.0, 400.0)
    D: int = field(default=2, init=False)

    def __post_init__(self):
        object.__setattr__(self, "beta_range", (float(self.beta_range[0]), float(self.beta_range[1])))

    def _w(self, theta):
        c1 = np.cos(2.0 * np.pi * theta[..., 0])
        c2 = np.cos(2.0 * np.pi * theta[..., 1])
        return (2.0 - _cos_pow(c1, 11) - _cos_pow(c2, 11)) / 4.0

    def _w_dir(self, theta, v):
        two_pi = 2.0 * np.pi
        a1 = two_pi * theta[..., 0]
        a2 = two_pi * theta[..., 1]
        c1, s1 = np.cos(a1), np.sin(a1)
        c2, s2 = np.cos(a2), np.sin(a2)
        # d/dtheta_j of -(cos^11)/4 is (11 pi / 2) sin cos^10
        d1 = 5.5 * np.pi * s1 * _cos_pow(c1, 10)
        d2 = 5.5 * np.pi * s2 * _cos_pow(c2, 10)
        # second derivative: 11 pi^2 (cos^11 - 10 sin^2 cos^9)
        pi2 = np.pi * np.pi
        dd1 = 11.0 * pi2 * (_cos_pow(c1, 11) - 10.0 * s1 * s1 * _cos_pow(c1, 9))
        dd2 = 11.0 * pi2 * (_cos_pow(c2, 11) - 10.0 * s2 * s2 * _cos_pow(c2, 9))
        w1 = v[0] * d1 + v[1] * d2
        w2 = v[0] * v[0] * dd1 + v[1] * v[1] * dd2
        return w1, w2

    def value(self, beta, theta, x):
        return -x * x + self.b - beta * self._w(theta)

    def dx(self, beta, theta, x):
        return -2.0 * x

    def dxx(self, beta, theta, x):
        return np.broadcast_to(-2.0, np.shape(x)) if np.ndim(x) else -2.0

    def dtheta(self, beta, theta, x, direction):
        w1, _ = self._w_dir(theta, direction)
        return -beta * w1

    def dtheta2(self, beta, theta, x, direction):
        _, w2 = self._w_dir(theta, direction)
        return -beta * w2

    def dtheta_dx(self, beta, theta, x, direction):
        return np.zeros(np.shape(x)) if np.ndim(x) else 0.0

    def dbeta(self, beta, theta, x):
        return -self._w(theta)

    def section_bounds(self):
        s = math.sqrt(self.b)
        return (-s, 1.25 * s)

    def default_escape(self):
        s = math.sqrt(self.b)
        return (-2.5 * s, 2.5 * s)


@dataclass(frozen=True)
class LogisticHarvest(ForcedField):
    """L_beta(theta, x) = (2/r) b x (r - x) - beta * b/(1 - b^(-1/2)) * h(|theta - center|).

    Logistic growth toward carrying capacity r with the same additive
    harvesting term as RadialLogistic; the affine change x -> r(x+1)/2
    carries the unforced RadialLogistic flow onto this one.
    """

    b: float
    r: float
    bump: BumpProfile
    center: np.ndarray
    beta_range: tuple = (0.0, 1.0)

    def __init__(self, b, r, bump, center, beta_range=(0.0, 1.0)):
        if b <= 1.0:
            raise ValueError("LogisticHarvest requires b > 1")
        if r <= 0.0:
            raise ValueError("carrying capacity r must be positive")
        c = TorusPoint(center).coords
        object.__setattr__(self, "b", float(b))
        object.__setattr__(self, "r", float(r))
        object.__setattr__(self, "bump", bump)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "beta_range", (float(beta_range[0]), float(beta_range[1])))
        object.__setattr__(self, "D", c.size)

    @property
    def forcing_coeff(self) -> float:
        return self.b / (1.0 - self.b ** (-0.5))

    def _radial(self):
        return RadialLogistic(self.b, self.bump, self.center, self.beta_range)

    def value(self, beta, theta, x):
        grow = (2.0 * self.b / self.r) * x * (self.r - x)
        return grow - beta * self.forcing_coeff * self._radial()._g(theta)

    def dx(self, beta, theta, x):
        return 2.0 * self.b - (4.0 * self.b / self.r) * x

    def dxx(self, beta, theta, x):
        v = -4.0 * self.b / self.r
        return np.broadcast_to(v, np.shape(x)) if np.ndim(x) else v

    def dtheta(self, beta, theta, x, direction):
        return self._radial().dtheta(beta, theta, x, direction)

    def dtheta2(self, beta, theta, x, direction):
        return self._radial().dtheta2(beta, theta, x, direction)

    def dtheta_dx(self, beta, theta, x, direction):
        return np.zeros(np.shape(x)) if np.ndim(x) else 0.0

    def dbeta(self, beta, theta, x):
        return self._radial().dbeta(beta, theta, x)

    def section_bounds(self):
        return (0.0, 1.125 * self.r)

    def default_escape(self):
        return (-4.5 * self.r, 5.5 * self.r)


@dataclass(frozen=True)
class AutonomousRiccati(ForcedField):
    """F_beta(theta, x) = a2 x^2 + a0 + beta_slope * beta^beta_power, theta-independent.

    Oracle family: closed-form tanh/tan solutions make it the test oracle for
    the integrator and the bifurcation machinery. ``beta_power`` (default 1)
    admits monotone reparameterisations of the forcing.
    """

    a2: float
    a0: float
    beta_slope: float = 0.0
    beta_power: int = 1
    beta_range: tuple = (0.0, 1.0)
    dim: int = 2
    theta_independent: bool = True

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError("base dimension D must be >= 2")
        object.__setattr__(self, "D", int(self.dim))
        object.__setattr__(self, "beta_range", (float(self.beta_range[0]), float(self.beta_range[1])))

    def forcing(self, beta: float) -> float:
        return self.beta_slope * beta**self.beta_power

    def value(self, beta, theta, x):
        return self.a2 * x * x + self.a0 + self.forcing(beta)

    def dx(self, beta, theta, x):
        return 2.0 * self.a2 * x

    def dxx(self, beta, theta, x):
        v = 2.0 * self.a2
        return np.broadcast_to(v, np.shape(x)) if np.ndim(x) else v

    def dtheta(self, beta, theta, x, direction):
        return np.zeros(np.shape(x)) if np.ndim(x) else 0.0

    def dtheta2(self, beta, theta, x, direction):
        return np.zeros(np.shape(x)) if np.ndim(x) else 0.0

    def dtheta_dx(self, beta, theta, x, direction):
        return np.zeros(np.shape(x)) if np.ndim(x) else 0.0

    def dbeta(self, beta, theta, x):
        v = self.beta_slope * self.beta_power * beta ** (self.beta_power - 1)
        return np.broadcast_to(v, np.shape(x)) if np.ndim(x) else v

    def _equilibrium_scale(self) -> float:
        if self.a2 >= 0.0 or self.a0 <= 0.0:
            return 1.0
        return math.sqrt(self.a0 / abs(self.a2))

    def section_bounds(self):
        s = self._equilibrium_scale()
        return (-s, 1.25 * s)

    def default_escape(self):
        s = 10.0 * (self._equilibrium_scale() + 1.0)
        return (-s, s)


def eval_field(family: ForcedField, beta: float, theta, x: float, direction=None) -> FieldEval:
    """Evaluate F and all exposed partials at a single point.

    ``direction`` is a unit vector in R^D, or in R^(D-1) for a section
    direction (lifted with a zero final component); defaults to the first
    coordinate axis.
    """
    family.check_beta(beta)
    th = TorusPoint(theta).coords if not isinstance(theta, TorusPoint) else theta.coords
    if th.size != family.D:
        raise ValueError(f"theta must have {family.D} components")
    if direction is None:
        direction = np.eye(family.D)[0]
    v = _as_direction(direction, family.D)
    t = th[None, :]
    xs = np.asarray([float(x)])
    return FieldEval(
        value=float(np.asarray(family.value(beta, t, xs))[0]),
        dx=float(np.asarray(family.dx(beta, t, xs))[0]),
        dxx=float(np.asarray(family.dxx(beta, t, xs))[0]),
        dtheta=float(np.asarray(family.dtheta(beta, t, xs, v))[0]),
        dtheta2=float(np.asarray(family.dtheta2(beta, t, xs, v))[0]),
        dtheta_dx=float(np.asarray(family.dtheta_dx(beta, t, xs, v))[0]),
        dbeta=float(np.asarray(family.dbeta(beta, t, xs))[0]),
    )


def radial_to_harvest(family: RadialLogistic, r: float) -> LogisticHarvest:
    """Conjugate logistic-harvest family of a RadialLogistic field.

    The affine change x -> r(x+1)/2 maps the unforced flows onto each other;
    the beta-term is carried over unchanged (it is x-independent), which for
    r != 2 amounts to a linear rescaling of beta.
    """
    if r <= 0.0:
        raise ValueError("carrying capacity r must be positive")
    return LogisticHarvest(family.b, r, family.bump, family.center, family.beta_range)
