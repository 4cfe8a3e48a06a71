"""Physical model layer: system parameters, periodic potentials, the built-in
forcing catalog, and time-Fourier analysis of forcings.

Everything here is immutable after construction and safe to share across
worker processes.
"""

import math
import re
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi


def _as_mass_matrix(mass, d):
    """Normalize a scalar / 1-d / full mass specification to a (d, d) array.

    Returns (matrix, scalar_or_None); scalar is set when M = m * Id, which
    selects the fast integrator path.
    """
    if np.isscalar(mass):
        m = float(mass)
        return m * np.eye(d), m
    arr = np.asarray(mass, dtype=float)
    if arr.ndim == 1:
        if arr.shape != (d,):
            raise ValueError(f"mass: diagonal has length {arr.shape[0]}, expected {d}")
        mat = np.diag(arr)
    elif arr.shape == (d, d):
        mat = arr.copy()
    else:
        raise ValueError(f"mass: expected scalar, length-{d} diagonal or {d}x{d} matrix")
    if np.allclose(mat, mat[0, 0] * np.eye(d), rtol=0.0, atol=0.0):
        return mat, float(mat[0, 0])
    return mat, None


@dataclass(frozen=True)
class SystemParams:
    """Physical constants and the integration step.

    period_T must be an exact integer multiple of dt: the number of steps per
    forcing period I = period_T/dt is used for exact stroboscopic binning.
    """

    d: int = 2
    beta: float = 1.0
    gamma: float = 1.0
    mass: object = 1.0
    dt: float = 0.01
    period_T: float = 1.0
    cell: object = None
    mass_matrix: np.ndarray = field(init=False, repr=False)
    mass_scalar: object = field(init=False, repr=False)
    steps_per_period: int = field(init=False)

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d: dimension must be >= 1")
        for name in ("beta", "gamma", "dt", "period_T"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ValueError(f"{name}: must be a finite positive number, got {v!r}")
        cell = self.cell
        if cell is None:
            cell = np.full(self.d, TWO_PI)
        else:
            cell = np.asarray(cell, dtype=float)
            if cell.shape != (self.d,):
                raise ValueError(f"cell: expected {self.d} per-axis lengths")
            if not np.all(np.isfinite(cell) & (cell > 0)):
                raise ValueError("cell: all lengths must be finite and positive")
        object.__setattr__(self, "cell", cell)
        mat, scal = _as_mass_matrix(self.mass, self.d)
        if not np.allclose(mat, mat.T, rtol=1e-12, atol=0.0):
            raise ValueError("mass: matrix must be symmetric")
        if np.linalg.eigvalsh(mat).min() <= 0.0:
            raise ValueError("mass: matrix must be positive definite")
        object.__setattr__(self, "mass_matrix", mat)
        object.__setattr__(self, "mass_scalar", scal)
        ratio = self.period_T / self.dt
        n = round(ratio)
        if n < 1 or abs(ratio - n) > 1e-9 * max(1.0, ratio):
            raise ValueError(
                f"period_T: must be an integer multiple of dt (period_T/dt = {ratio})"
            )
        object.__setattr__(self, "steps_per_period", int(n))

    @property
    def omega(self):
        return TWO_PI / self.period_T

    def mass_inverse(self):
        return np.linalg.inv(self.mass_matrix)


class Potential:
    """Built-in periodic potential selected by descriptor tag.

    Tags: "cos2d" (d=2), "zero" (any d), "separable-1d" (sum of cos(q_i),
    test potential; genuinely 1-d physics per axis).
    """

    TAGS = ("cos2d", "zero", "separable-1d")

    def __init__(self, descriptor, d=2):
        if descriptor not in self.TAGS:
            raise ValueError(f"potential: unknown descriptor {descriptor!r}")
        if descriptor == "cos2d" and d != 2:
            raise ValueError("potential: cos2d requires d=2")
        self.descriptor = descriptor
        self.d = d

    def value(self, q):
        q = np.asarray(q, dtype=float)
        if self.descriptor == "zero":
            return 0.0
        if self.descriptor == "separable-1d":
            return float(np.sum(np.cos(q)))
        x, y = q[0], q[1]
        return 2.0 * math.cos(2.0 * x) + math.cos(y) + math.cos(x - y)

    def gradient(self, q):
        q = np.asarray(q, dtype=float)
        if self.descriptor == "zero":
            return np.zeros(self.d)
        if self.descriptor == "separable-1d":
            return -np.sin(q)
        x, y = q[0], q[1]
        return np.array(
            [
                -4.0 * math.sin(2.0 * x) - math.sin(x - y),
                -math.sin(y) + math.sin(x - y),
            ]
        )


def eval_potential(pot, q):
    return pot.value(q)


def grad_potential(pot, q):
    return pot.gradient(q)


# Gradient-force catalog: W descriptors usable inside "gradient(...)".
_GRADIENT_WS = {
    "0": (lambda q: 0.0, lambda q: np.zeros(len(np.atleast_1d(q)))),
    "cos(x)": (
        lambda q: math.cos(q[0]),
        lambda q: np.array([-math.sin(q[0])] + [0.0] * (len(q) - 1)),
    ),
    "cos(x)+cos(y)": (
        lambda q: math.cos(q[0]) + math.cos(q[1]),
        lambda q: np.array([-math.sin(q[0]), -math.sin(q[1])] + [0.0] * (len(q) - 2)),
    ),
}

_COSINE_MODE_RE = re.compile(r"^cosine-mode\((\d+)\)$")
_GRADIENT_RE = re.compile(r"^gradient\((.+)\)$")


class ForceField:
    """Time-T-periodic, cell-periodic driving field F(t, q), WITHOUT the
    amplitude eta (the integrator applies eta).

    Descriptor tags:
      "zero"
      "cosine-mode(n)"   exp(beta*V(q)) * (cos(n x), 0, ...)
      "nm"               exp(beta*V(q)) * (-1 + 3 cos(2x), 0, ...)
      "sr"               spatial part of cosine-mode(2), modulated by default
      "constant-dir"     unit vector along x, modulated by default
      "gradient(W)"      -grad W,  W in {0, cos(x), cos(x)+cos(y)}

    `modulated=None` keeps the tag's default (True for "sr"/"constant-dir",
    False otherwise); modulation multiplies the spatial part by cos(omega*t)
    with omega = 2*pi/period_T.
    """

    def __init__(self, descriptor, params, pot, modulated=None):
        self.descriptor = descriptor
        self.params = params
        self.pot = pot
        self.mode_n = 0
        self.w_name = None
        self._grad_w = None
        m = _COSINE_MODE_RE.match(descriptor)
        g = _GRADIENT_RE.match(descriptor)
        if descriptor == "zero":
            kind, default_mod = "zero", False
        elif m:
            kind, default_mod = "cosine-mode", False
            self.mode_n = int(m.group(1))
        elif descriptor == "nm":
            kind, default_mod = "nm", False
        elif descriptor == "sr":
            kind, default_mod = "sr", True
        elif descriptor == "constant-dir":
            kind, default_mod = "constant-dir", True
        elif g:
            kind, default_mod = "gradient", False
            w = g.group(1).replace(" ", "")
            if w not in _GRADIENT_WS:
                raise ValueError(
                    f"force: unknown W in gradient(...): {w!r}; "
                    f"known: {sorted(_GRADIENT_WS)}"
                )
            self.w_name = w
            self._grad_w = _GRADIENT_WS[w][1]
        else:
            raise ValueError(f"force: unknown descriptor {descriptor!r}")
        self.kind = kind
        self.modulated = default_mod if modulated is None else bool(modulated)

    def spatial(self, q):
        """The time-independent spatial factor of F."""
        q = np.asarray(q, dtype=float)
        d = self.params.d
        out = np.zeros(d)
        if self.kind == "zero":
            return out
        if self.kind == "gradient":
            return -self._grad_w(q)
        if self.kind == "constant-dir":
            out[0] = 1.0
            return out
        ebv = math.exp(self.params.beta * self.pot.value(q))
        if self.kind == "cosine-mode":
            out[0] = ebv * math.cos(self.mode_n * q[0])
        elif self.kind == "nm":
            out[0] = ebv * (-1.0 + 3.0 * math.cos(2.0 * q[0]))
        else:  # sr
            out[0] = ebv * math.cos(2.0 * q[0])
        return out

    def eval(self, t, q):
        f = self.spatial(q)
        if self.modulated:
            # reduce t mod T first: keeps cos() exact for huge step counts
            phase = (t % self.params.period_T) * self.params.omega
            f = f * math.cos(phase)
        return f


def eval_force(field_, t, q):
    return field_.eval(t, q)


def _quad_nodes(period_T, n_quad):
    # trapezoid on n_quad panels over one period; endpoints share weight
    ts = np.linspace(0.0, period_T, n_quad + 1)
    w = np.full(n_quad + 1, 1.0 / n_quad)
    w[0] = w[-1] = 0.5 / n_quad
    return ts, w


def time_average_force(field_, q, n_quad=16):
    """(1/T) integral of F(t, q) dt by trapezoid quadrature.

    Exact for trigonometric time dependence once n_quad exceeds twice the
    highest harmonic (all built-ins have harmonic <= 1).
    """
    if n_quad < 2:
        raise ValueError("n_quad must be >= 2")
    period_T = field_.params.period_T
    ts, w = _quad_nodes(period_T, n_quad)
    acc = np.zeros(field_.params.d)
    for t, wk in zip(ts, w):
        acc += wk * field_.eval(t, q)
    return acc


def time_fourier_mode(field_, q, n, n_quad=16):
    """F_n(q) = (1/T) integral of F(t, q) exp(-i n omega t) dt (trapezoid)."""
    if n_quad <= 2 * abs(n):
        raise ValueError("n_quad must exceed 2|n|")
    period_T = field_.params.period_T
    omega = TWO_PI / period_T
    ts, w = _quad_nodes(period_T, n_quad)
    acc = np.zeros(field_.params.d, dtype=complex)
    for t, wk in zip(ts, w):
        acc += wk * field_.eval(t, q) * np.exp(-1j * n * omega * t)
    return acc
