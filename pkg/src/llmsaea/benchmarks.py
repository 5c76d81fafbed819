"""Box-bounded black-box test problems.

Ships the five classical benchmark functions used throughout the test
suite plus a loader for shifted/rotated problem definitions so externally
supplied suites (shift vectors, rotation matrices) can be ingested from
plain JSON files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


@dataclass(frozen=True)
class Problem:
    """An expensive single-objective minimization problem on a box domain.

    :param name: identifier used in result tables
    :param dim: number of decision variables
    :param lower: per-dimension lower bounds, shape (dim,)
    :param upper: per-dimension upper bounds, shape (dim,)
    :param objective: callable mapping a decision vector to a float
    :param optimum_value: known global minimum value, used for the
        function-error metric; ``None`` when unknown (raw best values are
        then reported instead)
    :param optimum_point: a known global minimizer, when available
    """

    name: str
    dim: int
    lower: np.ndarray
    upper: np.ndarray
    objective: Callable[[np.ndarray], float]
    optimum_value: Optional[float] = None
    optimum_point: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != (self.dim,) or hi.shape != (self.dim,):
            raise ValueError("bounds must have shape (dim,)")
        if not np.all(lo < hi):
            raise ValueError("lower bounds must be strictly below upper bounds")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    def evaluate(self, x) -> float:
        """Evaluate the true objective at a single point."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"expected a vector of length {self.dim}, got shape {x.shape}")
        return float(self.objective(x))

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))


# ---------------------------------------------------------------------------
# Classical benchmark functions
# ---------------------------------------------------------------------------

def ellipsoid(x: np.ndarray) -> float:
    """f(x) = sum_j j * x_j^2, global minimum 0 at the origin."""
    j = np.arange(1, x.size + 1)
    return float(np.sum(j * x * x))


def rosenbrock(x: np.ndarray) -> float:
    """f(x) = sum_j 100 (x_{j+1} - x_j^2)^2 + (x_j - 1)^2, minimum 0 at all-ones."""
    return float(np.sum(100.0 * (x[1:] - x[:-1] ** 2) ** 2 + (x[:-1] - 1.0) ** 2))


def ackley(x: np.ndarray) -> float:
    """Ackley function, minimum 0 at the origin."""
    d = x.size
    return float(
        -20.0 * np.exp(-0.2 * np.sqrt(np.sum(x * x) / d))
        - np.exp(np.sum(np.cos(2.0 * np.pi * x)) / d)
        + 20.0
        + np.e
    )


def griewank(x: np.ndarray) -> float:
    """Griewank function, minimum 0 at the origin."""
    j = np.sqrt(np.arange(1, x.size + 1, dtype=float))
    return float(np.sum(x * x) / 4000.0 - np.prod(np.cos(x / j)) + 1.0)


def rastrigin(x: np.ndarray) -> float:
    """f(x) = 10 d + sum_j (x_j^2 - 10 cos(2 pi x_j)), minimum 0 at the origin."""
    return float(10.0 * x.size + np.sum(x * x - 10.0 * np.cos(2.0 * np.pi * x)))


# name -> (objective, (low, high), minimizer builder)
_CLASSICAL = {
    "ellipsoid": (ellipsoid, (-5.12, 5.12), np.zeros),
    "rosenbrock": (rosenbrock, (-2.048, 2.048), np.ones),
    "ackley": (ackley, (-32.768, 32.768), np.zeros),
    "griewank": (griewank, (-600.0, 600.0), np.zeros),
    "rastrigin": (rastrigin, (-5.12, 5.12), np.zeros),
}

CLASSICAL_NAMES = ("Ellipsoid", "Rosenbrock", "Ackley", "Griewank", "Rastrigin")


def make_classical(name: str, dim: int) -> Problem:
    """Build one of the classical benchmark problems on its conventional box.

    :param name: one of ``Ellipsoid``, ``Rosenbrock``, ``Ackley``,
        ``Griewank``, ``Rastrigin`` (case-insensitive)
    :param dim: problem dimension, at least 1
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    key = name.lower()
    if key not in _CLASSICAL:
        raise ValueError(f"unknown classical problem {name!r}; choose from {CLASSICAL_NAMES}")
    fn, (lo, hi), minimizer = _CLASSICAL[key]
    return Problem(
        name=f"{key.capitalize()}{dim}D",
        dim=dim,
        lower=np.full(dim, lo),
        upper=np.full(dim, hi),
        objective=fn,
        optimum_value=0.0,
        optimum_point=minimizer(dim),
    )


# ---------------------------------------------------------------------------
# Shifted / rotated problems loaded from JSON definition files
# ---------------------------------------------------------------------------

def _elliptic(z: np.ndarray) -> float:
    d = z.size
    if d == 1:
        return float(z[0] * z[0])
    w = np.power(1e6, np.arange(d) / (d - 1))
    return float(np.sum(w * z * z))


def _schwefel_1_2(z: np.ndarray) -> float:
    c = np.cumsum(z)
    return float(np.sum(c * c))


def _schwefel_2_21(z: np.ndarray) -> float:
    return float(np.max(np.abs(z)))


def _shifted_rosenbrock_base(z: np.ndarray) -> float:
    # minimum moved to the origin so that optimum_value == bias at the shift
    return rosenbrock(z + 1.0)


def _weierstrass(z: np.ndarray, a: float = 0.5, b: float = 3.0, kmax: int = 20) -> float:
    k = np.arange(kmax + 1)
    ak = a ** k
    bk = b ** k
    inner = np.sum(ak * np.cos(2.0 * np.pi * np.outer(z + 0.5, bk)), axis=1)
    offset = z.size * np.sum(ak * np.cos(np.pi * bk))
    return float(np.sum(inner) - offset)


def _griewank_1d(v: np.ndarray) -> np.ndarray:
    return v * v / 4000.0 - np.cos(v) + 1.0


def _rosenbrock_pairs(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return 100.0 * (y - x * x) ** 2 + (x - 1.0) ** 2


def _expanded_griewank_rosenbrock(z: np.ndarray) -> float:
    w = z + 1.0
    pairs = _rosenbrock_pairs(w, np.roll(w, -1))
    return float(np.sum(_griewank_1d(pairs)))


def _scaffer_f6(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    r2 = x * x + y * y
    return 0.5 + (np.sin(np.sqrt(r2)) ** 2 - 0.5) / (1.0 + 0.001 * r2) ** 2


def _expanded_scaffer_f6(z: np.ndarray) -> float:
    return float(np.sum(_scaffer_f6(z, np.roll(z, -1))))


# base name -> (function with minimum 0 at the origin, default box)
_BASES = {
    "sphere": (lambda z: float(np.sum(z * z)), (-100.0, 100.0)),
    "elliptic": (_elliptic, (-100.0, 100.0)),
    "schwefel_1_2": (_schwefel_1_2, (-100.0, 100.0)),
    "schwefel_2_21": (_schwefel_2_21, (-100.0, 100.0)),
    "rosenbrock": (_shifted_rosenbrock_base, (-100.0, 100.0)),
    "rastrigin": (rastrigin, (-5.0, 5.0)),
    "ackley": (ackley, (-32.0, 32.0)),
    "griewank": (griewank, (-600.0, 600.0)),
    "weierstrass": (_weierstrass, (-0.5, 0.5)),
    "expanded_griewank_rosenbrock": (_expanded_griewank_rosenbrock, (-3.0, 1.0)),
    "expanded_scaffer_f6": (_expanded_scaffer_f6, (-100.0, 100.0)),
}

SHIFTED_BASE_NAMES = tuple(sorted(_BASES))


@dataclass(frozen=True)
class ShiftedRotatedSpec:
    """Parsed contents of a shifted/rotated problem definition file."""

    base: str
    dim: int
    bias: float
    shift: np.ndarray
    rotation: Optional[np.ndarray] = None
    name: Optional[str] = None
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None

    @classmethod
    def from_file(cls, path) -> "ShiftedRotatedSpec":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"malformed problem file {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ValueError(f"malformed problem file {path}: expected a JSON object")
        for key in ("base", "dim"):
            if key not in raw:
                raise ValueError(f"problem file {path} is missing required field {key!r}")
        base = str(raw["base"])
        if base not in _BASES:
            raise ValueError(f"unknown base function {base!r}; choose from {SHIFTED_BASE_NAMES}")
        dim = int(raw["dim"])
        if dim < 1:
            raise ValueError("dim must be >= 1")

        shift = np.asarray(raw.get("shift", np.zeros(dim)), dtype=float)
        if shift.shape != (dim,):
            raise ValueError(f"shift has shape {shift.shape}, expected ({dim},)")

        rotation = None
        if raw.get("rotation") is not None:
            rotation = np.asarray(raw["rotation"], dtype=float)
            if rotation.ndim == 1:
                if rotation.size != dim * dim:
                    raise ValueError(
                        f"row-major rotation has {rotation.size} entries, expected {dim * dim}"
                    )
                rotation = rotation.reshape(dim, dim)
            if rotation.shape != (dim, dim):
                raise ValueError(f"rotation has shape {rotation.shape}, expected ({dim}, {dim})")

        def _bound(key, default):
            if raw.get(key) is None:
                return np.full(dim, default)
            arr = np.asarray(raw[key], dtype=float)
            if arr.ndim == 0:
                return np.full(dim, float(arr))
            if arr.shape != (dim,):
                raise ValueError(f"{key} has shape {arr.shape}, expected ({dim},)")
            return arr

        lo_default, hi_default = _BASES[base][1]
        return cls(
            base=base,
            dim=dim,
            bias=float(raw.get("bias", 0.0)),
            shift=shift,
            rotation=rotation,
            name=raw.get("name"),
            lower=_bound("lower", lo_default),
            upper=_bound("upper", hi_default),
        )


class _ShiftedRotatedObjective:
    """Evaluates base(rotation @ (x - shift)) + bias; picklable for worker pools."""

    def __init__(self, base: str, shift: np.ndarray, rotation: Optional[np.ndarray], bias: float):
        self.base = base
        self.shift = shift
        self.rotation = rotation
        self.bias = bias

    def __call__(self, x: np.ndarray) -> float:
        z = x - self.shift
        if self.rotation is not None:
            z = self.rotation @ z
        return _BASES[self.base][0](z) + self.bias


def load_shifted_rotated(spec_file) -> Problem:
    """Load a shifted/rotated problem from a JSON definition file.

    The file holds ``{base, dim, bias, shift, rotation}`` with ``rotation``
    optional (row-major flat list or nested rows) plus optional ``lower``/
    ``upper`` overrides of the base function's conventional box. The
    resulting objective is ``base(rotation @ (x - shift)) + bias``, so the
    global minimum sits at the shift vector with value ``bias``.
    """
    spec = ShiftedRotatedSpec.from_file(spec_file)
    name = spec.name or f"{spec.base}_{spec.dim}D"
    return Problem(
        name=name,
        dim=spec.dim,
        lower=spec.lower,
        upper=spec.upper,
        objective=_ShiftedRotatedObjective(spec.base, spec.shift, spec.rotation, spec.bias),
        optimum_value=spec.bias,
        optimum_point=spec.shift.copy(),
    )
