"""Flip-rate models and the reaction polynomials they induce.

A flip rate ``c`` depends on the occupation of a window of ``2M + 1`` sites
centred at the flipping site.  Averaging it against product Bernoulli
measures gives the birth and death polynomials ``B`` and ``D`` that drive the
macroscopic reaction term ``F = B - D``.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from numpy.polynomial import polynomial as P

CHECK_GRID = np.linspace(0.0, 1.0, 1001)
_ONE_MINUS = np.array([1.0, -1.0])
_IDENTITY = np.array([0.0, 1.0])


class RateModelError(ValueError):
    """Raised for invalid rate tables or polynomial splits."""


def _trim(coef: np.ndarray) -> np.ndarray:
    coef = np.atleast_1d(np.asarray(coef, dtype=float))
    if coef.size == 0:
        return np.zeros(1)
    return P.polytrim(coef, 0.0) if np.any(coef) else np.zeros(1)


def _horner(coef: np.ndarray, r):
    return P.polyval(r, coef)


@dataclass(frozen=True)
class CylinderRate:
    """Local flip rate indexed by the window code.

    The window ``(eta(x-M), ..., eta(x+M))`` is read as a binary number with
    the leftmost site as the most significant bit, so ``"010"`` is code 2.
    """

    half_width: int
    table: np.ndarray

    def __post_init__(self) -> None:
        if self.half_width < 0:
            raise RateModelError("half_width must be >= 0")
        table = np.asarray(self.table, dtype=float).copy()
        size = 1 << (2 * self.half_width + 1)
        if table.shape != (size,):
            raise RateModelError(
                f"rate table needs exactly {size} entries, got {table.size}")
        if not np.all(np.isfinite(table)) or np.any(table <= 0.0):
            raise RateModelError("every rate table entry must be finite and > 0")
        table.setflags(write=False)
        object.__setattr__(self, "table", table)

    @property
    def window_size(self) -> int:
        return 2 * self.half_width + 1

    @property
    def max_rate(self) -> float:
        return float(self.table.max())

    @classmethod
    def constant(cls, kappa: float = 1.0) -> "CylinderRate":
        return cls(0, np.array([kappa, kappa], dtype=float))

    @classmethod
    def from_function(cls, half_width: int,
                      fn: Callable[[tuple[int, ...]], float]) -> "CylinderRate":
        n = 2 * half_width + 1
        table = np.empty(1 << n)
        for code in range(1 << n):
            table[code] = fn(window_bits(code, n))
        return cls(half_width, table)

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, float]) -> "CylinderRate":
        """Build from a ``{"010": rate, ...}`` map covering every window."""
        if not mapping:
            raise RateModelError("empty rate table")
        lengths = {len(k) for k in mapping}
        if len(lengths) != 1:
            raise RateModelError("window keys must all have the same length")
        n = lengths.pop()
        if n % 2 == 0:
            raise RateModelError("window length must be odd (2M+1)")
        table = np.full(1 << n, np.nan)
        for key, value in mapping.items():
            if set(key) - {"0", "1"}:
                raise RateModelError(f"window key {key!r} is not a binary string")
            table[int(key, 2)] = float(value)
        missing = [format(c, f"0{n}b") for c in np.flatnonzero(np.isnan(table))]
        if missing:
            raise RateModelError(f"rate table is missing windows {missing[:4]}")
        return cls((n - 1) // 2, table)

    def to_mapping(self) -> dict[str, float]:
        n = self.window_size
        return {format(c, f"0{n}b"): float(v) for c, v in enumerate(self.table)}

    def rate(self, window) -> float:
        code = 0
        for bit in window:
            code = (code << 1) | int(bit)
        return float(self.table[code])


def window_bits(code: int, n: int) -> tuple[int, ...]:
    """Bits of a window code, leftmost site first."""
    return tuple((code >> (n - 1 - i)) & 1 for i in range(n))


@dataclass(frozen=True)
class ReactionPolynomials:
    """Birth and death polynomials stored through their reduced factors.

    ``B = (1 - r) * Bt`` and ``D = r * Dt``.  Keeping ``Bt`` and ``Dt`` as the
    primary data makes ``B(1) = 0`` and ``D(0) = 0`` hold exactly.
    """

    birth_reduced: np.ndarray
    death_reduced: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "birth_reduced", _trim(self.birth_reduced))
        object.__setattr__(self, "death_reduced", _trim(self.death_reduced))

    @property
    def birth(self) -> np.ndarray:
        return P.polymul(_ONE_MINUS, self.birth_reduced)

    @property
    def death(self) -> np.ndarray:
        return P.polymul(_IDENTITY, self.death_reduced)

    @property
    def reaction(self) -> np.ndarray:
        return P.polysub(self.birth, self.death)

    @property
    def degree(self) -> int:
        return max(len(self.birth), len(self.death)) - 1

    def B(self, r):
        return (1.0 - r) * _horner(self.birth_reduced, r)

    def D(self, r):
        return r * _horner(self.death_reduced, r)

    def F(self, r):
        return self.B(r) - self.D(r)

    def dF(self, r):
        return _horner(P.polyder(self.reaction), r)

    def check(self, tol: float = 1e-12) -> None:
        """Raise if either polynomial is negative somewhere on the check grid."""
        for name, values in (("B", self.B(CHECK_GRID)), ("D", self.D(CHECK_GRID))):
            if values.min() < -tol:
                raise RateModelError(
                    f"{name} is negative on [0,1] (min {values.min():.3e})")

    @classmethod
    def from_full(cls, birth, death, tol: float = 1e-12) -> "ReactionPolynomials":
        """Factor full ``B`` and ``D`` coefficient vectors."""
        bq, br = P.polydiv(_trim(birth), _ONE_MINUS)
        dq, dr = P.polydiv(_trim(death), _IDENTITY)
        if np.max(np.abs(br)) > tol or np.max(np.abs(dr)) > tol:
            raise RateModelError("need B(1) = 0 and D(0) = 0")
        return cls(bq, dq)


def enumerate_reaction_polynomials(c: CylinderRate) -> ReactionPolynomials:
    """Average the flip rate against product Bernoulli measures.

    Windows are grouped by centre value and number of occupied neighbours;
    each group contributes ``c * r**k * (1 - r)**(n - k)`` to the reduced
    birth (centre empty) or death (centre occupied) factor.
    """
    n = c.window_size
    m = n - 1
    birth_w = np.zeros(m + 1)
    death_w = np.zeros(m + 1)
    centre_shift = c.half_width
    for code in range(1 << n):
        centre = (code >> centre_shift) & 1
        ones = bin(code).count("1") - centre
        if centre:
            death_w[ones] += c.table[code]
        else:
            birth_w[ones] += c.table[code]
    return ReactionPolynomials(_weights_to_monomial(birth_w),
                               _weights_to_monomial(death_w))


def _weights_to_monomial(weights: np.ndarray) -> np.ndarray:
    """Sum ``w_k r^k (1-r)^(m-k)`` in the monomial basis."""
    m = len(weights) - 1
    out = np.zeros(m + 1)
    for k, w in enumerate(weights):
        if w == 0.0:
            continue
        term = P.polymul(P.polypow(_IDENTITY, k), P.polypow(_ONE_MINUS, m - k))
        out[: len(term)] += w * term
    return out


def monomial_to_bernstein(coef: np.ndarray, degree: int) -> np.ndarray:
    """Bernstein coefficients of degree ``degree`` of a monomial polynomial."""
    a = np.zeros(degree + 1)
    coef = _trim(coef)
    if len(coef) - 1 > degree:
        raise RateModelError("degree too small for Bernstein elevation")
    a[: len(coef)] = coef
    out = np.zeros(degree + 1)
    for k in range(degree + 1):
        out[k] = sum(math.comb(k, i) / math.comb(degree, i) * a[i]
                     for i in range(k + 1))
    return out


def realize_cylinder_rate(polys: ReactionPolynomials,
                          max_half_width: int = 6) -> CylinderRate:
    """Find a flip rate depending on the occupied-neighbour count only.

    Writes the reduced factors in the Bernstein basis of degree ``2M`` and
    raises ``M`` until every coefficient is strictly positive; the coefficient
    of index ``k`` is the rate for a window with ``k`` occupied neighbours.
    """
    for r in (polys.B(CHECK_GRID[:-1]) / (1 - CHECK_GRID[:-1]),
              polys.D(CHECK_GRID[1:]) / CHECK_GRID[1:]):
        if r.min() <= 0.0:
            raise RateModelError(
                "reduced birth/death factor vanishes on [0,1]; no positive "
                "flip rate realizes these polynomials")
    deg = max(len(polys.birth_reduced), len(polys.death_reduced)) - 1
    for M in range(max(0, math.ceil(deg / 2)), max_half_width + 1):
        bb = monomial_to_bernstein(polys.birth_reduced, 2 * M)
        db = monomial_to_bernstein(polys.death_reduced, 2 * M)
        if bb.min() > 0.0 and db.min() > 0.0:
            n = 2 * M + 1
            table = np.empty(1 << n)
            for code in range(1 << n):
                centre = (code >> M) & 1
                ones = bin(code).count("1") - centre
                table[code] = db[ones] if centre else bb[ones]
            return CylinderRate(M, table)
    raise RateModelError(
        f"no positive neighbour-count rate with half-width <= {max_half_width}")


@dataclass(frozen=True)
class ReactionValues:
    B: float
    D: float
    F: float
    chi: float


@dataclass(frozen=True)
class RateModel:
    """Flip-rate model with its reaction polynomials.

    ``cylinder`` is the microscopic rate used by the particle simulator.  For
    models given directly by polynomials it is a realization found by
    :func:`realize_cylinder_rate` when one exists, otherwise ``None``.
    """

    polys: ReactionPolynomials
    cylinder: CylinderRate | None = None
    name: str = "custom"
    params: dict = field(default_factory=dict)
    preset: bool = False
    source: str = "cylinder"
    concave: bool = field(init=False)

    def __post_init__(self) -> None:
        self.polys.check()
        b0 = float(self.polys.B(0.0))
        d1 = float(self.polys.D(1.0))
        if b0 < 0 or d1 < 0:
            raise RateModelError("need F(0) >= 0 and F(1) <= 0")
        object.__setattr__(self, "concave", _is_concave(self.polys))

    # scalar and vector evaluation -------------------------------------
    def B(self, r):
        return self.polys.B(r)

    def D(self, r):
        return self.polys.D(r)

    def F(self, r):
        return self.polys.F(r)

    def dF(self, r):
        return self.polys.dF(r)

    @staticmethod
    def chi(r):
        return r * (1.0 - r)

    @property
    def lipschitz(self) -> float:
        """max |F'| over [0,1]."""
        return float(np.max(np.abs(self.dF(CHECK_GRID))))

    @property
    def birth_bound(self) -> float:
        return float(np.max(_horner(self.polys.birth_reduced, CHECK_GRID)))

    @property
    def death_bound(self) -> float:
        return float(np.max(_horner(self.polys.death_reduced, CHECK_GRID)))

    def describe(self) -> dict:
        out = {
            "name": self.name,
            "params": dict(self.params),
            "preset": self.preset,
            "source": self.source,
            "birth": [float(x) for x in self.polys.birth],
            "death": [float(x) for x in self.polys.death],
            "concave": self.concave,
        }
        if self.cylinder is not None:
            out["half_width"] = self.cylinder.half_width
            out["table"] = [float(x) for x in self.cylinder.table]
        return out

    @property
    def model_hash(self) -> str:
        blob = json.dumps(self.describe(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _is_concave(polys: ReactionPolynomials, tol: float = 1e-9) -> bool:
    for values in (polys.B(CHECK_GRID), polys.D(CHECK_GRID)):
        if np.max(np.diff(values, 2)) > tol:
            return False
    return True


def eval_reaction(m: RateModel, r: float) -> ReactionValues:
    if not 0.0 <= r <= 1.0:
        raise RateModelError(f"density {r} outside [0,1]")
    b, d = float(m.B(r)), float(m.D(r))
    return ReactionValues(B=b, D=d, F=b - d, chi=r * (1.0 - r))


def model_from_cylinder(c: CylinderRate, name: str = "custom",
                        params: dict | None = None,
                        preset: bool = False) -> RateModel:
    return RateModel(enumerate_reaction_polynomials(c), c, name,
                     params or {}, preset, "cylinder")


def make_constant(kappa: float = 1.0) -> RateModel:
    if kappa <= 0:
        raise RateModelError("kappa must be > 0")
    return model_from_cylinder(CylinderRate.constant(kappa), "constant",
                               {"kappa": kappa}, preset=True)


def make_pair(beta: float = 2.0) -> RateModel:
    """``c = 1 + beta * eta(x-1) * eta(x+1)``."""
    if beta <= -1:
        raise RateModelError("beta must exceed -1 for positive rates")
    c = CylinderRate.from_function(1, lambda w: 1.0 + beta * w[0] * w[2])
    return model_from_cylinder(c, "pair", {"beta": beta}, preset=True)


def double_well_reaction(a: float, b: float) -> np.ndarray:
    """Monomial coefficients of ``a(2r-1) - b(2r-1)^3``."""
    s = np.array([-1.0, 2.0])
    return P.polysub(a * s, b * P.polypow(s, 3))


def make_double_well(a: float, b: float) -> RateModel:
    """Double-well reaction with a minimal-degree nonnegative split.

    ``Bt`` is taken affine, ``Bt = F(0) + kappa * r``, with the smallest
    ``kappa >= 0`` making ``D = B - F`` nonnegative; then ``Dt = (B - F)/r``.
    """
    if not (a > 0 and b >= a):
        raise RateModelError(f"double well needs 0 < a <= b (got a={a}, b={b})")
    F = double_well_reaction(a, b)
    f0 = float(P.polyval(0.0, F))
    # D(r) = (1-r)(f0 + kappa r) - F(r) >= 0  <=>  kappa >= g(r) on (0,1)
    # with g = (F - f0 (1-r)) / (r (1-r)).
    num = P.polysub(F, f0 * _ONE_MINUS)
    q, rem = P.polydiv(num, _IDENTITY)
    q1 = float(P.polyval(1.0, q))
    grid = CHECK_GRID
    if abs(q1) < 1e-12:
        g, _ = P.polydiv(q, _ONE_MINUS)
        kappa = max(0.0, float(P.polyval(grid, g).max()))
    else:
        inner = grid[1:-1]
        kappa = max(0.0, float(np.max(P.polyval(inner, q) / (1 - inner))))
    birth_reduced = np.array([f0, kappa])
    birth = P.polymul(_ONE_MINUS, birth_reduced)
    death = P.polysub(birth, F)
    polys = ReactionPolynomials.from_full(birth, death)
    try:
        cyl = realize_cylinder_rate(polys)
    except RateModelError:
        cyl = None
    return RateModel(polys, cyl, "double-well", {"a": a, "b": b}, True,
                     "polynomials")


PRESETS: dict[str, Callable[..., RateModel]] = {
    "constant": make_constant,
    "pair": make_pair,
    "double-well": make_double_well,
}


def model_from_spec(spec: Mapping) -> RateModel:
    """Build a model from a config entry.

    Accepts ``{"preset": name, ...params}`` or ``{"table": {"010": ..}}``.
    """
    spec = dict(spec)
    if "table" in spec:
        extra = set(spec) - {"table", "name"}
        if extra:
            raise RateModelError(f"unknown model keys {sorted(extra)}")
        return model_from_cylinder(CylinderRate.from_mapping(spec["table"]),
                                   spec.get("name", "table"))
    name = spec.pop("preset", None)
    if name not in PRESETS:
        raise RateModelError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    try:
        return PRESETS[name](**spec)
    except TypeError as exc:
        raise RateModelError(f"bad parameters for preset {name!r}: {exc}") from None


def reaction_roots(m: RateModel, intervals: int = 1000) -> np.ndarray:
    """Roots of F in [0,1] by a sign-change sweep refined with brentq."""
    from scipy.optimize import brentq

    x = np.linspace(0.0, 1.0, intervals + 1)
    f = m.F(x)
    scale = max(1.0, float(np.max(np.abs(f))))
    roots: list[float] = []
    for i in range(intervals + 1):
        if abs(f[i]) <= 1e-13 * scale:
            roots.append(float(x[i]))
        elif i < intervals and f[i] * f[i + 1] < 0 and abs(f[i + 1]) > 1e-13 * scale:
            roots.append(brentq(m.F, x[i], x[i + 1], xtol=1e-15))
    # tangential zeros between nodes: local minima of |F| close to zero
    af = np.abs(f)
    for i in range(1, intervals):
        if af[i] < af[i - 1] and af[i] < af[i + 1] and f[i - 1] * f[i + 1] > 0:
            from scipy.optimize import minimize_scalar

            res = minimize_scalar(lambda r: abs(float(m.F(r))),
                                  bounds=(x[i - 1], x[i + 1]), method="bounded",
                                  options={"xatol": 1e-14})
            if abs(float(m.F(res.x))) < 1e-12 * scale:
                roots.append(float(res.x))
    roots.sort()
    out: list[float] = []
    for r in roots:
        if not out or r - out[-1] > 1e-9:
            out.append(r)
    return np.array(out)
