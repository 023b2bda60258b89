"""Model definitions: state space, Hamiltonian, external field and single-site
conditionals.

The surface is an integer height function on an L x m grid.  A configuration
is weighted by exp(-beta * sum of nearest-neighbour height gradients), with
gradients across the box boundary taken against a fixed boundary condition.
Three height windows are supported: a hard floor at 0 with a ceiling at
``n_plus``, a symmetric window ``[-n_plus, n_plus]``, and a free surface
truncated to a wide window (stand-in for the wall-free model, which cannot be
enumerated or simulated on an unbounded window).
"""

from __future__ import annotations

import enum
import json
import math
import struct
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

MAGIC = b"SOSH"


class FloorMode(enum.Enum):
    FLOOR_AT_ZERO = "floor_at_zero"
    SYMMETRIC = "symmetric"
    NO_WALLS = "no_walls"


@dataclass(frozen=True)
class ModelParams:
    """Fixes one Gibbs-measure variant.

    ``field_prefactor_L`` is the denominator of the 1/L in front of the
    external field; it defaults to the ambient side L but can be overridden
    when the field is applied on a sub-box.  ``no_walls_window`` is the
    truncation half-width W used in NO_WALLS mode (heights in [-W, W]).
    """

    L: int
    beta: float
    n_plus: int = 1
    m: int = 0  # 0 means "same as L"
    floor_mode: FloorMode = FloorMode.FLOOR_AT_ZERO
    field_enabled: bool = False
    field_prefactor_L: int = 0  # 0 means "use L"
    no_walls_window: int = 0  # 0 means "use 4 * n_plus"

    def __post_init__(self):
        if self.L < 1 or (self.m and self.m < 1):
            raise ValueError("lattice sides must be >= 1")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.n_plus < 1:
            raise ValueError("n_plus must be >= 1")
        if self.m == 0:
            object.__setattr__(self, "m", self.L)
        if self.field_prefactor_L == 0:
            object.__setattr__(self, "field_prefactor_L", self.L)
        if self.no_walls_window == 0:
            object.__setattr__(self, "no_walls_window", 4 * self.n_plus)
        if self.field_enabled and self.floor_mode is FloorMode.SYMMETRIC:
            raise ValueError("external field is defined only for the floored model")
        if self.field_prefactor_L < 1 or self.no_walls_window < 1:
            raise ValueError("field_prefactor_L and no_walls_window must be >= 1")

    @property
    def n_sites(self) -> int:
        return self.L * self.m

    def height_window(self) -> tuple[int, int]:
        """Inclusive (lo, hi) window of admissible heights."""
        if self.floor_mode is FloorMode.FLOOR_AT_ZERO:
            return 0, self.n_plus
        if self.floor_mode is FloorMode.SYMMETRIC:
            return -self.n_plus, self.n_plus
        return -self.no_walls_window, self.no_walls_window


def equilibrium_height(params: ModelParams) -> int:
    """Typical surface height floor(log(L) / (4 beta)); natural logarithm."""
    return int(math.floor(math.log(params.L) / (4.0 * params.beta)))


class BoundaryCondition:
    """Heights outside the box: a global constant or an explicit map on the
    boundary ring (the sites of the complement at distance 1 from the box).
    """

    def __init__(self, constant: int | None = None,
                 explicit: Mapping[tuple[int, int], int] | None = None):
        if (constant is None) == (explicit is None):
            raise ValueError("give exactly one of constant=, explicit=")
        self.constant = constant
        self.explicit = dict(explicit) if explicit is not None else None

    @classmethod
    def flat(cls, h: int) -> "BoundaryCondition":
        return cls(constant=h)

    @classmethod
    def from_map(cls, mapping: Mapping[tuple[int, int], int]) -> "BoundaryCondition":
        return cls(explicit=mapping)

    def __eq__(self, other):
        return (isinstance(other, BoundaryCondition)
                and self.constant == other.constant
                and self.explicit == other.explicit)

    def __repr__(self):
        if self.constant is not None:
            return f"BoundaryCondition(constant={self.constant})"
        return f"BoundaryCondition(explicit=<{len(self.explicit)} sites>)"

    def validate_for(self, L: int, m: int):
        """Explicit maps must cover exactly the boundary ring of an L x m box."""
        if self.explicit is None:
            return
        ring = set(boundary_ring(L, m))
        got = set(self.explicit)
        if got != ring:
            missing = ring - got
            extra = got - ring
            raise ValueError(
                f"explicit boundary condition mismatch: {len(missing)} sites "
                f"missing, {len(extra)} extraneous")

    def value_at(self, site: tuple[int, int]) -> int:
        """Height at an exterior site.  Explicit maps raise off the ring."""
        if self.constant is not None:
            return self.constant
        try:
            return self.explicit[site]
        except KeyError:
            raise KeyError(f"boundary condition undefined at {site}") from None

    def covers(self, site) -> bool:
        return self.constant is not None or site in self.explicit


def boundary_ring(L: int, m: int):
    """The external boundary of {0..L-1} x {0..m-1}: exterior sites at
    distance one (no corners)."""
    for y in range(m):
        yield (-1, y)
        yield (L, y)
    for x in range(L):
        yield (x, -1)
        yield (x, m)


class HeightField:
    """Mutable integer height configuration on an L x m grid.

    ``heights[x, y]`` with x in 0..L-1, y in 0..m-1; flattening is row-major
    in x.  Not safe for concurrent mutation.
    """

    __slots__ = ("heights",)

    def __init__(self, heights: np.ndarray):
        arr = np.asarray(heights, dtype=np.int64)
        if arr.ndim != 2:
            raise ValueError("heights must be a 2-d array")
        self.heights = arr

    @classmethod
    def constant(cls, L: int, m: int, h: int) -> "HeightField":
        return cls(np.full((L, m), h, dtype=np.int64))

    @classmethod
    def bottom(cls, params: ModelParams) -> "HeightField":
        lo, _ = params.height_window()
        return cls.constant(params.L, params.m, lo)

    @classmethod
    def top(cls, params: ModelParams) -> "HeightField":
        _, hi = params.height_window()
        return cls.constant(params.L, params.m, hi)

    @property
    def dims(self) -> tuple[int, int]:
        return self.heights.shape

    def copy(self) -> "HeightField":
        return HeightField(self.heights.copy())

    def __eq__(self, other):
        return isinstance(other, HeightField) and np.array_equal(self.heights, other.heights)

    def __le__(self, other):
        return bool(np.all(self.heights <= other.heights))

    def mean_height(self) -> float:
        return float(self.heights.mean())

    def is_admissible(self, params: ModelParams) -> bool:
        lo, hi = params.height_window()
        return bool(self.heights.min() >= lo and self.heights.max() <= hi)

    def require_admissible(self, params: ModelParams):
        if not self.is_admissible(params):
            lo, hi = params.height_window()
            raise ValueError(f"heights outside the admissible window [{lo}, {hi}]")


def padded_heights(eta: HeightField, xi: BoundaryCondition,
                   fill_corners: bool = True) -> np.ndarray:
    """(L+2) x (m+2) array: interior heights framed by the boundary ring.

    Corner entries are outside the ring; under a constant boundary condition
    they take the constant, otherwise they are filled with the nearest ring
    value purely as padding (never used by the Hamiltonian).
    """
    L, m = eta.dims
    xi.validate_for(L, m)
    out = np.zeros((L + 2, m + 2), dtype=np.int64)
    out[1:-1, 1:-1] = eta.heights
    if xi.constant is not None:
        out[0, :] = out[-1, :] = xi.constant
        out[:, 0] = out[:, -1] = xi.constant
        return out
    for y in range(m):
        out[0, y + 1] = xi.explicit[(-1, y)]
        out[-1, y + 1] = xi.explicit[(L, y)]
    for x in range(L):
        out[x + 1, 0] = xi.explicit[(x, -1)]
        out[x + 1, -1] = xi.explicit[(x, m)]
    if fill_corners:
        out[0, 0], out[0, -1] = out[0, 1], out[0, -2]
        out[-1, 0], out[-1, -1] = out[-1, 1], out[-1, -2]
    return out


def hamiltonian(eta: HeightField, xi: BoundaryCondition) -> float:
    """Sum of |height gradient| over interior bonds plus bonds to the ring."""
    h = eta.heights
    L, m = h.shape
    xi.validate_for(L, m)
    e = np.abs(np.diff(h, axis=0)).sum() + np.abs(np.diff(h, axis=1)).sum()
    if xi.constant is not None:
        c = xi.constant
        e += np.abs(h[0, :] - c).sum() + np.abs(h[-1, :] - c).sum()
        e += np.abs(h[:, 0] - c).sum() + np.abs(h[:, -1] - c).sum()
    else:
        left = np.array([xi.explicit[(-1, y)] for y in range(m)])
        right = np.array([xi.explicit[(L, y)] for y in range(m)])
        bottom = np.array([xi.explicit[(x, -1)] for x in range(L)])
        top = np.array([xi.explicit[(x, m)] for x in range(L)])
        e += np.abs(h[0, :] - left).sum() + np.abs(h[-1, :] - right).sum()
        e += np.abs(h[:, 0] - bottom).sum() + np.abs(h[:, -1] - top).sum()
    return float(e)


def external_field_site(k: int, params: ModelParams) -> float:
    """Per-site field value at candidate height k.

    Sum of exp(-beta j) over ledges j = 1 .. n_plus - H that the height still
    clears (k <= H + j).  Nonincreasing in k, so the field pulls heights that
    exceed the typical level back down.
    """
    if params.floor_mode is FloorMode.SYMMETRIC:
        raise ValueError("external field is undefined in symmetric mode")
    if not params.field_enabled:
        raise ValueError("field_enabled is off for these parameters")
    if k < 0 or k > params.n_plus:
        raise ValueError("candidate height outside [0, n_plus]")
    return _field_value(k, params)


def _field_value(k: int, params: ModelParams) -> float:
    H = equilibrium_height(params)
    return sum(math.exp(-params.beta * j)
               for j in range(1, params.n_plus - H + 1) if k <= H + j)


def _field_vector(params: ModelParams, lo: int, hi: int) -> np.ndarray:
    return np.array([_field_value(k, params) for k in range(lo, hi + 1)])


def log_gibbs_weight(eta: HeightField, xi: BoundaryCondition,
                     params: ModelParams) -> float:
    """Unnormalised log-weight: -beta * energy, plus the (1/L)-scaled field
    term when the field is switched on."""
    eta.require_admissible(params)
    logw = -params.beta * hamiltonian(eta, xi)
    if params.field_enabled:
        lo, hi = params.height_window()
        fvec = _field_vector(params, lo, hi)
        logw += fvec[(eta.heights - lo).ravel()].sum() / params.field_prefactor_L
    return float(logw)


def neighbor_values(x: tuple[int, int], eta: HeightField,
                    xi: BoundaryCondition) -> np.ndarray:
    """Heights of the four lattice neighbours of x, from the field or the
    boundary condition."""
    L, m = eta.dims
    px, py = x
    if not (0 <= px < L and 0 <= py < m):
        raise ValueError(f"site {x} outside the box")
    vals = []
    for nx, ny in ((px - 1, py), (px + 1, py), (px, py - 1), (px, py + 1)):
        if 0 <= nx < L and 0 <= ny < m:
            vals.append(eta.heights[nx, ny])
        else:
            vals.append(xi.value_at((nx, ny)))
    return np.array(vals, dtype=np.int64)


def conditional_distribution(x: tuple[int, int], eta: HeightField,
                             xi: BoundaryCondition,
                             params: ModelParams) -> np.ndarray:
    """Exact single-site conditional over the admissible window.

    Entry i is the probability of height lo + i given the four neighbour
    heights.  Computed in log space with max subtraction, so it stays finite
    at large beta; every entry is strictly positive.
    """
    nb = neighbor_values(x, eta, xi)
    lo, hi = params.height_window()
    ks = np.arange(lo, hi + 1)
    logits = -params.beta * np.abs(ks[:, None] - nb[None, :]).sum(axis=1).astype(float)
    if params.field_enabled:
        logits += _field_vector(params, lo, hi) / params.field_prefactor_L
    logits -= logits.max()
    p = np.exp(logits)
    return p / p.sum()


def conditional_cdf(x, eta, xi, params) -> np.ndarray:
    cdf = np.cumsum(conditional_distribution(x, eta, xi, params))
    cdf[-1] = 1.0
    return cdf


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def height_field_to_json(eta: HeightField, floor_mode: FloorMode) -> str:
    L, m = eta.dims
    return json.dumps({
        "version": 1,
        "dims": [int(L), int(m)],
        "floor_mode": floor_mode.value,
        "heights": [int(v) for v in eta.heights.ravel()],
    })


def height_field_from_json(text: str) -> tuple[HeightField, FloorMode]:
    obj = json.loads(text)
    if obj.get("version") != 1:
        raise ValueError(f"unsupported height-field version {obj.get('version')!r}")
    L, m = obj["dims"]
    arr = np.array(obj["heights"], dtype=np.int64).reshape(L, m)
    return HeightField(arr), FloorMode(obj["floor_mode"])


def height_field_to_bytes(eta: HeightField) -> bytes:
    L, m = eta.dims
    head = MAGIC + struct.pack("<II", L, m)
    body = eta.heights.astype("<i4").tobytes()
    return head + body


def height_field_from_bytes(blob: bytes) -> HeightField:
    if blob[:4] != MAGIC:
        raise ValueError("bad magic bytes for height-field blob")
    L, m = struct.unpack("<II", blob[4:12])
    arr = np.frombuffer(blob[12:], dtype="<i4", count=L * m).astype(np.int64)
    return HeightField(arr.reshape(L, m))
