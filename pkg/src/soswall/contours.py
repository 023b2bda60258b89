"""Level-line contours on the dual lattice.

A level-h contour is a circuit of dual-lattice bonds separating sites at
height >= h from sites at height <= h-1, with the inner one-site annulus at
height >= h and the outer annulus (including the two diagonal neighbours
picked up at sharp corners) at height <= h-1.  When four separating bonds
meet at a dual vertex, the circuit pairs the two bonds on each side of the
45-degree line through the vertex ("linked pairs"), which makes the
decomposition into circuits deterministic.

Geometry conventions: primal sites are integer points (x, y); the dual
vertex written (a, b) is the plane point (a + 1/2, b + 1/2); a bond is a
unit segment between adjacent dual vertices, stored with its endpoints in
lexicographic order.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .model import (BoundaryCondition, FloorMode, HeightField, ModelParams,
                    padded_heights)

# directions from a dual vertex; linked pairs are {E, S} and {N, W}
_E, _N, _W, _S = 0, 1, 2, 3
_LINKED_PARTNER = {_E: _S, _S: _E, _N: _W, _W: _N}


def _bond_from(v, direction):
    a, b = v
    if direction == _E:
        return (v, (a + 1, b))
    if direction == _N:
        return (v, (a, b + 1))
    if direction == _W:
        return ((a - 1, b), v)
    return ((a, b - 1), v)


def _direction_at(v, bond):
    """Direction of ``bond`` as seen from its endpoint ``v``."""
    other = bond[1] if bond[0] == v else bond[0]
    da, db = other[0] - v[0], other[1] - v[1]
    if da == 1:
        return _E
    if da == -1:
        return _W
    return _N if db == 1 else _S


def _is_vertical(bond):
    return bond[0][0] == bond[1][0]


def bond_sites(bond):
    """The two primal sites separated by a bond (distance 1/2 on each side)."""
    (a, b), (c, d) = bond
    if a == c:  # vertical: left, right
        return (a, b + 1), (a + 1, b + 1)
    return (a + 1, b), (a + 1, b + 1)  # horizontal: below, above


def _vertex_sites(v):
    """The four primal sites at distance 1/sqrt(2) from a dual vertex."""
    a, b = v
    return ((a, b), (a + 1, b), (a, b + 1), (a + 1, b + 1))


def _linked(d1, d2):
    return {d1, d2} == {_E, _S} or {d1, d2} == {_N, _W}


@dataclass(frozen=True)
class Contour:
    """A traced circuit (or open chain) of dual bonds with its interior and
    inner/outer annuli."""

    bonds: tuple
    closed: bool
    h: int | None
    interior: frozenset
    delta_plus: frozenset
    delta_minus: frozenset

    @property
    def length(self) -> int:
        return len(self.bonds)

    @property
    def area(self) -> int:
        return len(self.interior)

    def bond_set(self) -> frozenset:
        return frozenset(self.bonds)

    def to_json_dict(self) -> dict:
        return {
            "h": self.h,
            "closed": self.closed,
            "length": self.length,
            "area": self.area,
            "bonds": [[list(v1), list(v2)] for v1, v2 in self.bonds],
        }


def contours_to_json(contours) -> str:
    return json.dumps([c.to_json_dict() for c in contours])


# ---------------------------------------------------------------------------
# Tracing
# ---------------------------------------------------------------------------

def trace_bonds(bonds) -> list[tuple[list, bool]]:
    """Decompose a separating-bond set into circuits and open chains.

    At a vertex with three unused continuations the linked partner of the
    incoming bond is taken; with one there is no choice.  Returns
    (bond sequence, closed) pairs, deterministically ordered.
    """
    incident = defaultdict(list)
    for b in bonds:
        incident[b[0]].append(b)
        incident[b[1]].append(b)
    unused = set(bonds)
    out = []
    for seed in sorted(bonds):
        if seed not in unused:
            continue
        unused.discard(seed)
        path = [seed]
        closed = False
        # forward from the second endpoint, then (if open) backward from the first
        v = seed[1]
        while True:
            d_in = _direction_at(v, path[-1])
            cands = [b for b in incident[v] if b in unused]
            if v == seed[0]:  # the seed bond itself is the closing move
                cands = cands + [seed]
            nxt = _pick_continuation(v, d_in, cands)
            if nxt is None:
                break
            if nxt == seed:
                closed = True
                break
            path.append(nxt)
            unused.discard(nxt)
            v = nxt[1] if nxt[0] == v else nxt[0]
        if not closed:
            v = seed[0]
            while True:
                d_in = _direction_at(v, path[0])
                cands = [b for b in incident[v] if b in unused]
                nxt = _pick_continuation(v, d_in, cands)
                if nxt is None:
                    break
                path.insert(0, nxt)
                unused.discard(nxt)
                v = nxt[1] if nxt[0] == v else nxt[0]
        out.append((path, closed))
    return out


def _pick_continuation(v, d_in, cands):
    if not cands:
        return None
    if len(cands) == 1:
        return cands[0]
    want = _LINKED_PARTNER[d_in]
    for b in cands:
        if _direction_at(v, b) == want:
            return b
    raise AssertionError("linked continuation missing at a four-bond vertex")


def circuit_interior(bonds) -> frozenset:
    """Primal sites enclosed by a circuit, by ray-casting parity.

    A vertical bond ((a, b), (a, b+1)) crosses the horizontal ray of site
    row q exactly when q == b + 1, at x = a + 1/2.
    """
    verts = [b for b in bonds if _is_vertical(b)]
    by_row = defaultdict(list)
    a_vals = []
    for (a, b), _ in verts:
        by_row[b + 1].append(a)
        a_vals.append(a)
    inside = set()
    lo_a, hi_a = min(a_vals), max(a_vals)
    for q, cols in by_row.items():
        cols = np.sort(np.array(cols))
        for p in range(lo_a, hi_a + 1):
            crossings = len(cols) - int(np.searchsorted(cols, p, side="left"))
            if crossings % 2 == 1:
                inside.add((p, q))
    return frozenset(inside)


def delta_annuli(bonds, interior):
    """Inner/outer annuli: sites separated by a bond, plus the four sites
    around every vertex where two non-linked bonds of the circuit meet."""
    near = set()
    for b in bonds:
        near.update(bond_sites(b))
    at_vertex = defaultdict(list)
    for b in bonds:
        at_vertex[b[0]].append(_direction_at(b[0], b))
        at_vertex[b[1]].append(_direction_at(b[1], b))
    for v, dirs in at_vertex.items():
        if len(dirs) < 2:
            continue
        nonlinked = False
        for i in range(len(dirs)):
            for j in range(i + 1, len(dirs)):
                if not _linked(dirs[i], dirs[j]):
                    nonlinked = True
        if nonlinked:
            near.update(_vertex_sites(v))
    dplus = frozenset(s for s in near if s in interior)
    dminus = frozenset(s for s in near if s not in interior)
    return dplus, dminus


# ---------------------------------------------------------------------------
# Extraction
# ---------------------------------------------------------------------------

def _separating_bonds(padded, h, include_ring_pairs):
    """Bonds between adjacent covered sites on opposite sides of level h.

    ``padded`` is the (L+2) x (m+2) height array; primal site (x, y) sits at
    padded[x+1, y+1].  Corner pads are excluded when ``include_ring_pairs``
    is False (explicit boundary maps do not cover them).
    """
    ind = padded >= h
    Lp, mp = padded.shape
    corners = {(0, 0), (0, mp - 1), (Lp - 1, 0), (Lp - 1, mp - 1)}
    bonds = set()
    for px in range(Lp - 1):
        for py in range(mp):
            if ind[px, py] != ind[px + 1, py]:
                if not include_ring_pairs and (
                        (px, py) in corners or (px + 1, py) in corners):
                    continue
                x, y = px - 1, py - 1
                bonds.add(((x, y - 1), (x, y)))
    for px in range(Lp):
        for py in range(mp - 1):
            if ind[px, py] != ind[px, py + 1]:
                if not include_ring_pairs and (
                        (px, py) in corners or (px, py + 1) in corners):
                    continue
                x, y = px - 1, py - 1
                bonds.add(((x - 1, y), (x, y)))
    return bonds


def _padded_value(padded, site):
    x, y = site
    L2, m2 = padded.shape
    px, py = x + 1, y + 1
    if 0 <= px < L2 and 0 <= py < m2:
        return int(padded[px, py])
    return None


def extract_level_contours(eta: HeightField, xi: BoundaryCondition, h: int,
                           check: bool = True) -> list[Contour]:
    """Every maximal closed circuit separating {>= h} from {<= h-1}.

    Each returned contour satisfies the annulus conditions (inner >= h,
    outer <= h-1), which is asserted on output when ``check`` is set.
    Explicit boundary maps leave the four diagonal corner pads uncovered;
    annulus sites outside the covered region are skipped by the check.
    """
    padded = padded_heights(eta, xi)
    bonds = _separating_bonds(padded, h, include_ring_pairs=xi.constant is not None)
    pieces = trace_bonds(bonds)
    out = []
    for path, closed in pieces:
        if not closed:
            continue
        interior = circuit_interior(path)
        # circuits around low pockets inside a high region carry the >= h side
        # outside; the definition covers upward fluctuations only, so skip them
        s_in, s_out = bond_sites(path[0])
        if s_in not in interior:
            s_in, s_out = s_out, s_in
        v_in = _padded_value(padded, s_in)
        if v_in is not None and v_in < h:
            continue
        dplus, dminus = delta_annuli(path, interior)
        c = Contour(bonds=tuple(path), closed=True, h=h, interior=interior,
                    delta_plus=dplus, delta_minus=dminus)
        if check:
            _assert_level_contour(c, padded, h, xi)
        out.append(c)
    out.sort(key=lambda c: min(c.bonds))
    return out


def _assert_level_contour(c, padded, h, xi):
    for s in c.delta_plus:
        v = _padded_value(padded, s)
        if v is None and xi.constant is not None:
            v = xi.constant
        if v is not None and v < h:
            raise AssertionError(f"inner annulus below level at {s}")
    for s in c.delta_minus:
        v = _padded_value(padded, s)
        if v is None and xi.constant is not None:
            v = xi.constant
        if v is not None and v > h - 1:
            raise AssertionError(f"outer annulus at level or above at {s}")


def extract_open_level_contour(eta: HeightField, xi: BoundaryCondition,
                               h: int) -> Contour:
    """The unique open level line induced by a two-level stepped boundary
    condition; raises unless exactly one open chain exists."""
    padded = padded_heights(eta, xi)
    bonds = _separating_bonds(padded, h, include_ring_pairs=xi.constant is not None)
    open_chains = [p for p, closed in trace_bonds(bonds) if not closed]
    if len(open_chains) != 1:
        raise ValueError(f"expected one open level line, found {len(open_chains)}")
    path = open_chains[0]
    dplus, dminus = set(), set()
    for b in path:
        s1, s2 = bond_sites(b)
        for s in (s1, s2):
            v = _padded_value(padded, s)
            if v is None:
                continue
            (dplus if v >= h else dminus).add(s)
    return Contour(bonds=tuple(path), closed=False, h=h, interior=frozenset(),
                   delta_plus=frozenset(dplus), delta_minus=frozenset(dminus))


# ---------------------------------------------------------------------------
# Weight-ratio maps
# ---------------------------------------------------------------------------

def contour_level_bounds(contour: Contour, eta: HeightField,
                         xi: BoundaryCondition | None = None):
    """(max outer height, min inner height) of a circuit in a configuration;
    the circuit is a level contour for every h in (outer, inner]."""
    L, m = eta.dims

    def value(site):
        x, y = site
        if 0 <= x < L and 0 <= y < m:
            return int(eta.heights[x, y])
        if xi is not None and xi.covers(site):
            return xi.value_at(site)
        return None

    inner = [value(s) for s in contour.delta_plus]
    outer = [value(s) for s in contour.delta_minus]
    inner = [v for v in inner if v is not None]
    outer = [v for v in outer if v is not None]
    return max(outer, default=None), min(inner, default=None)


def lower_contour_interior(contour: Contour, eta: HeightField,
                           xi: BoundaryCondition | None = None) -> HeightField:
    """Decrease every interior site by one.

    Requires the circuit to be a level contour of ``eta``; in the wall-free
    model this trades log-weight exactly beta times the contour length.
    """
    hi_out, lo_in = contour_level_bounds(contour, eta, xi)
    if lo_in is None or hi_out is None or lo_in <= hi_out:
        raise ValueError("circuit is not a level contour of this configuration")
    out = eta.copy()
    for (x, y) in contour.interior:
        out.heights[x, y] -= 1
    return out


def add_spike(v: tuple[int, int], h: int, eta: HeightField,
              params: ModelParams) -> HeightField:
    """Push the height at one site h levels away from zero (sign kept);
    wall-free model only.  Changes the energy by at most 4h."""
    if params.floor_mode is not FloorMode.NO_WALLS:
        raise ValueError("spike map is defined for the wall-free model only")
    out = eta.copy()
    if out.heights[v] >= 0:
        out.heights[v] += h
    else:
        out.heights[v] -= h
    return out


def raise_except_level_set(sites, eta: HeightField) -> HeightField:
    """Raise the whole surface by one, resetting the given level-set sites
    to zero.  All given sites must share one height."""
    sites = list(sites)
    if sites:
        h0 = int(eta.heights[sites[0]])
        for s in sites:
            if eta.heights[s] != h0:
                raise ValueError("sites do not sit at a common level")
    out = eta.copy()
    out.heights += 1
    for s in sites:
        out.heights[s] = 0
    return out


# ---------------------------------------------------------------------------
# Spanning chains and gradient clusters
# ---------------------------------------------------------------------------

def find_spanning_chain(eta: HeightField, rect, level: int, mode: str):
    """A nearest-neighbour chain of sites crossing between the two shorter
    sides of ``rect`` with height >= level ("at_least") or <= level
    ("at_most"); None when no such chain exists.

    ``rect`` is (x0, x1, y0, y1), inclusive, inside the box.
    """
    x0, x1, y0, y1 = rect
    L, m = eta.dims
    if not (0 <= x0 <= x1 < L and 0 <= y0 <= y1 < m):
        raise ValueError("rectangle outside the box")
    if mode == "at_least":
        ok = eta.heights >= level
    elif mode == "at_most":
        ok = eta.heights <= level
    else:
        raise ValueError("mode must be 'at_least' or 'at_most'")

    across_x = (x1 - x0) >= (y1 - y0)  # shorter sides are the x extremes
    if across_x:
        sources = [(x0, y) for y in range(y0, y1 + 1) if ok[x0, y]]
        def done(s):
            return s[0] == x1
    else:
        sources = [(x, y0) for x in range(x0, x1 + 1) if ok[x, y0]]
        def done(s):
            return s[1] == y1

    parent = {s: None for s in sources}
    queue = list(sources)
    while queue:
        cur = queue.pop()
        if done(cur):
            chain = []
            while cur is not None:
                chain.append(cur)
                cur = parent[cur]
            return chain[::-1]
        cx, cy = cur
        for nx, ny in ((cx - 1, cy), (cx + 1, cy), (cx, cy - 1), (cx, cy + 1)):
            if x0 <= nx <= x1 and y0 <= ny <= y1 and (nx, ny) not in parent \
                    and ok[nx, ny]:
                parent[(nx, ny)] = cur
                queue.append((nx, ny))
    return None


def has_spanning_chain(eta, rect, level, mode) -> bool:
    return find_spanning_chain(eta, rect, level, mode) is not None


@dataclass(frozen=True)
class GradientCluster:
    bonds: frozenset
    enclosed_area: int

    @property
    def size(self) -> int:
        return len(self.bonds)


@dataclass(frozen=True)
class GradientClusterSet:
    clusters: tuple

    def sizes(self):
        return sorted((c.size for c in self.clusters), reverse=True)

    def total_bonds(self) -> int:
        return sum(c.size for c in self.clusters)

    def covers(self, bonds) -> bool:
        """True when every given bond belongs to some cluster."""
        allb = set()
        for c in self.clusters:
            allb |= c.bonds
        return set(bonds) <= allb

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("cluster_id,size,enclosed_area\n")
            for i, c in enumerate(sorted(self.clusters,
                                         key=lambda c: (-c.size, min(c.bonds)))):
                fh.write(f"{i},{c.size},{c.enclosed_area}\n")


def gradient_clusters(eta: HeightField, xi: BoundaryCondition) -> GradientClusterSet:
    """Connected components of the dual bonds crossing a nonzero height
    gradient (bonds between two exterior sites are not part of the set)."""
    L, m = eta.dims
    padded = padded_heights(eta, xi)
    bonds = set()
    for x in range(-1, L):
        for y in range(0, m):
            if not (0 <= x < L or 0 <= x + 1 < L):
                continue
            if padded[x + 1, y + 1] != padded[x + 2, y + 1]:
                bonds.add(((x, y - 1), (x, y)))
    for x in range(0, L):
        for y in range(-1, m):
            if padded[x + 1, y + 1] != padded[x + 1, y + 2]:
                bonds.add(((x - 1, y), (x, y)))
    comps = _bond_components(bonds)
    clusters = tuple(GradientCluster(bonds=frozenset(c),
                                     enclosed_area=_enclosed_area(c, L, m))
                     for c in comps)
    return GradientClusterSet(clusters=clusters)


def _bond_components(bonds):
    incident = defaultdict(list)
    for b in bonds:
        incident[b[0]].append(b)
        incident[b[1]].append(b)
    seen = set()
    comps = []
    for seed in sorted(bonds):
        if seed in seen:
            continue
        comp = []
        stack = [seed]
        seen.add(seed)
        while stack:
            b = stack.pop()
            comp.append(b)
            for v in b:
                for nb in incident[v]:
                    if nb not in seen:
                        seen.add(nb)
                        stack.append(nb)
        comps.append(comp)
    return comps


def _enclosed_area(cluster_bonds, L, m):
    """Sites of the box unreachable from the boundary ring without crossing
    a cluster bond."""
    blocked = set(cluster_bonds)

    def bond_between(s1, s2):
        # dual bond crossed when stepping between neighbouring sites
        (x1, y1), (x2, y2) = sorted((s1, s2))
        if x2 == x1 + 1:
            return ((x1, y1 - 1), (x1, y1))
        return ((x1 - 1, y1), (x1, y1))

    seen = set()
    stack = []
    for y in range(m):
        stack += [(-1, y), (L, y)]
    for x in range(L):
        stack += [(x, -1), (x, m)]
    seen.update(stack)
    while stack:
        cx, cy = stack.pop()
        for nxt in ((cx - 1, cy), (cx + 1, cy), (cx, cy - 1), (cx, cy + 1)):
            nx, ny = nxt
            if not (0 <= nx < L and 0 <= ny < m) or nxt in seen:
                continue
            if bond_between((cx, cy), nxt) in blocked:
                continue
            seen.add(nxt)
            stack.append(nxt)
    return sum(1 for x in range(L) for y in range(m) if (x, y) not in seen)
