"""Multi-patch topology: partial-edge interfaces, junctions, domain generators."""
from __future__ import annotations

import json
import math
from functools import lru_cache
from dataclasses import dataclass, field, replace
from enum import IntEnum

import numpy as np

from .bspline import (
    GeometryMap,
    TensorSplineSpace,
    annular_sector,
    eval_geometry,
    make_space,
    rectangle,
)

SCHEMA_ID = "ietidg.multipatch/1"


class TopologyError(ValueError):
    pass


class Side(IntEnum):
    WEST = 0   # u = 0, edge parameter v
    EAST = 1   # u = 1, edge parameter v
    SOUTH = 2  # v = 0, edge parameter u
    NORTH = 3  # v = 1, edge parameter u

    @property
    def tangential_dir(self) -> int:
        """Parametric direction running along the edge (0 = u, 1 = v)."""
        return 1 if self in (Side.WEST, Side.EAST) else 0

    @property
    def normal_dir(self) -> int:
        return 1 - self.tangential_dir

    @property
    def at_end(self) -> bool:
        return self in (Side.EAST, Side.NORTH)

    @property
    def outward(self) -> np.ndarray:
        n = np.zeros(2)
        n[self.normal_dir] = 1.0 if self.at_end else -1.0
        return n

    def params(self, t):
        """Map edge parameters to (u, v) arrays."""
        t = np.asarray(t, float)
        fixed = np.full_like(t, 1.0 if self.at_end else 0.0)
        return (fixed, t) if self.tangential_dir == 1 else (t, fixed)


def edge_eval(G: GeometryMap, side: Side, t):
    """Points, tangents dx/dt and Jacobians along an edge."""
    u, v = side.params(np.atleast_1d(t))
    X, J = eval_geometry(G, u, v)
    return X, J[:, :, side.tangential_dir], J


def edge_invert(G: GeometryMap, side: Side, x, t0=None, iters: int = 30):
    """Closest edge parameter for physical points ``x`` (Gauss-Newton).

    Returns ``(t, dist)``.
    """
    x = np.atleast_2d(np.asarray(x, float))
    if t0 is None:
        samples = np.linspace(0.0, 1.0, 65)
        Xs, _, _ = edge_eval(G, side, samples)
        d2 = ((x[:, None, :] - Xs[None, :, :]) ** 2).sum(-1)
        t = samples[np.argmin(d2, axis=1)]
    else:
        t = np.broadcast_to(np.asarray(t0, float), (x.shape[0],)).copy()
    for _ in range(iters):
        X, T, _ = edge_eval(G, side, t)
        step = np.einsum("nc,nc->n", x - X, T) / np.einsum("nc,nc->n", T, T)
        t_new = np.clip(t + step, 0.0, 1.0)
        done = np.max(np.abs(t_new - t)) < 1e-14
        t = t_new
        if done:
            break
    X, _, _ = edge_eval(G, side, t)
    return t, np.linalg.norm(X - x, axis=1)


def geometry_invert(G: GeometryMap, x, iters: int = 40):
    """Parameter pre-images of points (Newton, several starts); returns (uv, residual)."""
    x = np.atleast_2d(np.asarray(x, float))
    s = (np.arange(5) + 0.5) / 5
    su, sv = np.meshgrid(s, s)
    Xs, _ = eval_geometry(G, su.ravel(), sv.ravel())
    d2 = ((x[:, None, :] - Xs[None, :, :]) ** 2).sum(-1)
    start = np.argmin(d2, axis=1)
    uv = np.stack([su.ravel()[start], sv.ravel()[start]], axis=1)
    for _ in range(iters):
        X, J = eval_geometry(G, uv[:, 0], uv[:, 1])
        step = np.linalg.solve(J, (x - X)[:, :, None])[:, :, 0]
        new = np.clip(uv + step, 0.0, 1.0)
        moved = np.max(np.abs(new - uv))
        uv = new
        if moved < 1e-14:
            break
    X, _ = eval_geometry(G, uv[:, 0], uv[:, 1])
    return uv, np.linalg.norm(X - x, axis=1)


def _arc_length(G: GeometryMap, side: Side, a: float, b: float, n: int = 24) -> float:
    xg, wg = np.polynomial.legendre.leggauss(n)
    t = 0.5 * (b - a) * (xg + 1) + a
    _, T, _ = edge_eval(G, side, t)
    return float(0.5 * (b - a) * np.sum(wg * np.linalg.norm(T, axis=1)))


@dataclass(frozen=True)
class Interface:
    """Shared boundary segment of patches ``k`` and ``l``.

    Edge parameters of ``k`` run over ``[a_k, b_k]``; the matching piece of
    ``l``'s edge is ``[a_l, b_l]``. ``same_orientation`` tells whether the
    two edge parameters increase in the same physical direction.
    """

    k: int
    side_k: Side
    a_k: float
    b_k: float
    l: int
    side_l: Side
    a_l: float
    b_l: float
    same_orientation: bool
    length: float
    h: float | None = None

    def flipped(self) -> "Interface":
        """The same interface seen from patch ``l``."""
        return Interface(self.l, self.side_l, self.a_l, self.b_l, self.k, self.side_k,
                         self.a_k, self.b_k, self.same_orientation, self.length, self.h)

    def initial_map(self, t):
        """Affine guess of the partner parameter for own parameters ``t``."""
        s = (np.asarray(t, float) - self.a_k) / (self.b_k - self.a_k)
        if not self.same_orientation:
            s = 1.0 - s
        return self.a_l + s * (self.b_l - self.a_l)


@dataclass(frozen=True)
class Junction:
    point: tuple[float, float]
    incidences: tuple[tuple[int, Side, float], ...]
    kind: str  # "corner" | "t-junction"


@dataclass(frozen=True, eq=False)
class MultiPatch:
    patches: tuple[GeometryMap, ...]
    interfaces: tuple[Interface, ...]
    junctions: tuple[Junction, ...]
    dirichlet: tuple[tuple[int, Side], ...]
    spaces: tuple[TensorSplineSpace, ...] | None = None
    tol: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def num_patches(self) -> int:
        return len(self.patches)

    def is_dirichlet(self, k: int, side: Side) -> bool:
        return (k, Side(side)) in self._dirichlet_set

    @property
    def _dirichlet_set(self):
        return {(k, Side(s)) for k, s in self.dirichlet}

    def interfaces_of(self, k: int) -> list[tuple[int, Interface]]:
        """Interfaces touching patch ``k``, oriented so that ``iface.k == k``."""
        out = []
        for n, iface in enumerate(self.interfaces):
            if iface.k == k:
                out.append((n, iface))
            elif iface.l == k:
                out.append((n, iface.flipped()))
        return out

    def neighbors(self, k: int) -> list[int]:
        return sorted({i.l for _, i in self.interfaces_of(k)})

    def discretize(self, p: int, r: int, s: int) -> "MultiPatch":
        """Attach the same ``(p, r, s)`` spline space to every patch."""
        space = make_space(p, r, s)
        return self.with_spaces([space] * self.num_patches)

    def with_spaces(self, spaces) -> "MultiPatch":
        spaces = tuple(spaces)
        if len(spaces) != self.num_patches:
            raise ValueError("one space per patch required")
        ifaces = tuple(replace(i, h=interface_mesh_size(self.patches, spaces, i))
                       for i in self.interfaces)
        return replace(self, interfaces=ifaces, spaces=spaces)

    def diameter(self) -> float:
        pts = np.concatenate([boundary_samples(G, 16) for G in self.patches])
        return float(np.max(np.linalg.norm(pts[:, None] - pts[None], axis=-1)))


def boundary_samples(G: GeometryMap, n: int = 32) -> np.ndarray:
    t = np.linspace(0.0, 1.0, n)
    return np.concatenate([edge_eval(G, s, t)[0] for s in Side])


def patch_diameter(G: GeometryMap, n: int = 32) -> float:
    pts = boundary_samples(G, n)
    return float(np.max(np.linalg.norm(pts[:, None] - pts[None], axis=-1)))


def _bbox(G: GeometryMap):
    pts = boundary_samples(G, 33)
    return pts.min(axis=0), pts.max(axis=0)


def _edge_boxes(G: GeometryMap):
    out = {}
    for s in Side:
        X, _, _ = edge_eval(G, s, np.linspace(0.0, 1.0, 17))
        pad = 0.01 * np.max(np.ptp(X, axis=0))
        out[s] = (X.min(axis=0) - pad, X.max(axis=0) + pad)
    return out


def _edge_overlap(Gk, sk, Gl, sl, tol):
    cand = []
    ends = np.array([0.0, 1.0])
    Xk, _, _ = edge_eval(Gk, sk, ends)
    tl, dl = edge_invert(Gl, sl, Xk)
    cand += [(e, t) for e, t, d in zip(ends, tl, dl) if d < tol]
    Xl, _, _ = edge_eval(Gl, sl, ends)
    tk, dk = edge_invert(Gk, sk, Xl)
    cand += [(t, e) for e, t, d in zip(ends, tk, dk) if d < tol]
    if len(cand) < 2:
        return None
    cand.sort()
    t0, s0 = cand[0]
    t1, s1 = cand[-1]
    if t1 - t0 < 1e-9 or abs(s1 - s0) < 1e-9:
        return None
    xm, _, _ = edge_eval(Gk, sk, [0.5 * (t0 + t1)])
    _, d = edge_invert(Gl, sl, xm)
    if d[0] >= tol:
        return None
    return float(t0), float(t1), float(min(s0, s1)), float(max(s0, s1)), bool(s1 > s0)


def _check_overlap(patches, k, l, tol):
    s = (np.arange(6) + 0.5) / 6
    su, sv = np.meshgrid(s, s)
    Xk, _ = eval_geometry(patches[k], su.ravel(), sv.ravel())
    uv, res = geometry_invert(patches[l], Xk)
    margin = 1e-6
    inside = (res < tol) & np.all((uv > margin) & (uv < 1 - margin), axis=1)
    if np.any(inside):
        raise TopologyError(f"patches {k} and {l} overlap")


def detect_interfaces(patches, tol: float | None = None) -> list[Interface]:
    """All edge pairs sharing a boundary segment of positive length."""
    patches = list(patches)
    if tol is None:
        pts = np.concatenate([boundary_samples(G, 9) for G in patches])
        tol = 1e-8 * float(np.max(np.ptp(pts, axis=0)) * math.sqrt(2))
    boxes = [_bbox(G) for G in patches]
    eboxes = [_edge_boxes(G) for G in patches]
    out: list[Interface] = []
    for k in range(len(patches)):
        for l in range(k + 1, len(patches)):
            (lo_k, hi_k), (lo_l, hi_l) = boxes[k], boxes[l]
            if np.any(lo_k > hi_l + tol) or np.any(lo_l > hi_k + tol):
                continue
            _check_overlap(patches, k, l, tol)
            _check_overlap(patches, l, k, tol)
            for sk in Side:
                for sl in Side:
                    (lo_a, hi_a), (lo_b, hi_b) = eboxes[k][sk], eboxes[l][sl]
                    if np.any(lo_a > hi_b + tol) or np.any(lo_b > hi_a + tol):
                        continue
                    ov = _edge_overlap(patches[k], sk, patches[l], sl, tol)
                    if ov is None:
                        continue
                    a_k, b_k, a_l, b_l, same = ov
                    out.append(Interface(k, sk, a_k, b_k, l, sl, a_l, b_l, same,
                                         _arc_length(patches[k], sk, a_k, b_k)))
    _check_edge_cover(patches, out)
    return out


def _edge_intervals(ifaces):
    cover: dict[tuple[int, Side], list[tuple[float, float, int]]] = {}
    for i in ifaces:
        cover.setdefault((i.k, i.side_k), []).append((i.a_k, i.b_k, i.l))
        cover.setdefault((i.l, i.side_l), []).append((i.a_l, i.b_l, i.k))
    return cover


def _check_edge_cover(patches, ifaces, ptol: float = 1e-9):
    for (k, side), ivs in _edge_intervals(ifaces).items():
        ivs.sort()
        pos = 0.0
        for a, b, l in ivs:
            if a < pos - ptol:
                raise TopologyError(
                    f"patch {k} side {side.name}: overlapping interface pieces near {a:.6g}")
            if a > pos + ptol:
                raise TopologyError(
                    f"patch {k} side {side.name}: gap in interface cover on [{pos:.6g}, {a:.6g}]")
            pos = b
        if pos < 1.0 - ptol:
            raise TopologyError(
                f"patch {k} side {side.name}: edge only partially shared (up to {pos:.6g})")


def dirichlet_edges(num_patches: int, ifaces) -> list[tuple[int, Side]]:
    shared = {(i.k, i.side_k) for i in ifaces} | {(i.l, i.side_l) for i in ifaces}
    return [(k, s) for k in range(num_patches) for s in Side if (k, s) not in shared]


def detect_junctions(patches, ifaces, dirichlet, tol: float) -> list[Junction]:
    """Interface endpoints away from the Dirichlet boundary, classified."""
    patches = list(patches)
    pts = []
    for i in ifaces:
        X, _, _ = edge_eval(patches[i.k], i.side_k, [i.a_k, i.b_k])
        pts.extend(X)
    uniq: list[np.ndarray] = []
    for x in pts:
        if all(np.linalg.norm(x - y) >= tol for y in uniq):
            uniq.append(x)
    if not uniq:
        return []
    P = np.array(uniq)
    on_dirichlet = np.zeros(len(P), bool)
    for k, s in dirichlet:
        _, d = edge_invert(patches[k], s, P)
        on_dirichlet |= d < tol
    hits = {}
    for k, G in enumerate(patches):
        for s in Side:
            t, d = edge_invert(G, s, P)
            _, T, _ = edge_eval(G, s, t)
            ptol = tol / np.maximum(np.linalg.norm(T, axis=1), 1e-300)
            for n in np.flatnonzero(d < tol):
                hits.setdefault(n, []).append((k, s, float(t[n]), ptol[n] < t[n] < 1 - ptol[n]))
    out = []
    for n, x in enumerate(P):
        if on_dirichlet[n]:
            continue
        inc = hits.get(n, [])
        interior = any(h[3] for h in inc)
        out.append(Junction((float(x[0]), float(x[1])), tuple(h[:3] for h in inc),
                            "t-junction" if interior else "corner"))
    out.sort(key=lambda j: (round(j.point[0], 9), round(j.point[1], 9)))
    return out


def interface_mesh_size(patches, spaces, iface: Interface) -> float:
    """Penalty length scale of an interface.

    For each side, the physical width (measured transversally, i.e. normal
    to the interface) of the elements adjacent to the shared segment; the
    smaller of the two sides is returned.
    """
    def side_width(G, space, side, a, b):
        kv_t = (space.kv_u, space.kv_v)[side.tangential_dir]
        kv_n = (space.kv_u, space.kv_v)[side.normal_dir]
        bp = kv_t.breakpoints
        mids = 0.5 * (bp[:-1] + bp[1:])
        lo, hi = bp[:-1], bp[1:]
        adj = (np.minimum(hi, b) - np.maximum(lo, a)) > 1e-12
        tm = mids[adj]
        nb = kv_n.breakpoints
        n0, n1 = (nb[-2], nb[-1]) if side.at_end else (nb[0], nb[1])
        xg, wg = np.polynomial.legendre.leggauss(8)
        sn = 0.5 * (n1 - n0) * (xg + 1) + n0
        T, S = np.meshgrid(tm, sn, indexing="ij")
        if side.tangential_dir == 0:
            u, v = T.ravel(), S.ravel()
        else:
            u, v = S.ravel(), T.ravel()
        _, J = eval_geometry(G, u, v)
        speed = np.linalg.norm(J[:, :, side.normal_dir], axis=1).reshape(T.shape)
        return float(np.min(0.5 * (n1 - n0) * speed @ wg))

    hk = side_width(patches[iface.k], spaces[iface.k], iface.side_k, iface.a_k, iface.b_k)
    hl = side_width(patches[iface.l], spaces[iface.l], iface.side_l, iface.a_l, iface.b_l)
    return min(hk, hl)


def build_multipatch(patches, tol: float | None = None, meta=None) -> MultiPatch:
    patches = tuple(patches)
    if tol is None:
        pts = np.concatenate([boundary_samples(G, 9) for G in patches])
        tol = 1e-8 * float(np.max(np.ptp(pts, axis=0)) * math.sqrt(2))
    ifaces = detect_interfaces(patches, tol)
    dirichlet = dirichlet_edges(len(patches), ifaces)
    junctions = detect_junctions(patches, ifaces, dirichlet, tol)
    return MultiPatch(patches, tuple(ifaces), tuple(junctions), tuple(dirichlet),
                      tol=tol, meta=dict(meta or {}))


# ---------------------------------------------------------------- generators

def ring_sector_angles(sectors: int, offset_deg: float, sweep_deg: float) -> np.ndarray:
    """Sector break angles (degrees) of one layer."""
    width = sweep_deg / sectors
    if sweep_deg >= 360.0 - 1e-12:
        return offset_deg + width * np.arange(sectors + 1)
    cuts = width * np.arange(1, sectors) + offset_deg
    if np.any(cuts <= 0) or np.any(cuts >= sweep_deg):
        raise TopologyError("offset pushes a sector cut outside the partial ring")
    return np.concatenate([[0.0], cuts, [sweep_deg]])


def build_ring(layer_widths, sectors_per_layer, angular_offsets,
               inner_radius: float = 1.0, outer_radius: float = 2.0,
               sweep_deg: float = 360.0) -> MultiPatch:
    """Annulus split into concentric layers of equal-angle sectors.

    ``angular_offsets`` (degrees) rotate the sector cuts of each layer. For a
    partial ring (``sweep_deg < 360``) they shift the interior cuts instead.
    """
    widths = [float(w) for w in layer_widths]
    if len(widths) != len(sectors_per_layer) or len(widths) != len(angular_offsets):
        raise TopologyError("layer_widths, sectors_per_layer and angular_offsets differ in length")
    if any(w <= 0 for w in widths):
        raise TopologyError("layer widths must be positive")
    if abs(inner_radius + sum(widths) - outer_radius) > 1e-10:
        raise TopologyError(
            f"layer widths sum to {sum(widths)}, expected {outer_radius - inner_radius}")
    if not 0 < sweep_deg <= 360.0:
        raise TopologyError("sweep must lie in (0, 360]")
    radii = inner_radius + np.concatenate([[0.0], np.cumsum(widths)])
    radii[-1] = outer_radius
    patches = []
    for layer, (n, off) in enumerate(zip(sectors_per_layer, angular_offsets)):
        if n < 1:
            raise TopologyError("each layer needs at least one sector")
        ang = ring_sector_angles(int(n), float(off), sweep_deg)
        if np.max(np.diff(ang)) > 90.0 + 1e-12:
            raise TopologyError("sector openings above 90 degrees are not representable")
        for a0, a1 in zip(ang[:-1], ang[1:]):
            patches.append(annular_sector(radii[layer], radii[layer + 1],
                                          math.radians(a0), math.radians(a1)))
    meta = dict(kind="ring", layer_widths=widths, sectors=list(map(int, sectors_per_layer)),
                offsets=list(map(float, angular_offsets)), sweep=sweep_deg,
                inner_radius=inner_radius, outer_radius=outer_radius)
    return build_multipatch(patches, meta=meta)


@lru_cache(maxsize=None)
def staggered_ring() -> MultiPatch:
    """5 layers of width 0.2, 4 sectors each, alternating 45 degree stagger."""
    return build_ring([0.2] * 5, [4] * 5, [0.0, 45.0, 0.0, 45.0, 0.0])


@lru_cache(maxsize=None)
def thin_ring(thin: float = 0.02, thin_layer: int = 1) -> MultiPatch:
    """Same layout as :func:`staggered_ring` but with one thin layer."""
    widths = [(1.0 - thin) / 4] * 5
    widths[thin_layer] = thin
    widths[-1] = 1.0 - sum(widths[:-1])
    return build_ring(widths, [4] * 5, [0.0, 45.0, 0.0, 45.0, 0.0])


@lru_cache(maxsize=None)
def mini_ring() -> MultiPatch:
    """Quarter ring, 2 layers x 2 sectors, with staggered interior cuts."""
    return build_ring([0.5, 0.5], [2, 2], [0.0, 15.0], sweep_deg=90.0)


def guillotine(tree, box=(0.0, 0.0, 1.0, 1.0)) -> list[tuple[float, float, float, float]]:
    """Rectangles from a guillotine tree ``(axis, fraction, first, second)``; ``None`` is a leaf."""
    if tree is None:
        return [tuple(box)]
    axis, frac, first, second = tree
    x0, y0, x1, y1 = box
    if axis == "x":
        c = x0 + frac * (x1 - x0)
        return guillotine(first, (x0, y0, c, y1)) + guillotine(second, (c, y0, x1, y1))
    c = y0 + frac * (y1 - y0)
    return guillotine(first, (x0, y0, x1, c)) + guillotine(second, (x0, c, x1, y1))


TEE_SPLITS = [(0.0, 0.0, 0.4, 0.5), (0.4, 0.0, 1.0, 0.5), (0.0, 0.5, 1.0, 1.0)]
GRID2X2_SPLITS = [(0.0, 0.0, 0.5, 0.5), (0.5, 0.0, 1.0, 0.5),
                  (0.0, 0.5, 0.5, 1.0), (0.5, 0.5, 1.0, 1.0)]


def build_square_tgrid(splits=TEE_SPLITS) -> MultiPatch:
    """Unit square cut into axis-aligned rectangles ``(x0, y0, x1, y1)``."""
    rects = [tuple(map(float, r)) for r in splits]
    for x0, y0, x1, y1 in rects:
        if not (0 <= x0 < x1 <= 1 and 0 <= y0 < y1 <= 1):
            raise TopologyError(f"rectangle {(x0, y0, x1, y1)} is not inside the unit square")
    area = sum((x1 - x0) * (y1 - y0) for x0, y0, x1, y1 in rects)
    if abs(area - 1.0) > 1e-10:
        raise TopologyError(f"rectangles cover area {area}, expected 1")
    mp = build_multipatch([rectangle(*r) for r in rects],
                          meta=dict(kind="square-tgrid", splits=[list(r) for r in rects]))
    for k, s in mp.dirichlet:
        X, _, _ = edge_eval(mp.patches[k], s, np.linspace(0, 1, 5))
        on_box = np.all(np.isclose(X[:, 0], 0) | np.isclose(X[:, 0], 1)) \
            or np.all(np.isclose(X[:, 1], 0) | np.isclose(X[:, 1], 1))
        if not on_box:
            raise TopologyError(f"patch {k} side {s.name} is exposed inside the square")
    return mp


# ------------------------------------------------------------ serialization

def to_dict(mp: MultiPatch) -> dict:
    return {
        "schema": SCHEMA_ID,
        "tolerance": mp.tol,
        "meta": mp.meta,
        "patches": [
            {"degree": [G.space.kv_u.degree, G.space.kv_v.degree],
             "knots_u": G.space.kv_u.knots.tolist(), "knots_v": G.space.kv_v.knots.tolist(),
             "control_points": G.control_points.tolist(), "weights": G.weights.tolist()}
            for G in mp.patches],
        "interfaces": [
            {"k": i.k, "side_k": i.side_k.name, "range_k": [i.a_k, i.b_k],
             "l": i.l, "side_l": i.side_l.name, "range_l": [i.a_l, i.b_l],
             "same_orientation": i.same_orientation, "length": i.length, "h": i.h}
            for i in mp.interfaces],
        "junctions": [
            {"point": list(j.point), "kind": j.kind,
             "incidences": [[k, s.name, t] for k, s, t in j.incidences]}
            for j in mp.junctions],
        "dirichlet": [[k, s.name] for k, s in mp.dirichlet],
    }


def save(mp: MultiPatch, path) -> None:
    with open(path, "w") as fh:
        json.dump(to_dict(mp), fh, indent=1)


def from_dict(d: dict) -> MultiPatch:
    from .bspline import KnotVector

    if d.get("schema") != SCHEMA_ID:
        raise ValueError(f"unsupported schema {d.get('schema')!r}")
    patches = []
    for p in d["patches"]:
        space = TensorSplineSpace(KnotVector(p["degree"][0], p["knots_u"]),
                                  KnotVector(p["degree"][1], p["knots_v"]))
        patches.append(GeometryMap(space, p["control_points"], p["weights"]))
    ifaces = tuple(
        Interface(i["k"], Side[i["side_k"]], *i["range_k"], i["l"], Side[i["side_l"]],
                  *i["range_l"], i["same_orientation"], i["length"], i["h"])
        for i in d["interfaces"])
    junctions = tuple(
        Junction(tuple(j["point"]), tuple((k, Side[s], t) for k, s, t in j["incidences"]),
                 j["kind"])
        for j in d["junctions"])
    dirichlet = tuple((k, Side[s]) for k, s in d["dirichlet"])
    return MultiPatch(tuple(patches), ifaces, junctions, dirichlet, tol=d["tolerance"],
                      meta=d.get("meta", {}))


def load(path) -> MultiPatch:
    with open(path) as fh:
        return from_dict(json.load(fh))


# ------------------------------------------------------ interface quadrature

def partner_params(mp: MultiPatch, iface: Interface, t) -> np.ndarray:
    """Edge parameters on ``iface.l`` of the points ``t`` on ``iface.k``'s edge."""
    X, _, _ = edge_eval(mp.patches[iface.k], iface.side_k, t)
    s, d = edge_invert(mp.patches[iface.l], iface.side_l, X, t0=iface.initial_map(t))
    if np.any(d > 100 * max(mp.tol, 1e-14)):
        raise TopologyError(f"interface {iface.k}-{iface.l}: partner point mismatch {d.max():.3g}")
    return s


def interface_breakpoints(mp: MultiPatch, iface: Interface) -> np.ndarray:
    """Merged element boundaries of both sides, in ``iface.k``'s edge parameter."""
    if mp.spaces is None:
        raise ValueError("multipatch has no discretization attached")
    sk, sl = mp.spaces[iface.k], mp.spaces[iface.l]
    bk = (sk.kv_u, sk.kv_v)[iface.side_k.tangential_dir].breakpoints
    bl = (sl.kv_u, sl.kv_v)[iface.side_l.tangential_dir].breakpoints
    inner_k = bk[(bk > iface.a_k) & (bk < iface.b_k)]
    inner_l = bl[(bl > iface.a_l) & (bl < iface.b_l)]
    mapped = np.empty(0)
    if len(inner_l):
        X, _, _ = edge_eval(mp.patches[iface.l], iface.side_l, inner_l)
        back = iface.flipped()
        mapped, d = edge_invert(mp.patches[iface.k], iface.side_k, X, t0=back.initial_map(inner_l))
        if np.any(d > 100 * max(mp.tol, 1e-14)):
            raise TopologyError("partner breakpoint does not lie on the interface")
    pts = np.sort(np.concatenate([[iface.a_k, iface.b_k], inner_k, mapped]))
    keep = np.concatenate([[True], np.diff(pts) > 1e-12])
    pts = pts[keep]
    pts[-1] = iface.b_k
    if len(pts) < 2:
        raise RuntimeError("empty merged breakpoint list on interface")
    return pts
