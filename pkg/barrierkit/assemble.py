"""
Assembly of two dimensional slices of the admissible set. A slice boundary is
a closed curve made of barrier arcs, usable parts of constraint boundaries
(where some control keeps the state from leaving the constraint set) and
connecting edges along constraint or domain faces.

All slice geometry is evaluated in the plane of the two slice coordinates,
with the remaining coordinates fixed at the slice parameter.
"""

import dataclasses
import logging
from enum import IntEnum
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import optimize

from .barrier import BarrierTrajectory
from .exceptions import OpenBoundary
from .saddle import saddle_lie
from .sysmodel import (
    ActiveSet,
    ControlSystem,
    as_vector,
    constraint_gradient,
    constraint_values,
)
from .tangency import TangencyPoint

logger = logging.getLogger(__name__)

#: Endpoints closer than this are stitched together
STITCH_TOL = 1e-4
#: Tolerance of the closure check
SLICE_TOL = 1e-6


class SegmentTag(IntEnum):
    """Role of a boundary segment."""

    BARRIER_ARC = 0
    USABLE_PART = 1
    CONSTRAINT_EDGE = 2


@dataclasses.dataclass(eq=False)
class Segment:
    """A polyline piece of a slice boundary."""

    tag: SegmentTag
    points: np.ndarray
    #: 1-based constraint index for usable parts and constraint edges
    constraint: Optional[int] = None
    label: str = ""
    origin: Optional[TangencyPoint] = None

    def __post_init__(self) -> None:
        self.points = np.atleast_2d(np.array(self.points, dtype=float))

    @property
    def start(self) -> np.ndarray:
        """First point."""
        return self.points[0]

    @property
    def end(self) -> np.ndarray:
        """Last point."""
        return self.points[-1]

    @property
    def length(self) -> float:
        """Polyline length."""
        return float(np.sum(np.linalg.norm(np.diff(self.points, axis=0), axis=1)))

    def reversed(self) -> "Segment":
        """Copy traversed in the opposite direction."""
        return dataclasses.replace(self, points=self.points[::-1].copy())

    def project(self, coords: Sequence[int]) -> "Segment":
        """Copy restricted to `coords`."""
        return dataclasses.replace(self, points=self.points[:, list(coords)].copy())

    def to_dict(self) -> dict:
        """JSON-compatible form."""
        return {
            "tag": self.tag.name,
            "label": self.label,
            "constraint": self.constraint,
            "points": self.points.tolist(),
        }


@dataclasses.dataclass(eq=False)
class AdmissibleSetSlice:
    """Closed, counter-clockwise boundary of one slice.

    A slice without segments is degenerate and has zero area.
    """

    param: Tuple[float, ...]
    coords: Tuple[int, int]
    segments: List[Segment]
    #: Two dimensional junctions where barrier arcs leave the constraint set
    junctions: List[np.ndarray] = dataclasses.field(default_factory=list)
    stitch_tol: float = STITCH_TOL

    @property
    def degenerate(self) -> bool:
        """True for zero-area slices."""
        return not self.segments

    @property
    def polygon(self) -> np.ndarray:
        """Boundary vertices in order, without the closing repeat."""
        if not self.segments:
            return np.zeros((0, 2))
        return np.concatenate([seg.points[:-1] for seg in self.segments])

    def to_dict(self) -> dict:
        """JSON-compatible form."""
        return {
            "param": list(self.param),
            "coords": list(self.coords),
            "area": slice_area(self),
            "junctions": [np.asarray(j).tolist() for j in self.junctions],
            "segments": [seg.to_dict() for seg in self.segments],
            "stitch_tol": self.stitch_tol,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AdmissibleSetSlice":
        """Inverse of :meth:`to_dict`."""
        return cls(
            param=tuple(data["param"]),
            coords=tuple(data["coords"]),
            segments=[
                Segment(
                    SegmentTag[seg["tag"]],
                    np.array(seg["points"], dtype=float).reshape(-1, 2),
                    seg.get("constraint"),
                    seg.get("label", ""),
                )
                for seg in data["segments"]
            ],
            junctions=[np.array(j, dtype=float) for j in data.get("junctions", [])],
            stitch_tol=data.get("stitch_tol", STITCH_TOL),
        )


class Membership(IntEnum):
    """Location of a point relative to a slice."""

    INSIDE = 0
    BOUNDARY = 1
    OUTSIDE = 2


@dataclasses.dataclass(frozen=True)
class MembershipResult:
    """Membership with the distance to the boundary."""

    kind: Membership
    distance: float


def lift_point(
    sys: ControlSystem, q: np.ndarray, coords: Sequence[int], param: Sequence[float]
) -> np.ndarray:
    """Full state with slice-plane point `q` and the remaining coordinates
    fixed to `param`."""
    x = np.zeros(sys.n)
    rest = [k for k in range(sys.n) if k not in coords]
    x[rest] = param
    x[list(coords)] = q
    return x


def usable_part(
    sys: ControlSystem,
    i: int,
    boundary_grid: np.ndarray,
    *,
    g_tol: float = 1e-9,
    active_tol: float = 1e-8,
) -> List[Segment]:
    """Maximal runs of an ordered grid on ``g_i = 0`` where
    ``min_u max_d L_f g_i <= 0`` and every other constraint holds.

    Run ends are refined to the exact transition by root finding along the
    chord between the neighbouring grid points, then projected back onto
    ``g_i = 0``.
    """
    grid = np.atleast_2d(np.array(boundary_grid, dtype=float))
    if grid.shape[1] != sys.n:
        raise ValueError("boundary grid points must be full states")
    others = [j for j in range(sys.p) if j != i - 1]

    def criterion(x: np.ndarray) -> float:
        value = saddle_lie(sys, x, ActiveSet((i,), active_tol)).value
        if others:
            value = max(value, float(np.max(constraint_values(sys, x)[others])) - g_tol)
        return value

    def onto_boundary(x: np.ndarray) -> np.ndarray:
        con = sys.constraint(i)
        for _ in range(20):
            val = float(con.func(x))
            if abs(val) <= 1e-13:
                break
            grad = constraint_gradient(sys, i, x)
            x = x - val * grad / float(grad @ grad)
        return x

    def transition(bad: np.ndarray, good: np.ndarray) -> np.ndarray:
        chord = lambda th: criterion(bad + th * (good - bad))
        if chord(1.0) >= 0:
            return good
        theta = optimize.brentq(chord, 0.0, 1.0, xtol=1e-14)
        return onto_boundary(bad + theta * (good - bad))

    values = np.array([criterion(x) for x in grid])
    ok = values <= 0
    segments = []
    k = 0
    while k < len(grid):
        if not ok[k]:
            k += 1
            continue
        start = k
        while k + 1 < len(grid) and ok[k + 1]:
            k += 1
        points = list(grid[start : k + 1])
        if start > 0:
            points.insert(0, transition(grid[start - 1], grid[start]))
        if k + 1 < len(grid):
            points.append(transition(grid[k + 1], grid[k]))
        segments.append(
            Segment(SegmentTag.USABLE_PART, np.array(points), constraint=i, label=f"g{i}")
        )
        k += 1
    return segments


def _polyline_distance(points: np.ndarray, q: np.ndarray) -> Tuple[float, int, float]:
    """Distance from `q` to a polyline with the closest piece and fraction."""
    a = points[:-1]
    ab = points[1:] - a
    denom = np.einsum("ij,ij->i", ab, ab)
    frac = np.clip(
        np.divide(
            np.einsum("ij,ij->i", q - a, ab), denom, out=np.zeros_like(denom), where=denom > 0
        ),
        0.0,
        1.0,
    )
    dist = np.linalg.norm(a + frac[:, None] * ab - q, axis=1)
    best = int(np.argmin(dist))
    return float(dist[best]), best, float(frac[best])


def _split(points: np.ndarray, cuts: List[np.ndarray], tol: float) -> List[np.ndarray]:
    """Split a polyline at the given points lying on it."""
    keyed = []
    for q in cuts:
        dist, piece, frac = _polyline_distance(points, q)
        if dist > tol:
            continue
        if np.linalg.norm(q - points[0]) <= tol or np.linalg.norm(q - points[-1]) <= tol:
            continue
        keyed.append((piece + frac, piece, q))
    keyed.sort(key=lambda item: item[0])
    parts = []
    current = [points[0]]
    next_vertex = 1
    for _, piece, q in keyed:
        while next_vertex <= piece:
            current.append(points[next_vertex])
            next_vertex += 1
        current.append(q)
        parts.append(np.array(current))
        current = [q]
    current.extend(points[next_vertex:])
    parts.append(np.array(current))
    return [part for part in parts if len(part) >= 2]


@dataclasses.dataclass(eq=False)
class _Edge:
    a: int
    b: int
    segment: Segment
    alive: bool = True


class _Graph:
    def __init__(self, tol: float) -> None:
        self.tol = tol
        self.nodes: List[np.ndarray] = []
        self.edges: List[_Edge] = []

    def node(self, q: np.ndarray) -> int:
        for idx, other in enumerate(self.nodes):
            if np.linalg.norm(other - q) <= self.tol:
                return idx
        self.nodes.append(np.array(q, dtype=float))
        return len(self.nodes) - 1

    def add(self, segment: Segment) -> _Edge:
        edge = _Edge(self.node(segment.start), self.node(segment.end), segment)
        self.edges.append(edge)
        return edge

    def incident(self, idx: int) -> List[_Edge]:
        return [edge for edge in self.edges if edge.alive and idx in (edge.a, edge.b)]

    def degree(self, idx: int) -> int:
        return sum((edge.a == idx) + (edge.b == idx) for edge in self.incident(idx))


def _faces(
    sys: ControlSystem, q: np.ndarray, coords: Sequence[int], param: Sequence[float], tol: float
) -> List[Tuple[str, Optional[int]]]:
    faces: List[Tuple[str, Optional[int]]] = []
    values = constraint_values(sys, lift_point(sys, q, coords, param))
    for j, val in enumerate(values):
        if abs(val) <= tol:
            faces.append((f"g{j + 1}", j + 1))
    for pos, c in enumerate(coords):
        for bound, rel in ((sys.domain.lower[c], ">="), (sys.domain.upper[c], "<=")):
            if np.isfinite(bound) and abs(q[pos] - bound) <= tol:
                faces.append((f"x{c + 1}{rel}{bound:g}", None))
    return faces


def _arc_points(
    arc: Union[BarrierTrajectory, Segment]
) -> Tuple[np.ndarray, Optional[TangencyPoint]]:
    if isinstance(arc, Segment):
        return arc.points, arc.origin
    return arc.x, arc.origin


def signed_area(points: np.ndarray) -> float:
    """Shoelace area, positive for counter-clockwise vertex order."""
    if len(points) < 3:
        return 0.0
    x, y = points[:, 0], points[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def build_slice(
    sys: ControlSystem,
    param: Union[float, Sequence[float]],
    barrier_arcs: Sequence[Union[BarrierTrajectory, Segment]],
    usable_segments: Sequence[Segment],
    *,
    coords: Tuple[int, int] = (1, 2),
    stitch_tol: float = STITCH_TOL,
) -> AdmissibleSetSlice:
    """Stitch projected barrier arcs and usable parts into a closed boundary.

    Arc endpoints lying on a usable part split it. An arc end left dangling is
    joined along the constraint or domain face it lies on to the nearest other
    dangling endpoint on that face. Pieces that still dangle are pruned; the
    remaining cycle is oriented counter-clockwise.

    Raises:
        OpenBoundary: A barrier arc could not be placed on a closed boundary.
    """
    param = tuple(float(p) for p in np.atleast_1d(np.asarray(param, dtype=float)))
    coords = tuple(int(c) for c in coords)
    if len(param) != sys.n - 2 or len(coords) != 2:
        raise ValueError("slice needs two coordinates and n - 2 parameter values")
    graph = _Graph(stitch_tol)
    seeds: List[int] = []
    arc_ends: List[np.ndarray] = []
    arc_edges: List[_Edge] = []

    arcs2d = []
    for arc in barrier_arcs:
        points, origin = _arc_points(arc)
        flat = np.array(points, dtype=float)[:, list(coords)]
        # Arcs run backward from the tangency point; store them forward.
        segment = Segment(
            SegmentTag.BARRIER_ARC,
            flat[::-1].copy(),
            constraint=None if origin is None else origin.active_index,
            label="barrier" if origin is None else f"barrier:g{origin.active_index}",
            origin=origin,
        )
        arcs2d.append(segment)
        arc_ends.extend([segment.start, segment.end])

    for seg in usable_segments:
        flat = seg.points if seg.points.shape[1] == 2 else seg.points[:, list(coords)]
        for part in _split(flat, arc_ends, stitch_tol):
            if np.linalg.norm(part[-1] - part[0]) > stitch_tol or len(part) > 2:
                graph.add(dataclasses.replace(seg, points=part))

    for segment in arcs2d:
        if segment.length <= stitch_tol:
            seeds.append(graph.node(segment.end))
            continue
        arc_edges.append(graph.add(segment))
        seeds.append(graph.node(segment.start))

    for seed in seeds:
        if graph.degree(seed) > 1:
            continue
        q = graph.nodes[seed]
        faces = _faces(sys, q, coords, param, stitch_tol)
        best = None
        for idx, other in enumerate(graph.nodes):
            if idx == seed or graph.degree(idx) > 1:
                continue
            other_faces = _faces(sys, other, coords, param, stitch_tol)
            shared = [face for face in faces if face in other_faces]
            if not shared:
                continue
            dist = float(np.linalg.norm(other - q))
            if best is None or dist < best[0]:
                best = (dist, idx, shared[0])
        if best is not None:
            _, idx, (label, index) = best
            graph.add(
                Segment(
                    SegmentTag.CONSTRAINT_EDGE,
                    np.array([q, graph.nodes[idx]]),
                    constraint=index,
                    label=label,
                )
            )

    changed = True
    while changed:
        changed = False
        for idx in range(len(graph.nodes)):
            if graph.degree(idx) == 1:
                for edge in graph.incident(idx):
                    edge.alive = False
                changed = True

    dangling = [edge for edge in arc_edges if not edge.alive]
    if dangling:
        raise OpenBoundary(
            "barrier arc does not close into a boundary",
            endpoints=[edge.segment.start.tolist() for edge in dangling]
            + [edge.segment.end.tolist() for edge in dangling],
        )

    alive = [edge for edge in graph.edges if edge.alive]
    if not alive:
        logger.info("degenerate slice", extra={"param": list(param)})
        return AdmissibleSetSlice(param, coords, [], [], stitch_tol)

    start_edge = arc_edges[0] if arc_edges else alive[0]
    used = {id(start_edge)}
    ordered = [start_edge.segment]
    start_node, node = start_edge.a, start_edge.b
    current_tag = start_edge.segment.tag
    while node != start_node:
        options = [edge for edge in graph.incident(node) if id(edge) not in used]
        if not options:
            raise OpenBoundary(
                "slice boundary does not close", endpoints=[graph.nodes[node].tolist()]
            )
        options.sort(key=lambda edge: edge.segment.tag == current_tag)
        edge = options[0]
        used.add(id(edge))
        segment = edge.segment if edge.a == node else edge.segment.reversed()
        ordered.append(segment)
        node = edge.b if edge.a == node else edge.a
        current_tag = segment.tag

    left = [edge for edge in arc_edges if id(edge) not in used]
    if left:
        raise OpenBoundary(
            "barrier arc is not on the closed boundary",
            endpoints=[edge.segment.start.tolist() for edge in left],
        )

    result = AdmissibleSetSlice(param, coords, ordered, [], stitch_tol)
    if signed_area(result.polygon) < 0:
        result.segments = [seg.reversed() for seg in reversed(ordered)]
    result.junctions = [
        np.asarray(origin.z, dtype=float)[list(coords)]
        for origin in (_arc_points(arc)[1] for arc in barrier_arcs)
        if origin is not None
    ]
    _check_orientation(sys, result)
    return result


def _check_orientation(sys: ControlSystem, result: AdmissibleSetSlice) -> None:
    """Warn when the interior is not on the ``-Dg`` side of a usable part."""
    for seg in result.segments:
        if seg.tag != SegmentTag.USABLE_PART or seg.constraint is None or seg.length == 0:
            continue
        mid = len(seg.points) // 2
        a, b = seg.points[max(mid - 1, 0)], seg.points[min(mid, len(seg.points) - 1)]
        if np.array_equal(a, b):
            b = seg.points[-1]
        q = 0.5 * (a + b)
        lifted = lift_point(sys, q, result.coords, result.param)
        grad = constraint_gradient(sys, seg.constraint, lifted)
        inward = -grad[list(result.coords)]
        norm = np.linalg.norm(inward)
        if norm == 0:
            continue
        probe = q + 10 * result.stitch_tol * inward / norm
        if contains(result, probe).kind != Membership.INSIDE:
            logger.warning(
                "slice interior is not on the feasible side of a usable part",
                extra={"param": list(result.param), "constraint": seg.constraint},
            )
        return


def contains(slice_: AdmissibleSetSlice, point) -> MembershipResult:
    """Classify a point of the slice plane.

    Points within ``stitch_tol`` of the boundary are reported as
    :attr:`Membership.BOUNDARY`; otherwise even-odd ray casting decides.
    """
    q = as_vector(point, 2, "slice point")
    poly = slice_.polygon
    if len(poly) == 0:
        return MembershipResult(Membership.OUTSIDE, float("inf"))
    a = poly
    b = np.roll(poly, -1, axis=0)
    closed = np.vstack([poly, poly[:1]])
    dist, _, _ = _polyline_distance(closed, q)
    if dist <= slice_.stitch_tol:
        return MembershipResult(Membership.BOUNDARY, dist)
    straddle = (a[:, 1] > q[1]) != (b[:, 1] > q[1])
    with np.errstate(divide="ignore", invalid="ignore"):
        cross_x = a[:, 0] + (q[1] - a[:, 1]) * (b[:, 0] - a[:, 0]) / (b[:, 1] - a[:, 1])
    inside = int(np.count_nonzero(straddle & (q[0] < cross_x))) % 2 == 1
    return MembershipResult(Membership.INSIDE if inside else Membership.OUTSIDE, dist)


def slice_area(slice_: AdmissibleSetSlice) -> float:
    """Enclosed area; zero for degenerate slices."""
    return abs(signed_area(slice_.polygon))


def closure_gap(slice_: AdmissibleSetSlice) -> float:
    """Largest distance between consecutive segment endpoints, including the
    wrap-around from the last segment to the first."""
    segs = slice_.segments
    if not segs:
        return 0.0
    return max(
        float(np.linalg.norm(segs[k].end - segs[(k + 1) % len(segs)].start))
        for k in range(len(segs))
    )


def junction_angle(
    sys: ControlSystem,
    arc: BarrierTrajectory,
    coords: Sequence[int] = (1, 2),
    reach: float = 1e-2,
) -> float:
    """Angle in radians between the constraint boundary at the tangency point
    and the secant to the point of `arc` at slice-plane distance `reach`,
    taken from the dense output of the first trace piece (or its end when it
    is shorter)."""
    coords = list(coords)
    if not arc.pieces:
        return 0.0
    dense = arc.pieces[0].dense
    origin = arc.x[0][coords]

    def distance(s: float) -> float:
        return float(np.linalg.norm(dense(s)[coords] - origin)) - reach

    lo, hi = float(dense.t[0]), float(dense.t[-1])
    if distance(hi) > 0:
        hi = optimize.brentq(distance, lo, hi, xtol=1e-14)
    secant = dense(hi)[coords] - origin
    grad = constraint_gradient(sys, arc.origin.active_index, arc.origin.z)[coords]
    tangent = np.array([-grad[1], grad[0]])
    snorm = np.linalg.norm(secant)
    tnorm = np.linalg.norm(tangent)
    if snorm == 0 or tnorm == 0:
        return 0.0
    cross = abs(secant[0] * tangent[1] - secant[1] * tangent[0]) / (snorm * tnorm)
    return float(np.arcsin(min(1.0, cross)))
