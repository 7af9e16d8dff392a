"""Skeletonization, branch-graph decomposition and contour length of vessel masks.

The skeleton is the measurement substrate for vessel length and tortuosity,
so the thinning here is pinned down exactly; two independent implementations
of the same rules must agree pixel for pixel. The committed algorithm:

1. Canonical frame. Of the four 90-degree rotations of the mask, thin the
   one whose (shape, raw bytes) key is smallest, then rotate the result
   back. Thinning rules are not isotropic, so without this step two rotated
   copies of one mask could yield skeletons of different size; with it,
   skeleton pixel count, branch structure and lengths are exactly invariant
   under 90-degree rotation.
2. Two-subiteration parallel thinning (Zhang-Suen) to fixpoint. A pixel is
   deleted when it has 2..6 neighbors, exactly one background-to-foreground
   transition around its 8-neighborhood, and satisfies the subiteration's
   directional conditions. Deletions within a subiteration are simultaneous.
3. Survivor guard. Parallel deletion annihilates small components outright
   (an isolated 2x2 block satisfies the step-1 conditions at every pixel),
   so before applying a subiteration any component whose every pixel is
   flagged keeps its first flagged pixel in row-major order. This makes the
   8-connected component count exactly preserved.
4. Shave pass. The parallel fixpoint can retain 2x2 blocks inside staircase
   tangles. While any 2x2 all-set block exists, scan block anchors in
   row-major order and delete the first safely removable pixel of the first
   resolvable block (pixel order: top-left, top-right, bottom-left,
   bottom-right). A pixel is safely removable when its crossing number is 1,
   or, failing that, when it has a background 4-neighbor (no hole is
   created; the image border counts) and all of its foreground neighbors
   remain mutually 8-connected after removal. If no block is resolvable the
   pass stops: on such inputs 1-pixel thinness is unattainable without
   splitting a component, and component preservation wins.

Branch decomposition classifies skeleton pixels by 8-neighbor count
(1 endpoint, >=3 junction), merges 8-adjacent junction pixels into one node
anchored at the cluster pixel nearest its centroid, and walks maximal
degree-2 chains between node pixels. Geodesic length counts axial steps as
1 and diagonal steps as sqrt(2) throughout, including contour tracing.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

_S8 = np.ones((3, 3), dtype=int)
_S4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=int)
_SQRT2 = math.sqrt(2.0)

# 8-neighborhood in clockwise order starting north: N, NE, E, SE, S, SW, W, NW
_NB8 = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))


# ---------------------------------------------------------------------------
# thinning


def _neighbor_views(padded):
    """The 8 shifted views of a 1-padded uint8 image, in _NB8 order."""
    n = padded[:-2, 1:-1]; ne = padded[:-2, 2:]; e = padded[1:-1, 2:]; se = padded[2:, 2:]
    s = padded[2:, 1:-1]; sw = padded[2:, :-2]; w = padded[1:-1, :-2]; nw = padded[:-2, :-2]
    return [n, ne, e, se, s, sw, w, nw]


def _subiteration_flags(img: np.ndarray, step: int) -> np.ndarray:
    """Parallel deletion flags for one thinning subiteration (step 0 or 1)."""
    padded = np.pad(img, 1).astype(np.uint8)
    nb = _neighbor_views(padded)
    ring = nb + [nb[0]]
    count = sum(nb)
    transitions = sum(((ring[i] == 0) & (ring[i + 1] == 1)).astype(np.uint8) for i in range(8))
    n_, e_, s_, w_ = nb[0], nb[2], nb[4], nb[6]
    if step == 0:
        directional = ((n_ & e_ & s_) == 0) & ((e_ & s_ & w_) == 0)
    else:
        directional = ((n_ & e_ & w_) == 0) & ((n_ & s_ & w_) == 0)
    return img & (count >= 2) & (count <= 6) & (transitions == 1) & directional


def _guard_survivors(img: np.ndarray, flags: np.ndarray) -> np.ndarray:
    """Unflag the first flagged pixel of any component flagged in full."""
    if not flags.any():
        return flags
    labels, _ = ndimage.label(img, structure=_S8)
    sizes = np.bincount(labels.ravel())
    flagged = np.bincount(labels[flags].ravel(), minlength=sizes.size)
    doomed = np.flatnonzero((flagged > 0) & (flagged == sizes))
    if doomed.size:
        flags = flags.copy()
        lab_flat, flag_flat = labels.ravel(), flags.ravel()
        for label in doomed:
            flag_flat[np.flatnonzero((lab_flat == label) & flag_flat)[0]] = False
    return flags


def _crossing_number_ok(img: np.ndarray, r: int, c: int) -> bool:
    """True when (r, c) has exactly one foreground run around it (and 1..7 neighbors)."""
    h, w = img.shape
    ring = []
    for dr, dc in _NB8:
        rr, cc = r + dr, c + dc
        ring.append(bool(img[rr, cc]) if 0 <= rr < h and 0 <= cc < w else False)
    runs = sum((not ring[i]) and ring[(i + 1) % 8] for i in range(8))
    return runs == 1 and 1 <= sum(ring) <= 7


def _safely_removable(img: np.ndarray, r: int, c: int) -> bool:
    if _crossing_number_ok(img, r, c):
        return True
    h, w = img.shape
    has_bg4 = any(
        not (0 <= r + dr < h and 0 <= c + dc < w) or not img[r + dr, c + dc]
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1))
    )
    if not has_bg4:
        return False  # removal would punch a hole
    neighbors = [
        (r + dr, c + dc)
        for dr, dc in _NB8
        if 0 <= r + dr < h and 0 <= c + dc < w and img[r + dr, c + dc]
    ]
    if not neighbors:
        return False
    # exact check: all former neighbors stay 8-connected without (r, c)
    img[r, c] = False
    try:
        target = set(neighbors)
        seen = {neighbors[0]}
        stack = [neighbors[0]]
        while stack and not target <= seen:
            cr, cc = stack.pop()
            for dr, dc in _NB8:
                q = (cr + dr, cc + dc)
                if q not in seen and 0 <= q[0] < h and 0 <= q[1] < w and img[q]:
                    seen.add(q)
                    stack.append(q)
        return target <= seen
    finally:
        img[r, c] = True


def _shave_blocks(img: np.ndarray) -> np.ndarray:
    """Delete pixels of residual 2x2 blocks while preserving components."""
    img = img.copy()
    while True:
        blocks = img[:-1, :-1] & img[1:, :-1] & img[:-1, 1:] & img[1:, 1:]
        anchors = np.argwhere(blocks)
        if anchors.size == 0:
            return img
        progressed = False
        for r, c in anchors:
            for rr, cc in ((r, c), (r, c + 1), (r + 1, c), (r + 1, c + 1)):
                if _safely_removable(img, rr, cc):
                    img[rr, cc] = False
                    progressed = True
                    break
            if progressed:
                break
        if not progressed:
            return img


def _thin_in_place(mask: np.ndarray) -> np.ndarray:
    img = mask.copy()
    while True:
        changed = False
        for step in (0, 1):
            flags = _guard_survivors(img, _subiteration_flags(img, step))
            if flags.any():
                img &= ~flags
                changed = True
        if not changed:
            break
    return _shave_blocks(img)


def skeletonize(mask: np.ndarray) -> np.ndarray:
    """Thin a binary mask to its skeleton (see module docstring for the rules).

    Preserves the number of 8-connected components exactly. The empty mask
    maps to an empty skeleton; a non-empty mask must be at least 3x3.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise ValueError(f"expected a 2-D mask, got shape {mask.shape}")
    if not mask.any():
        return np.zeros_like(mask)
    if mask.shape[0] < 3 or mask.shape[1] < 3:
        raise ValueError("non-empty mask must be at least 3x3")
    rotations = [np.rot90(mask, k) for k in range(4)]
    canonical = min(range(4), key=lambda k: (rotations[k].shape, rotations[k].tobytes()))
    return np.rot90(_thin_in_place(rotations[canonical]), -canonical)


# ---------------------------------------------------------------------------
# branch graph


@dataclass(frozen=True)
class Node:
    """A skeleton landmark pixel. Coordinates are (x, y) = (column, row)."""
    x: int
    y: int
    kind: str  # "endpoint" (one skeleton neighbor) or "junction" (>= 3)


@dataclass
class Branch:
    """A maximal node-to-node skeleton path.

    path holds (x, y) pixels including both terminal node pixels; a pure
    closed loop repeats its start pixel at the end and is flagged cyclic,
    as is any branch whose two endpoints coincide.
    """
    path: list[tuple[int, int]]
    geodesic_length: float
    cyclic: bool

    @property
    def endpoint_a(self) -> tuple[int, int]:
        return self.path[0]

    @property
    def endpoint_b(self) -> tuple[int, int]:
        return self.path[-1]

    def euclidean_length(self) -> float:
        (xa, ya), (xb, yb) = self.path[0], self.path[-1]
        return math.hypot(xb - xa, yb - ya)


@dataclass
class VesselGraph:
    """Branch decomposition of a skeleton.

    node_pixels lists every pixel belonging to a node (all members of merged
    junction clusters, not just anchors); isolated_pixels are degree-0
    singletons that belong to no branch. Every other skeleton pixel is
    interior to exactly one branch of the undiscarded decomposition.
    """
    width: int
    height: int
    nodes: list[Node] = field(default_factory=list)
    branches: list[Branch] = field(default_factory=list)
    node_pixels: list[tuple[int, int]] = field(default_factory=list)
    isolated_pixels: list[tuple[int, int]] = field(default_factory=list)
    discarded_branches: int = 0

    @property
    def branch_count(self) -> int:
        return len(self.branches)

    @property
    def cyclic_count(self) -> int:
        return sum(1 for b in self.branches if b.cyclic)

    def total_geodesic_length(self) -> float:
        return float(sum(b.geodesic_length for b in self.branches))


def _degree_map(skel: np.ndarray) -> np.ndarray:
    padded = np.pad(skel, 1).astype(np.uint8)
    return sum(_neighbor_views(padded)) * skel


def _step_length(a: tuple[int, int], b: tuple[int, int]) -> float:
    return _SQRT2 if (a[0] != b[0] and a[1] != b[1]) else 1.0


def _path_length(path_rc: list[tuple[int, int]]) -> float:
    return float(sum(_step_length(path_rc[i], path_rc[i + 1]) for i in range(len(path_rc) - 1)))


def extract_graph(skel: np.ndarray, min_branch_px: float = 3.0) -> VesselGraph:
    """Decompose a skeleton into endpoint/junction nodes and branches.

    Parameters
    ----------
    skel : 2-D bool array
        A thinned mask (see ``skeletonize``).
    min_branch_px : float
        Branches with geodesic length below this are dropped from the graph
        (thinning spurs would otherwise inflate the branch count); pass 0 to
        keep the full decomposition. Node classification is not re-derived
        after the filter.

    Returns
    -------
    VesselGraph
    """
    skel = np.asarray(skel, dtype=bool)
    if skel.ndim != 2:
        raise ValueError(f"expected a 2-D skeleton, got shape {skel.shape}")
    h, w = skel.shape
    graph = VesselGraph(width=w, height=h)
    if not skel.any():
        return graph

    degree = _degree_map(skel)
    junction_mask = skel & (degree >= 3)
    endpoint_mask = skel & (degree == 1)
    isolated_mask = skel & (degree == 0)

    labels, n_clusters = ndimage.label(junction_mask, structure=_S8)
    for idx in range(1, n_clusters + 1):
        members = np.argwhere(labels == idx)  # row-major sorted
        centroid = members.mean(axis=0)
        dist2 = ((members - centroid) ** 2).sum(axis=1)
        anchor = members[np.argmin(dist2)]  # argmin ties resolve row-major
        graph.nodes.append(Node(x=int(anchor[1]), y=int(anchor[0]), kind="junction"))
    for r, c in np.argwhere(endpoint_mask):
        graph.nodes.append(Node(x=int(c), y=int(r), kind="endpoint"))
    graph.nodes.sort(key=lambda n: (n.y, n.x))

    node_mask = junction_mask | endpoint_mask
    graph.node_pixels = [(int(c), int(r)) for r, c in np.argwhere(node_mask)]
    graph.isolated_pixels = [(int(c), int(r)) for r, c in np.argwhere(isolated_mask)]

    consumed = np.zeros_like(skel)

    def neighbors_of(r: int, c: int):
        for dr, dc in _NB8:
            rr, cc = r + dr, c + dc
            if 0 <= rr < h and 0 <= cc < w and skel[rr, cc]:
                yield rr, cc

    def walk_chain(start, first):
        """Follow degree-2 pixels from node pixel `start` through `first`."""
        path = [start, first]
        prev, cur = start, first
        while not node_mask[cur]:
            consumed[cur] = True
            nxt = None
            for q in neighbors_of(*cur):
                if q != prev:
                    nxt = q
                    break
            prev, cur = cur, nxt
            path.append(cur)
        return path

    raw_branches: list[Branch] = []
    seen_pairs: set[tuple[tuple[int, int], tuple[int, int]]] = set()
    node_coords = np.argwhere(node_mask)

    for r, c in node_coords:
        p = (int(r), int(c))
        for q in neighbors_of(*p):
            if node_mask[q]:
                if junction_mask[p] and junction_mask[q] and labels[p] == labels[q]:
                    continue  # same merged junction cluster
                key = (min(p, q), max(p, q))
                if key in seen_pairs:
                    continue
                seen_pairs.add(key)
                path = [p, q]
            elif consumed[q]:
                continue
            else:
                path = walk_chain(p, q)
            raw_branches.append(_make_branch(path))

    # pure cycles: leftover degree-2 pixels with no node on their component
    leftover = skel & ~node_mask & ~consumed & (degree > 0)
    for r, c in np.argwhere(leftover):
        if consumed[r, c]:
            continue
        start = (int(r), int(c))
        consumed[start] = True
        first = next(iter(neighbors_of(*start)))
        path = [start, first]
        prev, cur = start, first
        while cur != start:
            consumed[cur] = True
            nxt = None
            for q in neighbors_of(*cur):
                if q != prev:
                    nxt = q
                    break
            prev, cur = cur, nxt
            path.append(cur)
        raw_branches.append(_make_branch(path))

    for branch in raw_branches:
        if branch.geodesic_length < min_branch_px:
            graph.discarded_branches += 1
        else:
            graph.branches.append(branch)
    return graph


def _make_branch(path_rc: list[tuple[int, int]]) -> Branch:
    length = _path_length(path_rc)
    xy = [(c, r) for r, c in path_rc]
    return Branch(path=xy, geodesic_length=length, cyclic=(xy[0] == xy[-1]))


# ---------------------------------------------------------------------------
# contour length

# Moore neighborhood in clockwise order starting west; used by the border walk
_MOORE = ((0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1))


def _trace_boundary(mask: np.ndarray, start: tuple[int, int], backtrack_dir: int) -> float:
    """Chain-code length of one closed boundary walk (Moore neighbor tracing).

    backtrack_dir indexes _MOORE and points at the background neighbor the
    walk conceptually entered from. Terminates by Jacob's criterion: the walk
    stops when the first (pixel, move) pair repeats.
    """
    h, w = mask.shape

    def fg(r, c):
        return 0 <= r < h and 0 <= c < w and mask[r, c]

    length = 0.0
    cur = start
    back = backtrack_dir
    first_move = None
    budget = 4 * mask.size + 8
    while budget > 0:
        budget -= 1
        move = None
        for i in range(1, 9):
            d = (back + i) % 8
            if fg(cur[0] + _MOORE[d][0], cur[1] + _MOORE[d][1]):
                move = d
                break
        if move is None:
            return 0.0  # no neighbors; caller handles the isolated-pixel convention
        if first_move is None:
            first_move = (cur, move)
        elif (cur, move) == first_move:
            return length
        dr, dc = _MOORE[move]
        nxt = (cur[0] + dr, cur[1] + dc)
        length += _SQRT2 if (dr != 0 and dc != 0) else 1.0
        # new backtrack: the neighbor scanned just before the move, seen from nxt
        prev_d = (move - 1) % 8
        br = cur[0] + _MOORE[prev_d][0] - nxt[0]
        bc = cur[1] + _MOORE[prev_d][1] - nxt[1]
        back = _MOORE.index((br, bc))
        cur = nxt
    raise RuntimeError("boundary trace failed to close")


def contour_length(mask: np.ndarray) -> float:
    """Total chain-code boundary length of a mask, outer and hole contours.

    Every 8-connected component contributes its outer boundary walk; every
    enclosed background region (4-connected, not touching the image border)
    contributes the inner walk of the foreground around it. Axial steps
    count 1, diagonal steps sqrt(2); a single isolated pixel counts 1 by
    convention. The empty mask has length 0.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise ValueError(f"expected a 2-D mask, got shape {mask.shape}")
    if not mask.any():
        return 0.0
    total = 0.0
    labels, n = ndimage.label(mask, structure=_S8)
    sizes = np.bincount(labels.ravel())
    for idx in range(1, n + 1):
        if sizes[idx] == 1:
            total += 1.0
            continue
        component = labels == idx
        r, c = np.argwhere(component)[0]  # topmost-leftmost: W and N are background
        total += _trace_boundary(component, (int(r), int(c)), _MOORE.index((0, -1)))
    holes, n_bg = ndimage.label(~mask, structure=_S4)
    border = np.concatenate([holes[0, :], holes[-1, :], holes[:, 0], holes[:, -1]])
    enclosed = np.setdiff1d(np.arange(1, n_bg + 1), border)
    for idx in enclosed:
        hr, hc = np.argwhere(holes == idx)[0]
        # the pixel above a hole's topmost-leftmost pixel is foreground
        total += _trace_boundary(mask, (int(hr) - 1, int(hc)), _MOORE.index((1, 0)))
    return total


# ---------------------------------------------------------------------------
# debug dump


def dump_graph_debug(skel: np.ndarray, graph: VesselGraph, out_prefix: str) -> None:
    """Write <prefix>.png (skeleton with node markers) and <prefix>.json.

    The JSON holds node coordinates and, per branch, the endpoint pair,
    geodesic length and cyclic flag; intended for eyeballing decompositions.
    """
    from . import imaging

    overlay = np.zeros(skel.shape, dtype=np.float64)
    overlay[skel] = 0.5
    for node in graph.nodes:
        overlay[node.y, node.x] = 1.0
    imaging.save_grayscale(out_prefix + ".png", overlay, bit_depth=8)
    listing = {
        "nodes": [{"x": n.x, "y": n.y, "kind": n.kind} for n in graph.nodes],
        "branches": [
            {
                "endpoint_a": list(b.endpoint_a),
                "endpoint_b": list(b.endpoint_b),
                "geodesic_length": b.geodesic_length,
                "cyclic": b.cyclic,
                "pixels": len(b.path),
            }
            for b in graph.branches
        ],
        "isolated_pixels": [list(p) for p in graph.isolated_pixels],
        "discarded_branches": graph.discarded_branches,
    }
    with open(out_prefix + ".json", "w", encoding="utf-8") as fh:
        json.dump(listing, fh, indent=2)
