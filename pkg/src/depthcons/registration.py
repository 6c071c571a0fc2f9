"""Stage 1: closed-form global alignment of pairwise pointmaps.

Each frame is paired with the next ``n`` frames.  Every pair carries
pointmaps for both of its frames expressed in one reference camera, with an
unknown per-pair scale.  A maximum-confidence spanning tree of the pair graph
is walked from its strongest edge; each new frame is brought into the world
frame by a weighted similarity Procrustes fit on the frame the edge shares with
the already-aligned set.  No iterative refinement follows.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_choice, check_int
from .model import CameraTrack, DepthVideo, StructuralError

EDGE_WEIGHTS = ("mean", "sum", "median")
PAIRS_FORMAT = "vdc-pairs"
PAIRS_VERSION = "1.0"


class RegistrationError(ValueError):
    pass


class DegenerateConfigurationError(RegistrationError):
    """Too few, collinear, or coincident points for a similarity fit."""


class ConnectivityError(RegistrationError):
    def __init__(self, components):
        self.components = [sorted(c) for c in components]
        super().__init__(f"pair graph is disconnected: components {self.components}")


class EdgeDegeneracyError(RegistrationError):
    def __init__(self, edge, count):
        self.edge = tuple(edge)
        super().__init__(f"tree edge {self.edge} has only {count} usable correspondences (need 3)")


class InvalidGeometryError(RegistrationError):
    pass


def enumerate_pairs(T: int, n: int) -> list[tuple[int, int]]:
    """All ``(i, j)`` with ``i < j <= i + n``; there are ``nT - n(n+1)/2`` of them."""
    T = check_int(T, "T", 2)
    n = check_int(n, "n", 1)
    if n >= T:
        raise ValueError(f"n must be smaller than T, got n={n}, T={T}")
    return [(i, j) for i in range(T) for j in range(i + 1, min(i + n, T - 1) + 1)]


# --------------------------------------------------------------------------
# similarity transforms

@dataclass(frozen=True, eq=False)
class SimilarityTransform:
    """``x -> scale * R @ x + t``."""

    scale: float = 1.0
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    residual: float = 0.0

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9, rtol=0) or abs(np.linalg.det(R) - 1) > 1e-9:
            raise ValueError("rotation must be orthonormal with determinant +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    def apply(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return self.scale * (p @ self.rotation.T) + self.translation

    __call__ = apply

    def compose(self, other: "SimilarityTransform") -> "SimilarityTransform":
        """``self(other(x))``."""
        R = _reorthonormalize(self.rotation @ other.rotation)
        return SimilarityTransform(self.scale * other.scale, R,
                                   self.scale * self.rotation @ other.translation + self.translation)

    def inverse(self) -> "SimilarityTransform":
        Rt = self.rotation.T
        return SimilarityTransform(1.0 / self.scale, Rt, -(Rt @ self.translation) / self.scale)

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.scale * self.rotation
        M[:3, 3] = self.translation
        return M


def _reorthonormalize(R: np.ndarray) -> np.ndarray:
    U, _, Vt = np.linalg.svd(R)
    out = U @ Vt
    if np.linalg.det(out) < 0:
        U[:, -1] *= -1
        out = U @ Vt
    return out


def procrustes_similarity(source, target, weights=None) -> SimilarityTransform:
    """Weighted least-squares similarity taking ``source`` onto ``target``.

    Closed form via the SVD of the weighted cross-covariance, with the sign
    correction that keeps ``det(R) = +1``.  The returned transform carries the
    weighted RMS residual.
    """
    p = np.asarray(source, dtype=np.float64).reshape(-1, 3)
    q = np.asarray(target, dtype=np.float64).reshape(-1, 3)
    if p.shape != q.shape:
        raise ValueError(f"source {p.shape} and target {q.shape} differ")
    w = np.ones(len(p)) if weights is None else np.asarray(weights, dtype=np.float64).reshape(-1)
    if w.shape[0] != p.shape[0] or np.any(w < 0):
        raise ValueError("weights must be non-negative, one per point")
    keep = w > 0
    p, q, w = p[keep], q[keep], w[keep]
    if len(p) < 3:
        raise DegenerateConfigurationError(f"need at least 3 weighted points, got {len(p)}")
    W = w.sum()
    mu_p = w @ p / W
    mu_q = w @ q / W
    pc, qc = p - mu_p, q - mu_q
    cov = (qc * w[:, None]).T @ pc / W
    var_p = float(np.sum(w * np.sum(pc * pc, axis=1)) / W)
    U, D, Vt = np.linalg.svd(cov)
    if var_p <= 0 or D[0] <= 0 or D[1] <= 1e-12 * D[0]:
        raise DegenerateConfigurationError("points are collinear or coincident")
    S = np.ones(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2] = -1.0
    R = (U * S) @ Vt
    s = float(np.sum(D * S) / var_p)
    t = mu_q - s * R @ mu_p
    r = s * (p @ R.T) + t - q
    residual = float(np.sqrt(np.sum(w * np.sum(r * r, axis=1)) / W))
    return SimilarityTransform(s, R, t, residual)


def similarity_objective(T: SimilarityTransform, source, target, weights=None) -> float:
    p = np.asarray(source, dtype=np.float64).reshape(-1, 3)
    q = np.asarray(target, dtype=np.float64).reshape(-1, 3)
    w = np.ones(len(p)) if weights is None else np.asarray(weights, dtype=np.float64).reshape(-1)
    r = T.apply(p) - q
    return float(np.sum(w * np.sum(r * r, axis=1)))


# --------------------------------------------------------------------------
# focal length

def weiszfeld_focal(pointmap, principal_point, iterations: int = 10, mask=None,
                    pixels=None) -> float:
    """Robust focal length from camera-frame points and their pixels.

    Minimizes ``sum_p || (u - cx, v - cy) - f * (x / z, y / z) ||`` by
    Weiszfeld iterations started at the median per-pixel ratio.
    ``pointmap`` is ``(H, W, 3)`` (pixel grid implied) or ``(N, 3)`` with
    ``pixels`` given as ``(N, 2)`` ``(u, v)``.
    """
    pts = np.asarray(pointmap, dtype=np.float64)
    if pts.ndim == 3:
        H, W = pts.shape[:2]
        v, u = np.mgrid[0:H, 0:W]
        uv = np.stack([u, v], axis=-1).reshape(-1, 2).astype(np.float64)
        pts = pts.reshape(-1, 3)
        if mask is not None:
            mask = np.asarray(mask, dtype=bool).reshape(-1)
    else:
        if pixels is None:
            raise ValueError("pixels are required for an (N, 3) point list")
        uv = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    keep = np.all(np.isfinite(pts), axis=1) & (pts[:, 2] > 0)
    if mask is not None:
        keep &= mask
    if not keep.any():
        raise InvalidGeometryError("no point lies in front of the camera")
    pts, uv = pts[keep], uv[keep]
    a = uv - np.asarray(principal_point, dtype=np.float64)
    b = pts[:, :2] / pts[:, 2:3]
    ab = np.sum(a * b, axis=1)
    bb = np.sum(b * b, axis=1)
    informative = bb > 0
    if not informative.any():
        raise InvalidGeometryError("every point projects onto the principal point")
    f = float(np.median(ab[informative] / bb[informative]))
    for _ in range(check_int(iterations, "iterations", 0)):
        r = np.linalg.norm(a - f * b, axis=1)
        w = 1.0 / np.maximum(r, 1e-12)
        f = float(np.sum(w * ab) / np.sum(w * bb))
    return f


# --------------------------------------------------------------------------
# pair graph

@dataclass(frozen=True, eq=False)
class PairView:
    """Both frames of a pair expressed in the camera of ``reference``."""

    reference: int
    points_i: np.ndarray
    points_j: np.ndarray
    confidence_i: np.ndarray
    confidence_j: np.ndarray


@dataclass(frozen=True, eq=False)
class PairwisePrediction:
    frame_i: int
    frame_j: int
    forward: PairView
    backward: PairView | None = None

    def __post_init__(self):
        if not self.frame_i < self.frame_j:
            raise StructuralError(f"pair must have frame_i < frame_j, got ({self.frame_i}, {self.frame_j})")
        if self.forward.reference != self.frame_i:
            raise StructuralError("forward view must be expressed in frame_i's camera")
        if self.backward is not None and self.backward.reference != self.frame_j:
            raise StructuralError("backward view must be expressed in frame_j's camera")

    @property
    def edge(self) -> tuple[int, int]:
        return (self.frame_i, self.frame_j)

    # forward-view shorthands
    @property
    def pointmap_i(self):
        return self.forward.points_i

    @property
    def pointmap_j(self):
        return self.forward.points_j

    @property
    def confidence_i(self):
        return self.forward.confidence_i

    @property
    def confidence_j(self):
        return self.forward.confidence_j

    @property
    def mean_confidence(self) -> float:
        return self.weight("mean")

    def weight(self, kind: str = "mean") -> float:
        c = np.concatenate([self.forward.confidence_i.ravel(), self.forward.confidence_j.ravel()])
        if kind == "mean":
            return float(np.mean(c))
        if kind == "sum":
            return float(np.sum(c))
        return float(np.median(c))

    def view_from(self, frame: int) -> PairView | None:
        if frame == self.frame_i:
            return self.forward
        if frame == self.frame_j:
            return self.backward
        raise KeyError(frame)

    @staticmethod
    def points_of(view: PairView, frame: int, pair: "PairwisePrediction"):
        if frame == pair.frame_i:
            return view.points_i, view.confidence_i
        return view.points_j, view.confidence_j


@dataclass(eq=False)
class PairGraph:
    frame_count: int
    width: int
    height: int
    pairs: list[PairwisePrediction]
    principal_point: tuple[float, float] | None = None
    edge_weight: str = "mean"

    def __post_init__(self):
        check_choice(self.edge_weight, "edge_weight", EDGE_WEIGHTS)
        self.pairs = sorted(self.pairs, key=lambda p: p.edge)
        seen = set()
        for p in self.pairs:
            if p.edge in seen:
                raise StructuralError(f"duplicate pair {p.edge}")
            seen.add(p.edge)
            if not 0 <= p.frame_i < p.frame_j < self.frame_count:
                raise StructuralError(f"pair {p.edge} outside 0..{self.frame_count - 1}")
            for view in (p.forward, p.backward):
                if view is None:
                    continue
                for arr in (view.points_i, view.points_j):
                    if arr.shape != (self.height, self.width, 3):
                        raise StructuralError(f"pair {p.edge}: pointmap shape {arr.shape}")
                for arr in (view.confidence_i, view.confidence_j):
                    if arr.shape != (self.height, self.width):
                        raise StructuralError(f"pair {p.edge}: confidence shape {arr.shape}")
        if self.principal_point is None:
            self.principal_point = ((self.width - 1) / 2.0, (self.height - 1) / 2.0)

    @property
    def edges(self) -> list[tuple[int, int]]:
        return [p.edge for p in self.pairs]

    def weights(self) -> dict[tuple[int, int], float]:
        return {p.edge: p.weight(self.edge_weight) for p in self.pairs}

    def pair(self, i: int, j: int) -> PairwisePrediction:
        a, b = min(i, j), max(i, j)
        for p in self.pairs:
            if p.edge == (a, b):
                return p
        raise KeyError((a, b))

    def to_json(self, tree=None) -> str:
        w = self.weights()
        doc = {
            "frame_count": self.frame_count,
            "width": self.width,
            "height": self.height,
            "edge_weight": self.edge_weight,
            "edges": [{"i": i, "j": j, "weight": w[(i, j)]} for (i, j) in self.edges],
        }
        if tree is not None:
            doc["tree"] = [list(e) for e in tree]
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _components(nodes, edges):
    parent = {v: v for v in nodes}

    def find(v):
        while parent[v] != v:
            parent[v] = parent[parent[v]]
            v = parent[v]
        return v

    for a, b in edges:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    groups = {}
    for v in nodes:
        groups.setdefault(find(v), []).append(v)
    return [groups[k] for k in sorted(groups)]


def max_confidence_spanning_tree(graph, weights=None) -> list[tuple[int, int]]:
    """Spanning tree of maximum total weight (Kruskal on descending weights).

    Ties break by lexicographic edge id, so the result does not depend on the
    order edges were inserted.  ``graph`` is a PairGraph or a node count with
    ``weights`` mapping ``(i, j)`` to weight.
    """
    if isinstance(graph, PairGraph):
        n_nodes = graph.frame_count
        weights = graph.weights()
    else:
        n_nodes = int(graph)
    order = sorted(weights.items(), key=lambda kv: (-kv[1], min(kv[0]), max(kv[0])))
    parent = list(range(n_nodes))

    def find(v):
        while parent[v] != v:
            parent[v] = parent[parent[v]]
            v = parent[v]
        return v

    tree = []
    for (a, b), _ in order:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
            tree.append((min(a, b), max(a, b)))
    if len(tree) != n_nodes - 1:
        raise ConnectivityError(_components(range(n_nodes), list(weights)))
    return sorted(tree)


# --------------------------------------------------------------------------
# global alignment

@dataclass
class GlobalAlignment:
    video: DepthVideo
    track: CameraTrack
    tree: list[tuple[int, int]]
    root: int
    world_points: np.ndarray
    frame_transforms: list[SimilarityTransform]


def _register_edge(edge, view_pts, view_conf, world_pts, world_conf, tau):
    sel = (view_conf > tau) & (world_conf > tau)
    sel &= np.all(np.isfinite(view_pts), axis=-1) & np.all(np.isfinite(world_pts), axis=-1)
    count = int(sel.sum())
    if count < 3:
        raise EdgeDegeneracyError(edge, count)
    w = (view_conf * world_conf)[sel]
    try:
        return procrustes_similarity(view_pts[sel], world_pts[sel], w)
    except DegenerateConfigurationError:
        raise EdgeDegeneracyError(edge, count) from None


def _pose_from(S: SimilarityTransform) -> np.ndarray:
    P = np.eye(4)
    P[:3, :3] = S.rotation
    P[:3, 3] = S.translation
    return P


def align_global(graph: PairGraph, tau: float = 0.0, focal_iterations: int = 10) -> GlobalAlignment:
    """Depth video and camera track from a pair graph, closed form.

    The root is ``frame_i`` of the heaviest tree edge; its camera is the world
    frame.  Pixels with confidence ``<= tau`` do not take part in registration.
    """
    tree = max_confidence_spanning_tree(graph)
    weights = graph.weights()
    root_edge = min(tree, key=lambda e: (-weights[e], e))
    root = root_edge[0]
    T, H, W = graph.frame_count, graph.height, graph.width

    pairs = {p.edge: p for p in graph.pairs}
    adj = {v: [] for v in range(T)}
    for a, b in tree:
        adj[a].append(b)
        adj[b].append(a)

    world = np.full((T, H, W, 3), np.nan)
    world_conf = np.zeros((T, H, W))
    own = [None] * T  # similarity taking frame k's own-camera points to world
    own_pts = [None] * T
    own_conf = [None] * T

    root_view = pairs[root_edge].forward
    world[root] = root_view.points_i
    world_conf[root] = root_view.confidence_i
    own[root] = SimilarityTransform()
    own_pts[root], own_conf[root] = root_view.points_i, root_view.confidence_i

    queue = deque([root])
    done = {root}
    while queue:
        m = queue.popleft()
        for k in sorted(adj[m]):
            if k in done:
                continue
            pair = pairs[(min(m, k), max(m, k))]
            view = pair.view_from(k) or pair.forward
            pts_m, conf_m = PairwisePrediction.points_of(view, m, pair)
            pts_k, conf_k = PairwisePrediction.points_of(view, k, pair)
            S = _register_edge(pair.edge, pts_m, conf_m, world[m], world_conf[m], tau)
            world[k] = S.apply(pts_k)
            world_conf[k] = conf_k
            if view.reference == k:
                own[k], own_pts[k], own_conf[k] = S, pts_k, conf_k
            done.add(k)
            queue.append(k)

    for k in range(T):
        if own[k] is not None:
            continue
        # no tree edge carried a view in k's camera; use any pair that does
        for pair in graph.pairs:
            if k in pair.edge and pair.view_from(k) is not None:
                view = pair.view_from(k)
                pts_k, conf_k = PairwisePrediction.points_of(view, k, pair)
                own[k] = _register_edge(pair.edge, pts_k, conf_k, world[k], world_conf[k], tau)
                own_pts[k], own_conf[k] = pts_k, conf_k
                break
        else:
            raise RegistrationError(f"frame {k} has no pointmap in its own camera")

    poses = np.empty((T, 4, 4))
    intr = np.empty((T, 4))
    depth = np.empty((T, H, W))
    cx, cy = graph.principal_point
    for k in range(T):
        S = own[k]
        poses[k] = _pose_from(S)
        cam = (world[k] - S.translation) @ S.rotation  # R^T (X - c), row-vector form
        depth[k] = cam[..., 2]
        conf_mask = own_conf[k] > tau
        try:
            f = weiszfeld_focal(own_pts[k], (cx, cy), focal_iterations, mask=conf_mask)
        except InvalidGeometryError:
            f = weiszfeld_focal(own_pts[k], (cx, cy), focal_iterations)
        intr[k] = (f, f, cx, cy)

    with np.errstate(invalid="ignore"):
        valid = np.isfinite(depth) & (depth > 0)
    video = DepthVideo(depth, valid)
    return GlobalAlignment(video, CameraTrack(intr, poses), tree, root, world, own)


class GlobalAligner(BaseEstimator):
    """Estimator wrapper around :func:`align_global`.

    ``fit(graph)`` stores ``depth_``, ``track_``, ``tree_`` and ``root_``.
    """

    def __init__(self, tau: float = 0.0, focal_iterations: int = 10):
        self.tau = tau
        self.focal_iterations = focal_iterations

    def fit(self, graph: PairGraph, y=None):
        result = align_global(graph, self.tau, self.focal_iterations)
        self.depth_ = result.video
        self.track_ = result.track
        self.tree_ = result.tree
        self.root_ = result.root
        return self

    def predict(self, graph: PairGraph) -> DepthVideo:
        return self.fit(graph).depth_

    def transform(self, graph: PairGraph) -> DepthVideo:
        check_is_fitted(self, "depth_")
        return self.depth_


# --------------------------------------------------------------------------
# on-disk pair graphs

def _pair_file(i: int, j: int) -> str:
    return f"pair_{i:06d}_{j:06d}.f32"


def write_pair_graph(graph: PairGraph, path) -> None:
    """Directory with ``pairs.json`` plus one float32 payload per pair.

    Payload layout (little-endian float32, row-major): forward view
    ``points_i (H,W,3), points_j (H,W,3), confidence_i (H,W), confidence_j (H,W)``
    then, when ``symmetric``, the backward view in the same order.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    edges = []
    for p in graph.pairs:
        chunks = []
        for view in (p.forward, p.backward):
            if view is None:
                continue
            chunks += [view.points_i.ravel(), view.points_j.ravel(),
                       view.confidence_i.ravel(), view.confidence_j.ravel()]
        (path / _pair_file(*p.edge)).write_bytes(np.concatenate(chunks).astype("<f4").tobytes())
        edges.append({"i": p.frame_i, "j": p.frame_j, "symmetric": p.backward is not None,
                      "file": _pair_file(*p.edge)})
    doc = {
        "format": PAIRS_FORMAT, "format_version": PAIRS_VERSION,
        "frame_count": graph.frame_count, "width": graph.width, "height": graph.height,
        "principal_point": list(graph.principal_point), "edge_weight": graph.edge_weight,
        "edges": edges,
    }
    with open(path / "pairs.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_pair_graph(path) -> PairGraph:
    from .model import LoadError, VersionError

    path = Path(path)
    try:
        doc = json.loads((path / "pairs.json").read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise LoadError(f"{path}: no pairs.json") from None
    except json.JSONDecodeError as exc:
        raise LoadError(f"{path}: malformed pairs.json ({exc})") from None
    if str(doc.get("format_version", "")).split(".")[0] != PAIRS_VERSION.split(".")[0]:
        raise VersionError(f"{path}: unsupported pairs format_version {doc.get('format_version')!r}")
    T, H, W = doc["frame_count"], doc["height"], doc["width"]
    n_pts, n_conf = H * W * 3, H * W
    pairs = []
    for e in doc["edges"]:
        raw = np.frombuffer((path / e["file"]).read_bytes(), dtype="<f4").astype(np.float64)
        per_view = 2 * n_pts + 2 * n_conf
        n_views = 2 if e["symmetric"] else 1
        if raw.size != per_view * n_views:
            raise LoadError(f"{path}: payload {e['file']} has wrong size")
        views = []
        for v in range(n_views):
            chunk = raw[v * per_view:(v + 1) * per_view]
            pi = chunk[:n_pts].reshape(H, W, 3)
            pj = chunk[n_pts:2 * n_pts].reshape(H, W, 3)
            ci = chunk[2 * n_pts:2 * n_pts + n_conf].reshape(H, W)
            cj = chunk[2 * n_pts + n_conf:].reshape(H, W)
            views.append(PairView(e["i"] if v == 0 else e["j"], pi, pj, ci, cj))
        pairs.append(PairwisePrediction(e["i"], e["j"], views[0], views[1] if n_views == 2 else None))
    return PairGraph(T, W, H, pairs, tuple(doc.get("principal_point") or ()) or None,
                     doc.get("edge_weight", "mean"))
