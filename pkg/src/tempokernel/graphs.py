"""Finite graphs, hop-count distances, and balls.

Vertices are integers ``0..n-1``.  Edges are unordered pairs; self-loops are
allowed as support for loop conductances but do not contribute to distances.
Graphs representing finite windows of an infinite lattice carry a set of
``boundary`` vertices; experiments use it to reject any computation whose
walk could feel the truncation.
"""

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import DisconnectedGraph, EmptyGraph

_DENSE_DISTANCE_LIMIT = 4000


@dataclass(frozen=True)
class Graph:
    vertex_count: int
    edges: tuple                # sorted (x, y) pairs with x <= y, loops included
    kind: str = "custom"
    params: tuple = ()
    boundary: frozenset = frozenset()
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.vertex_count < 1:
            raise EmptyGraph("graph needs at least one vertex")

    @property
    def adjacency(self):
        """Non-loop neighbor lists, built once."""
        if "adj" not in self._cache:
            adj = [[] for _ in range(self.vertex_count)]
            for x, y in self.edges:
                if x != y:
                    adj[x].append(y)
                    adj[y].append(x)
            self._cache["adj"] = [sorted(a) for a in adj]
        return self._cache["adj"]

    def neighbors(self, x):
        return self.adjacency[x]

    def has_loop(self, x):
        if "loops" not in self._cache:
            self._cache["loops"] = frozenset(x for x, y in self.edges if x == y)
        return x in self._cache["loops"]

    def d(self, x, y):
        """Hop-count distance d(x, y)."""
        if x == y:
            return 0
        closed = self._closed_form_distance(x, y)
        if closed is not None:
            return closed
        return int(self.distance_matrix()[x, y])

    def _closed_form_distance(self, x, y):
        if self.kind in ("path", "segment"):
            return abs(x - y)
        if self.kind == "cycle":
            n = self.vertex_count
            return min((x - y) % n, (y - x) % n)
        if self.kind == "torus2d":
            m, n = self.params
            xi, xj = divmod(x, n)
            yi, yj = divmod(y, n)
            di = min((xi - yi) % m, (yi - xi) % m)
            dj = min((xj - yj) % n, (yj - xj) % n)
            return di + dj
        return None

    def distance_matrix(self):
        """Dense all-pairs distance matrix (graphs up to a few thousand vertices)."""
        if "dist" not in self._cache:
            n = self.vertex_count
            if n > _DENSE_DISTANCE_LIMIT:
                raise MemoryError(
                    "dense distance matrix limited to %d vertices (graph has %d); "
                    "use d(x, y)" % (_DENSE_DISTANCE_LIMIT, n))
            self._cache["dist"] = bfs_distances(self)
        return self._cache["dist"]

    @property
    def diameter(self):
        if self.kind in ("path", "segment"):
            return self.vertex_count - 1
        if self.kind == "cycle":
            return self.vertex_count // 2
        if self.kind == "torus2d":
            m, n = self.params
            return m // 2 + n // 2
        return int(self.distance_matrix().max())

    def ball(self, center, radius):
        return ball(self, center, radius)


@dataclass(frozen=True)
class Ball:
    center: int
    radius: float
    members: tuple


def ball(graph, center, radius):
    """All vertices within hop distance ``radius`` of ``center``.

    Found by a bounded breadth-first search, so the cost is proportional to
    the ball, not the graph.
    """
    radius = float(radius)
    if radius < 0:
        return Ball(center, radius, ())
    cap = int(np.floor(radius + 1e-12))
    seen = {center: 0}
    queue = deque([center])
    while queue:
        x = queue.popleft()
        if seen[x] >= cap:
            continue
        for y in graph.neighbors(x):
            if y not in seen:
                seen[y] = seen[x] + 1
                queue.append(y)
    return Ball(center, radius, tuple(sorted(seen)))


def bfs_distances(graph):
    """All-pairs distances by repeated breadth-first search."""
    n = graph.vertex_count
    dist = np.full((n, n), -1, dtype=np.int64)
    adj = graph.adjacency
    for s in range(n):
        row = dist[s]
        row[s] = 0
        queue = deque([s])
        while queue:
            x = queue.popleft()
            for y in adj[x]:
                if row[y] < 0:
                    row[y] = row[x] + 1
                    queue.append(y)
    if (dist < 0).any():
        raise DisconnectedGraph("graph is not connected")
    return dist


def floyd_warshall_distances(graph):
    """All-pairs distances by Floyd–Warshall; oracle for small graphs."""
    n = graph.vertex_count
    big = n + 1
    dist = np.full((n, n), big, dtype=np.int64)
    np.fill_diagonal(dist, 0)
    for x, y in graph.edges:
        if x != y:
            dist[x, y] = 1
            dist[y, x] = 1
    for k in range(n):
        dist = np.minimum(dist, dist[:, k:k + 1] + dist[k:k + 1, :])
    if (dist >= big).any():
        raise DisconnectedGraph("graph is not connected")
    return dist


def _dedupe(pairs):
    return tuple(sorted({(min(x, y), max(x, y)) for x, y in pairs}))


def build_graph(kind, *args, **kwargs):
    """Construct a graph from the catalog.

    kind:
      - ``path(n)``: 0-1-...-(n-1)
      - ``cycle(n)``
      - ``torus2d(m, n)``: vertex (i, j) -> i*n + j, wrap-around in both axes
      - ``tree(branching, depth)``: rooted at 0
      - ``custom(edges, vertex_count=None)``
      - ``segment(n, boundary=...)``: a path flagged as a truncated lattice window
    """
    if kind == "path":
        n = int(args[0])
        if n < 1:
            raise EmptyGraph("path needs n >= 1")
        edges = _dedupe((i, i + 1) for i in range(n - 1))
        return Graph(n, edges, kind="path", params=(n,))
    if kind == "segment":
        n = int(args[0])
        if n < 1:
            raise EmptyGraph("segment needs n >= 1")
        edges = _dedupe((i, i + 1) for i in range(n - 1))
        boundary = frozenset(kwargs.get("boundary", (0, n - 1)))
        return Graph(n, edges, kind="segment", params=(n,), boundary=boundary)
    if kind == "cycle":
        n = int(args[0])
        if n < 1:
            raise EmptyGraph("cycle needs n >= 1")
        if n <= 2:
            edges = _dedupe((i, i + 1) for i in range(n - 1))
        else:
            edges = _dedupe([(i, (i + 1) % n) for i in range(n)])
        return Graph(n, edges, kind="cycle", params=(n,))
    if kind == "torus2d":
        m, n = int(args[0]), int(args[1])
        if m < 1 or n < 1:
            raise EmptyGraph("torus2d needs m, n >= 1")
        pairs = []
        for i in range(m):
            for j in range(n):
                v = i * n + j
                pairs.append((v, i * n + (j + 1) % n))
                pairs.append((v, ((i + 1) % m) * n + j))
        edges = _dedupe((x, y) for x, y in pairs if x != y)
        return Graph(m * n, edges, kind="torus2d", params=(m, n))
    if kind == "tree":
        b, depth = int(args[0]), int(args[1])
        if b < 1 or depth < 0:
            raise EmptyGraph("tree needs branching >= 1, depth >= 0")
        edges = []
        count = 1
        level = [0]
        for _ in range(depth):
            nxt = []
            for parent in level:
                for _ in range(b):
                    edges.append((parent, count))
                    nxt.append(count)
                    count += 1
            level = nxt
        return Graph(count, _dedupe(edges), kind="tree", params=(b, depth))
    if kind == "custom":
        raw = args[0] if args else kwargs.get("edges", ())
        edges = _dedupe(tuple(e) for e in raw)
        if not edges:
            raise EmptyGraph("custom graph needs at least one edge or vertex")
        n = kwargs.get("vertex_count")
        if n is None:
            n = 1 + max(max(e) for e in edges)
        g = Graph(int(n), edges, kind="custom", params=())
        bfs_distances(g)  # raises DisconnectedGraph if not connected
        return g
    raise EmptyGraph("unknown graph kind %r" % (kind,))
