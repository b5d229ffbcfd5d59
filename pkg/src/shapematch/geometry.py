"""Shape containers, OFF/ascii-PLY I/O, point-cloud extraction, areas, geodesics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import dijkstra as _csgraph_dijkstra

from .errors import LoadError

__all__ = [
    "TriangleMesh",
    "PointCloud",
    "GeodesicTable",
    "load_shape",
    "save_shape",
    "mesh_to_point_cloud",
    "surface_area",
    "face_areas",
    "geodesic_distances",
    "geodesic_distance_matrix",
]


@dataclass
class TriangleMesh:
    """Triangle mesh with explicit connectivity.

    vertices: (n, 3) float positions in model units.
    faces: (m, 3) integer vertex indices, no degenerate triples.
    shape_id: opaque label used in reports and map direction tags.
    """

    vertices: np.ndarray
    faces: np.ndarray
    shape_id: str = "mesh"

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64)
        if self.faces.size == 0:
            self.faces = self.faces.reshape(0, 3)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ValueError("vertices must be an (n, 3) array")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise ValueError("faces must be an (m, 3) array")
        if not np.all(np.isfinite(self.vertices)):
            raise ValueError("non-finite vertex coordinate")
        n = len(self.vertices)
        if len(self.faces):
            if n < 3:
                raise ValueError("a mesh with faces needs at least 3 vertices")
            if self.faces.min() < 0 or self.faces.max() >= n:
                raise ValueError(
                    f"face index out of range [0, {n}): "
                    f"min {self.faces.min()}, max {self.faces.max()}"
                )
            f = self.faces
            bad = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
            if bad.any():
                raise ValueError(f"degenerate face {int(np.flatnonzero(bad)[0])}: repeated vertex index")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def edges(self) -> np.ndarray:
        """Unique undirected edges as an (e, 2) array with row[0] < row[1]."""
        f = self.faces
        pairs = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        pairs = np.sort(pairs, axis=1)
        return np.unique(pairs, axis=0)


@dataclass
class PointCloud:
    """Unstructured point set; same coordinate conventions as TriangleMesh."""

    points: np.ndarray
    shape_id: str = "cloud"

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ValueError("points must be an (n, 3) array")
        if len(self.points) < 1:
            raise ValueError("a point cloud needs at least one point")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("non-finite point coordinate")

    @property
    def n_points(self) -> int:
        return len(self.points)


@dataclass
class GeodesicTable:
    """Shortest-path distances from one source vertex over the edge graph.

    Entries are np.inf for vertices in other connected components.
    """

    source_index: int
    distances: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.distances = np.asarray(self.distances, dtype=np.float64)
        if self.distances.ndim != 1:
            raise ValueError("distances must be a 1-d array")
        if not (0 <= self.source_index < len(self.distances)):
            raise ValueError("source index out of range")
        if self.distances[self.source_index] != 0.0:
            raise ValueError("distance from source to itself must be 0")
        if np.any(self.distances < 0):
            raise ValueError("negative geodesic distance")


# ---------------------------------------------------------------------------
# file I/O


def _meaningful_lines(text: str):
    """Yield (1-based line number, stripped content) skipping blanks/comments."""
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield ln, line


def _parse_floats(tokens, count, path, ln):
    if len(tokens) < count:
        raise LoadError(f"{path}:{ln}: expected {count} numbers, got {len(tokens)}")
    try:
        vals = [float(t) for t in tokens[:count]]
    except ValueError as exc:
        raise LoadError(f"{path}:{ln}: bad number: {exc}") from exc
    if not all(np.isfinite(vals)):
        raise LoadError(f"{path}:{ln}: non-finite coordinate")
    return vals


def _parse_face(tokens, n_vertices, path, ln):
    try:
        counts = [int(t) for t in tokens]
    except ValueError as exc:
        raise LoadError(f"{path}:{ln}: bad face index: {exc}") from exc
    if counts[0] != 3:
        raise LoadError(f"{path}:{ln}: only triangular faces supported, got {counts[0]}-gon")
    if len(counts) < 4:
        raise LoadError(f"{path}:{ln}: truncated face record")
    idx = counts[1:4]
    for i in idx:
        if not (0 <= i < n_vertices):
            raise LoadError(f"{path}:{ln}: face index {i} out of range [0, {n_vertices})")
    return idx


def _load_off(path: str, shape_id: str):
    with open(path, "r", encoding="ascii") as fh:
        text = fh.read()
    lines = list(_meaningful_lines(text))
    if not lines:
        raise LoadError(f"{path}: empty OFF file")
    pos = 0
    ln, header = lines[pos]
    if header.upper().startswith("OFF"):
        rest = header[3:].split()
        pos += 1
    else:
        raise LoadError(f"{path}:{ln}: missing OFF header")
    if rest:
        counts_tokens, ln_counts = rest, ln
    else:
        if pos >= len(lines):
            raise LoadError(f"{path}: missing vertex/face counts")
        ln_counts, counts_line = lines[pos]
        counts_tokens = counts_line.split()
        pos += 1
    if len(counts_tokens) < 2:
        raise LoadError(f"{path}:{ln_counts}: expected 'nv nf [ne]' counts")
    try:
        nv, nf = int(counts_tokens[0]), int(counts_tokens[1])
    except ValueError as exc:
        raise LoadError(f"{path}:{ln_counts}: bad counts: {exc}") from exc
    if nv < 1:
        raise LoadError(f"{path}:{ln_counts}: vertex count must be >= 1")

    verts = np.empty((nv, 3))
    for i in range(nv):
        if pos >= len(lines):
            raise LoadError(f"{path}: unexpected end of file in vertex block")
        ln, line = lines[pos]
        pos += 1
        verts[i] = _parse_floats(line.split(), 3, path, ln)
    faces = np.empty((nf, 3), dtype=np.int64)
    for i in range(nf):
        if pos >= len(lines):
            raise LoadError(f"{path}: unexpected end of file in face block")
        ln, line = lines[pos]
        pos += 1
        faces[i] = _parse_face(line.split(), nv, path, ln)

    if nf == 0:
        return PointCloud(verts, shape_id=shape_id)
    try:
        return TriangleMesh(verts, faces, shape_id=shape_id)
    except ValueError as exc:
        raise LoadError(f"{path}: {exc}") from exc


def _load_ply(path: str, shape_id: str):
    with open(path, "r", encoding="ascii") as fh:
        raw_lines = fh.read().splitlines()
    if not raw_lines or raw_lines[0].strip() != "ply":
        raise LoadError(f"{path}:1: missing 'ply' magic")
    nv = nf = 0
    elements = []  # (name, count) in declaration order
    vertex_props = []
    in_vertex = False
    body_start = None
    for ln0, raw in enumerate(raw_lines[1:], start=2):
        line = raw.strip()
        if not line or line.startswith("comment"):
            continue
        tokens = line.split()
        if tokens[0] == "format":
            if len(tokens) < 2 or tokens[1] != "ascii":
                raise LoadError(f"{path}:{ln0}: only 'format ascii' PLY supported")
        elif tokens[0] == "element":
            if len(tokens) < 3:
                raise LoadError(f"{path}:{ln0}: malformed element declaration")
            try:
                count = int(tokens[2])
            except ValueError as exc:
                raise LoadError(f"{path}:{ln0}: bad element count: {exc}") from exc
            elements.append((tokens[1], count))
            in_vertex = tokens[1] == "vertex"
            if tokens[1] == "vertex":
                nv = count
            elif tokens[1] == "face":
                nf = count
        elif tokens[0] == "property":
            if in_vertex and tokens[1] != "list":
                vertex_props.append(tokens[-1])
        elif tokens[0] == "end_header":
            body_start = ln0 + 1
            break
    if body_start is None:
        raise LoadError(f"{path}: missing end_header")
    if nv < 1:
        raise LoadError(f"{path}: PLY declares no vertices")
    try:
        coord_cols = [vertex_props.index(c) for c in ("x", "y", "z")]
    except ValueError:
        raise LoadError(f"{path}: vertex element lacks x/y/z properties") from None

    body = [(ln, raw.strip()) for ln, raw in enumerate(raw_lines[body_start - 1 :], start=body_start)
            if raw.strip()]
    pos = 0
    verts = np.empty((nv, 3))
    faces = np.empty((nf, 3), dtype=np.int64)
    for name, count in elements:
        if name == "vertex":
            for i in range(count):
                if pos >= len(body):
                    raise LoadError(f"{path}: unexpected end of file in vertex block")
                ln, line = body[pos]
                pos += 1
                tokens = line.split()
                if len(tokens) < len(vertex_props):
                    raise LoadError(f"{path}:{ln}: expected {len(vertex_props)} vertex properties")
                vals = _parse_floats(tokens, len(vertex_props), path, ln)
                verts[i] = [vals[c] for c in coord_cols]
        elif name == "face":
            for i in range(count):
                if pos >= len(body):
                    raise LoadError(f"{path}: unexpected end of file in face block")
                ln, line = body[pos]
                pos += 1
                faces[i] = _parse_face(line.split(), nv, path, ln)
        else:
            pos += count  # skip unknown elements

    if nf == 0:
        return PointCloud(verts, shape_id=shape_id)
    try:
        return TriangleMesh(verts, faces, shape_id=shape_id)
    except ValueError as exc:
        raise LoadError(f"{path}: {exc}") from exc


def _infer_format(path: str, fmt: str | None) -> str:
    if fmt is not None:
        fmt = fmt.lower()
    else:
        fmt = str(path).rsplit(".", 1)[-1].lower()
    if fmt not in ("off", "ply"):
        raise LoadError(f"{path}: unsupported format '{fmt}' (expected off or ply)")
    return fmt


def load_shape(path, fmt: str | None = None, shape_id: str | None = None):
    """Load an OFF or ascii-PLY file.

    A file declaring zero faces yields a PointCloud, otherwise a TriangleMesh.
    Vertex order is preserved exactly as in the file.
    """
    path = str(path)
    fmt = _infer_format(path, fmt)
    if shape_id is None:
        name = path.replace("\\", "/").rsplit("/", 1)[-1]
        shape_id = name.rsplit(".", 1)[0]
    try:
        if fmt == "off":
            return _load_off(path, shape_id)
        return _load_ply(path, shape_id)
    except OSError as exc:
        raise LoadError(f"{path}: {exc}") from exc


def save_shape(shape, path, fmt: str | None = None) -> None:
    """Write a mesh or cloud as OFF or ascii PLY; decimal round-trip safe."""
    path = str(path)
    fmt = _infer_format(path, fmt)
    if isinstance(shape, TriangleMesh):
        verts, faces = shape.vertices, shape.faces
    else:
        verts, faces = shape.points, np.empty((0, 3), dtype=np.int64)
    with open(path, "w", encoding="ascii") as fh:
        if fmt == "off":
            fh.write("OFF\n")
            fh.write(f"{len(verts)} {len(faces)} 0\n")
            for v in verts:
                fh.write(f"{v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
            for f in faces:
                fh.write(f"3 {f[0]} {f[1]} {f[2]}\n")
        else:
            fh.write("ply\nformat ascii 1.0\n")
            fh.write(f"element vertex {len(verts)}\n")
            fh.write("property double x\nproperty double y\nproperty double z\n")
            fh.write(f"element face {len(faces)}\n")
            fh.write("property list uchar int vertex_indices\n")
            fh.write("end_header\n")
            for v in verts:
                fh.write(f"{v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
            for f in faces:
                fh.write(f"3 {f[0]} {f[1]} {f[2]}\n")


# ---------------------------------------------------------------------------
# derived quantities


def mesh_to_point_cloud(mesh: TriangleMesh, noise_sigma: float, seed: int) -> PointCloud:
    """Drop connectivity and perturb vertices with isotropic Gaussian noise.

    Point i corresponds to vertex i by construction; this index identity is the
    self-supervision signal consumed by the contrastive loss. Deterministic per
    (mesh, noise_sigma, seed).
    """
    if noise_sigma < 0:
        raise ValueError(f"noise_sigma must be >= 0, got {noise_sigma}")
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((mesh.n_vertices, 3)) * noise_sigma
    return PointCloud(mesh.vertices + noise, shape_id=f"{mesh.shape_id}:pc")


def face_areas(mesh: TriangleMesh) -> np.ndarray:
    """Per-triangle areas, shape (m,)."""
    v = mesh.vertices
    f = mesh.faces
    cr = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    return 0.5 * np.linalg.norm(cr, axis=1)


def surface_area(mesh: TriangleMesh) -> float:
    """Total triangle area in model units squared."""
    return float(face_areas(mesh).sum())


def _edge_graph(mesh: TriangleMesh) -> sparse.csr_matrix:
    """Sparse symmetric adjacency with Euclidean edge lengths as weights."""
    e = mesh.edges()
    if len(e) == 0:
        return sparse.csr_matrix((mesh.n_vertices, mesh.n_vertices))
    w = np.linalg.norm(mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]], axis=1)
    n = mesh.n_vertices
    g = sparse.coo_matrix(
        (np.concatenate([w, w]), (np.concatenate([e[:, 0], e[:, 1]]), np.concatenate([e[:, 1], e[:, 0]]))),
        shape=(n, n),
    )
    return g.tocsr()


def geodesic_distance_matrix(mesh: TriangleMesh, sources: np.ndarray) -> np.ndarray:
    """Dijkstra edge-graph distances from several sources, shape (len(sources), n).

    Unreachable vertices (other connected components) get np.inf.
    """
    sources = np.asarray(sources, dtype=np.int64)
    if sources.size and (sources.min() < 0 or sources.max() >= mesh.n_vertices):
        raise ValueError("source index out of range")
    graph = _edge_graph(mesh)
    if sources.size == 0:
        return np.empty((0, mesh.n_vertices))
    return _csgraph_dijkstra(graph, directed=False, indices=sources)


def geodesic_distances(mesh: TriangleMesh, source: int) -> GeodesicTable:
    """Shortest-path distances from one vertex over the edge graph.

    This is the graph approximation of geodesic distance used by the
    evaluation harness; it upper-bounds the exact polyhedral geodesic.
    """
    if not (0 <= source < mesh.n_vertices):
        raise ValueError(f"source {source} out of range [0, {mesh.n_vertices})")
    dist = geodesic_distance_matrix(mesh, np.array([source]))[0]
    return GeodesicTable(source_index=int(source), distances=dist)
