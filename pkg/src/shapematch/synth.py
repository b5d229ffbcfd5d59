"""Synthetic test pairs with exact ground-truth correspondence.

Desk-scale stand-ins for benchmark data: sphere-based blobs, bendable bumpy
planes, and complete/partial cut pairs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fmap import PointMap
from .geometry import TriangleMesh, surface_area

__all__ = [
    "SynthPair",
    "icosphere",
    "bumpy_plane",
    "isosphere_pair",
    "bent_plane_pair",
    "partial_cut_pair",
    "with_duplicate_vertices",
    "make_pair",
    "SYNTH_KINDS",
]


@dataclass
class SynthPair:
    """Two shapes plus the exact target-to-source ground truth.

    ground_truth.assignment[j] is the source-mesh vertex matching target
    vertex j. area_ratio (partial pairs only) feeds estimate_r.
    """

    kind: str
    mesh_x: TriangleMesh
    mesh_y: TriangleMesh
    ground_truth: PointMap
    area_ratio: float | None = None


def icosphere(subdivisions: int = 3, radius: float = 1.0, shape_id: str = "icosphere") -> TriangleMesh:
    """Icosahedron subdivided and projected onto the sphere of the given radius."""
    if subdivisions < 0:
        raise ValueError("subdivisions must be >= 0")
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [v for v in verts]
    for _ in range(subdivisions):
        midpoint: dict[tuple[int, int], int] = {}

        def midpoint_index(a: int, b: int) -> int:
            key = (a, b) if a < b else (b, a)
            if key not in midpoint:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                midpoint[key] = len(verts) - 1
            return midpoint[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint_index(a, b), midpoint_index(b, c), midpoint_index(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return TriangleMesh(np.array(verts) * radius, np.array(faces), shape_id=shape_id)


def _smooth_bumps(points: np.ndarray, centers: np.ndarray, amplitudes: np.ndarray,
                  widths: np.ndarray) -> np.ndarray:
    """Sum of Gaussian bumps evaluated at each point, shape (n,)."""
    d2 = np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    return (np.exp(-d2 / widths[None, :] ** 2) * amplitudes[None, :]).sum(axis=1)


def _asymmetric_blob(subdivisions: int, radius: float, bump_amplitude: float,
                     seed: int, shape_id: str) -> TriangleMesh:
    """Icosphere with seeded radial bumps and unequal axis scales; no symmetries."""
    base = icosphere(subdivisions, 1.0, shape_id=shape_id)
    v = base.vertices
    if bump_amplitude > 0:
        rng = np.random.default_rng(seed)
        n_bumps = 5
        centers = rng.standard_normal((n_bumps, 3))
        centers /= np.linalg.norm(centers, axis=1, keepdims=True)
        amps = bump_amplitude * rng.uniform(0.5, 1.0, n_bumps) * rng.choice([-1.0, 1.0], n_bumps)
        widths = rng.uniform(0.5, 0.9, n_bumps)
        v = v * (1.0 + _smooth_bumps(v, centers, amps, widths))[:, None]
        v = v * np.array([1.0, 0.85, 0.7])
    return TriangleMesh(v * radius, base.faces, shape_id=shape_id)


def bumpy_plane(nx: int = 25, ny: int = 20, extent: float = 2.0,
                bump_amplitude: float = 0.25, grading: float = 1.15,
                seed: int = 0, shape_id: str = "plane") -> TriangleMesh:
    """Rectangular grid sheet with graded spacing and seeded z-bumps.

    The grading and the bumps remove all mirror symmetries, which matters
    for intrinsic descriptors: a symmetric sheet cannot be matched uniquely.
    """
    if nx < 2 or ny < 2:
        raise ValueError("grid needs at least 2 samples per side")
    xs = (np.linspace(0.0, 1.0, nx) ** grading) * extent
    ys = (np.linspace(0.0, 1.0, ny) ** (2.0 - grading)) * extent * (ny / nx)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel(), np.zeros(nx * ny)])
    if bump_amplitude > 0:
        rng = np.random.default_rng(seed)
        n_bumps = 6
        centers = np.column_stack([
            rng.uniform(0, xs[-1], n_bumps), rng.uniform(0, ys[-1], n_bumps), np.zeros(n_bumps)
        ])
        amps = bump_amplitude * rng.uniform(0.4, 1.0, n_bumps) * rng.choice([-1.0, 1.0], n_bumps)
        widths = rng.uniform(0.25, 0.6, n_bumps) * extent / 2.0
        pts[:, 2] = _smooth_bumps(pts, centers, amps, widths)

    quads = []
    for i in range(nx - 1):
        for j in range(ny - 1):
            a = i * ny + j
            b = a + ny
            quads += [(a, b, a + 1), (b, b + 1, a + 1)]
    return TriangleMesh(pts, np.array(quads), shape_id=shape_id)


def _bend(vertices: np.ndarray, angle: float) -> np.ndarray:
    """Roll the sheet around a cylinder along x; isometric for the smooth sheet."""
    if angle == 0:
        return vertices.copy()
    x, y, z = vertices[:, 0], vertices[:, 1], vertices[:, 2]
    length = x.max() - x.min()
    radius = length / angle
    theta = (x - x.min()) / radius
    # offset z along the bent normal so pre-bend bumps stay bumps
    return np.column_stack([
        x.min() + (radius - z) * np.sin(theta),
        y,
        radius - (radius - z) * np.cos(theta),
    ])


def _rigid_motion(vertices: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1.0
    return vertices @ q.T + rng.uniform(-1.0, 1.0, 3)


def _permutation(n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.permutation(n)


def _derive_pair(mesh_x: TriangleMesh, verts_y: np.ndarray, permute: bool, rotate: bool,
                 seed: int, target_id: str) -> tuple[TriangleMesh, PointMap]:
    """Apply optional rigid motion and vertex relabeling to the second shape."""
    rng = np.random.default_rng(seed + 1)
    if rotate:
        verts_y = _rigid_motion(verts_y, rng)
    faces_y = mesh_x.faces
    gt = np.arange(len(verts_y))
    if permute:
        perm = _permutation(len(verts_y), rng)
        verts_y = verts_y[perm]
        inverse = np.empty_like(perm)
        inverse[perm] = np.arange(len(perm))
        faces_y = inverse[mesh_x.faces]
        gt = perm
    mesh_y = TriangleMesh(verts_y, faces_y, shape_id=target_id)
    pm = PointMap(assignment=gt, domain_id=target_id, codomain_id=mesh_x.shape_id)
    return mesh_y, pm


def isosphere_pair(subdivisions: int = 3, radius: float = 1.0,
                   bump_amplitude: float = 0.0, deform_amplitude: float = 0.0,
                   permute: bool = False, rotate: bool = False,
                   seed: int = 0) -> SynthPair:
    """Sphere-blob pair; zero deformation yields two identical meshes.

    bump_amplitude shapes both meshes identically (asymmetry); deform_amplitude
    adds a seeded smooth radial field to the second mesh only (near-isometric
    perturbation).
    """
    mesh_x = _asymmetric_blob(subdivisions, radius, bump_amplitude, seed, "sphere_x")
    verts_y = mesh_x.vertices.copy()
    if deform_amplitude > 0:
        rng = np.random.default_rng(seed + 2)
        centers = rng.standard_normal((4, 3))
        centers /= np.linalg.norm(centers, axis=1, keepdims=True)
        centers *= radius
        amps = deform_amplitude * rng.uniform(0.5, 1.0, 4) * rng.choice([-1.0, 1.0], 4)
        widths = rng.uniform(0.5, 0.9, 4) * radius
        field = 1.0 + _smooth_bumps(verts_y, centers, amps, widths)
        verts_y = verts_y * field[:, None]
    mesh_y, gt = _derive_pair(mesh_x, verts_y, permute, rotate, seed, "sphere_y")
    return SynthPair(kind="isosphere_pair", mesh_x=mesh_x, mesh_y=mesh_y, ground_truth=gt)


def bent_plane_pair(nx: int = 25, ny: int = 20, bend_angle: float = 1.2,
                    bump_amplitude: float = 0.25,
                    permute: bool = False, rotate: bool = False,
                    seed: int = 0) -> SynthPair:
    """Bumpy sheet vs the same sheet rolled around a cylinder (near-isometric)."""
    mesh_x = bumpy_plane(nx, ny, bump_amplitude=bump_amplitude, seed=seed, shape_id="plane_x")
    verts_y = _bend(mesh_x.vertices, bend_angle)
    mesh_y, gt = _derive_pair(mesh_x, verts_y, permute, rotate, seed, "plane_y")
    return SynthPair(kind="bent_plane_pair", mesh_x=mesh_x, mesh_y=mesh_y, ground_truth=gt)


def partial_cut_pair(subdivisions: int = 3, radius: float = 1.0,
                     bump_amplitude: float = 0.3, cut_fraction: float = 0.4,
                     permute: bool = False, rotate: bool = False,
                     seed: int = 0) -> SynthPair:
    """Complete blob vs the same blob with a contiguous region removed.

    A seeded plane direction orders the faces; the first cut_fraction of them
    (one side of the plane) is dropped. Ground truth covers exactly the
    surviving vertices; area_ratio = area(partial) / area(complete).
    """
    if not (0.0 < cut_fraction < 1.0):
        raise ValueError("cut_fraction must lie in (0, 1)")
    mesh_x = _asymmetric_blob(subdivisions, radius, bump_amplitude, seed, "blob_complete")
    rng = np.random.default_rng(seed + 3)
    direction = rng.standard_normal(3)
    direction /= np.linalg.norm(direction)
    centroids = mesh_x.vertices[mesh_x.faces].mean(axis=1)
    proj = centroids @ direction
    order = np.argsort(proj, kind="stable")
    n_cut = int(round(len(order) * cut_fraction))
    kept_faces = mesh_x.faces[np.sort(order[n_cut:])]

    surviving = np.unique(kept_faces)
    remap = np.full(mesh_x.n_vertices, -1, dtype=np.int64)
    remap[surviving] = np.arange(len(surviving))
    verts_y = mesh_x.vertices[surviving]
    faces_y = remap[kept_faces]

    if rotate or permute:
        rng2 = np.random.default_rng(seed + 4)
        if rotate:
            verts_y = _rigid_motion(verts_y, rng2)
        gt = surviving
        if permute:
            perm = _permutation(len(verts_y), rng2)
            verts_y = verts_y[perm]
            inverse = np.empty_like(perm)
            inverse[perm] = np.arange(len(perm))
            faces_y = inverse[faces_y]
            gt = surviving[perm]
    else:
        gt = surviving
    mesh_y = TriangleMesh(verts_y, faces_y, shape_id="blob_partial")
    pm = PointMap(assignment=gt, domain_id="blob_partial", codomain_id="blob_complete")
    ratio = surface_area(mesh_y) / surface_area(mesh_x)
    return SynthPair(kind="partial_cut_pair", mesh_x=mesh_x, mesh_y=mesh_y,
                     ground_truth=pm, area_ratio=ratio)


def with_duplicate_vertices(mesh: TriangleMesh, n_pairs: int, seed: int = 0,
                            hops: int = 3) -> TriangleMesh:
    """Collapse a few non-adjacent vertex pairs onto shared positions.

    Simulates the coincident sample points common in raw scan data: the mesh
    keeps distinct vertices (and valid faces) but n_pairs of them become
    indistinguishable by position. Each moved vertex sits `hops` graph edges
    from its twin, so the pair stays geodesically separated.
    """
    if n_pairs < 0:
        raise ValueError("n_pairs must be >= 0")
    if hops < 2:
        raise ValueError("hops must be >= 2 (adjacent twins would flatten faces)")
    rng = np.random.default_rng(seed)
    verts = mesh.vertices.copy()
    neighbours: dict[int, set[int]] = {i: set() for i in range(mesh.n_vertices)}
    for a, b in mesh.edges():
        neighbours[int(a)].add(int(b))
        neighbours[int(b)].add(int(a))

    def ring(i: int, depth: int) -> list[int]:
        seen = {i}
        frontier = {i}
        for _ in range(depth):
            frontier = {j for v in frontier for j in neighbours[v]} - seen
            seen |= frontier
        return sorted(frontier)

    used: set[int] = set()
    made = 0
    attempts = 0
    while made < n_pairs and attempts < 100 * max(n_pairs, 1):
        attempts += 1
        i = int(rng.integers(mesh.n_vertices))
        if i in used:
            continue
        candidates = [j for j in ring(i, hops) if j not in used]
        if not candidates:
            continue
        j = candidates[int(rng.integers(len(candidates)))]
        lo, hi = min(i, j), max(i, j)
        trial = verts.copy()
        trial[hi] = trial[lo]
        areas = 0.5 * np.linalg.norm(
            np.cross(trial[mesh.faces[:, 1]] - trial[mesh.faces[:, 0]],
                     trial[mesh.faces[:, 2]] - trial[mesh.faces[:, 0]]), axis=1)
        if areas.min() < 1e-10:
            continue  # collapsing would flatten a face; try another pair
        verts = trial
        used.update((lo, hi))
        made += 1
    if made < n_pairs:
        raise ValueError(f"could only place {made} of {n_pairs} duplicate pairs")
    return TriangleMesh(verts, mesh.faces, shape_id=f"{mesh.shape_id}:twin")


SYNTH_KINDS = {
    "isosphere_pair": isosphere_pair,
    "bent_plane_pair": bent_plane_pair,
    "partial_cut_pair": partial_cut_pair,
}


def make_pair(kind: str, seed: int = 0, **params) -> SynthPair:
    """Dispatch by kind name; unknown kinds raise ValueError."""
    if kind not in SYNTH_KINDS:
        raise ValueError(f"unknown synthetic pair kind {kind!r} (have {sorted(SYNTH_KINDS)})")
    return SYNTH_KINDS[kind](seed=seed, **params)
