"""Shared fixtures: small analytic meshes and the property-test corpus."""

import numpy as np
import pytest

from shapematch.geometry import TriangleMesh
from shapematch.spectral import cotan_laplacian, eigenbasis
from shapematch.synth import bumpy_plane, icosphere


@pytest.fixture(scope="session")
def triangle():
    return TriangleMesh(
        vertices=[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        faces=[[0, 1, 2]],
        shape_id="triangle",
    )


@pytest.fixture(scope="session")
def equilateral():
    return TriangleMesh(
        vertices=[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.5, np.sqrt(3.0) / 2.0, 0.0]],
        faces=[[0, 1, 2]],
        shape_id="equilateral",
    )


@pytest.fixture(scope="session")
def tetrahedron():
    return TriangleMesh(
        vertices=[[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]],
        faces=[[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]],
        shape_id="tetra",
    )


def grid_mesh(nx, ny, spacing=1.0, shape_id="grid"):
    """Axis-aligned unit grid split into triangles."""
    xs, ys = np.meshgrid(np.arange(nx) * spacing, np.arange(ny) * spacing, indexing="ij")
    verts = np.column_stack([xs.ravel(), ys.ravel(), np.zeros(nx * ny)])
    faces = []
    for i in range(nx - 1):
        for j in range(ny - 1):
            a = i * ny + j
            b = a + ny
            faces += [(a, b, a + 1), (b, b + 1, a + 1)]
    return TriangleMesh(verts, np.array(faces), shape_id=shape_id)


@pytest.fixture(scope="session")
def grid3():
    return grid_mesh(3, 3, shape_id="grid3")


@pytest.fixture(scope="session")
def icosphere3():
    return icosphere(3)


@pytest.fixture(scope="session")
def icosphere3_basis(icosphere3):
    return eigenbasis(cotan_laplacian(icosphere3), 30)


@pytest.fixture(scope="session")
def small_corpus(triangle, tetrahedron, grid3):
    """Meshes of at most 50 vertices for exhaustive-oracle properties."""
    two_triangles = TriangleMesh(
        vertices=[[0, 0, 0], [1, 0, 0], [0, 1, 0], [5, 5, 0], [6, 5, 0], [5, 6, 0]],
        faces=[[0, 1, 2], [3, 4, 5]],
        shape_id="two_components",
    )
    return [
        triangle,
        tetrahedron,
        grid3,
        grid_mesh(4, 4, spacing=0.7, shape_id="grid4"),
        icosphere(1, shape_id="ico42"),
        bumpy_plane(6, 5, bump_amplitude=0.2, seed=3, shape_id="smallplane"),
        two_triangles,
    ]
