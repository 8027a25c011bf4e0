"""Mesh generation: determinism, symmetry, serialization, invariants."""

import numpy as np
import pytest

from periprop.geometry import BodyShape, DomainSpec
from periprop.meshgen import (
    AxiMesh,
    BoundaryTag,
    MeshError,
    MeshFormatError,
    generate_mesh,
    make_mesh,
    mesh_hash,
    min_angle,
    read_mesh,
    reflect_mesh,
    refine_uniform,
    validate_mesh,
    write_mesh,
)

SPEC = DomainSpec(4.0)


@pytest.fixture(scope="module")
def sphere_mesh():
    return generate_mesh(BodyShape.sphere(), SPEC, size_far=1.0, size_body=0.4)


@pytest.fixture(scope="module")
def drop_mesh():
    return generate_mesh(BodyShape.drop(), SPEC, size_far=1.0, size_body=0.35)


@pytest.fixture(scope="module")
def flip_mesh():
    return generate_mesh(BodyShape.flipped_drop(), SPEC, size_far=1.0, size_body=0.35)


def test_deterministic_regeneration(drop_mesh):
    again = generate_mesh(BodyShape.drop(), SPEC, size_far=1.0, size_body=0.35)
    assert mesh_hash(again) == mesh_hash(drop_mesh)


def test_symmetric_body_gets_symmetric_mesh(sphere_mesh):
    # taper-0 bodies are meshed on the upper half plane and mirror-merged, so
    # the vertex set is exactly invariant under z -> -z
    v = sphere_mesh.vertices
    mirrored = np.column_stack([v[:, 0], -v[:, 1]])
    orig = {(r, z) for r, z in v.tolist()}
    assert {(r, z) for r, z in mirrored.tolist()} == orig


def test_flipped_drop_is_exact_reflection(drop_mesh, flip_mesh):
    assert mesh_hash(reflect_mesh(drop_mesh)) == mesh_hash(flip_mesh)


def test_reflect_swaps_outflow_tags(drop_mesh):
    refl = reflect_mesh(drop_mesh)
    for tag, rtag in zip(drop_mesh.boundary_tags, refl.boundary_tags):
        if tag is BoundaryTag.OUTTOP:
            assert rtag is BoundaryTag.OUTBOT
        elif tag is BoundaryTag.OUTBOT:
            assert rtag is BoundaryTag.OUTTOP
        else:
            assert rtag is tag
    validate_mesh(refl)


def test_all_boundary_tags_present(drop_mesh):
    present = set(drop_mesh.boundary_tags)
    assert present == set(BoundaryTag)


def test_axis_vertices_exact(drop_mesh):
    for (i, j), tag in zip(drop_mesh.boundary_edges, drop_mesh.boundary_tags):
        if tag is BoundaryTag.AXIS:
            assert drop_mesh.vertices[i, 0] == 0.0
            assert drop_mesh.vertices[j, 0] == 0.0


def test_min_angle_quality(drop_mesh, sphere_mesh):
    assert min_angle(drop_mesh) >= 15.0
    assert min_angle(sphere_mesh) >= 15.0


def test_roundtrip(tmp_path, drop_mesh):
    path = tmp_path / "m.txt"
    write_mesh(drop_mesh, path)
    back = read_mesh(path)
    assert back == drop_mesh
    assert mesh_hash(back) == mesh_hash(drop_mesh)


def test_refine_uniform(sphere_mesh):
    fine = refine_uniform(sphere_mesh)
    assert fine.num_cells == 4 * sphere_mesh.num_cells
    # midpoint refinement cannot worsen the angle bound
    assert min_angle(fine) >= min_angle(sphere_mesh) - 1e-9
    validate_mesh(fine)


def test_size_validation():
    with pytest.raises(MeshError, match="invalid sizes"):
        generate_mesh(BodyShape.sphere(), SPEC, size_far=0.2, size_body=0.4)


def test_validate_rejects_negative_r(sphere_mesh):
    bad = AxiMesh(
        sphere_mesh.vertices.copy(),
        sphere_mesh.cells,
        sphere_mesh.boundary_edges,
        sphere_mesh.boundary_tags,
        sphere_mesh.target_sizes,
    )
    bad.vertices[7, 0] = -1e-9
    with pytest.raises(MeshError, match="negative r"):
        validate_mesh(bad)


def test_validate_rejects_flipped_cell(sphere_mesh):
    cells = sphere_mesh.cells.copy()
    cells[0] = cells[0][[0, 2, 1]]
    bad = AxiMesh(
        sphere_mesh.vertices,
        cells,
        sphere_mesh.boundary_edges,
        sphere_mesh.boundary_tags,
        sphere_mesh.target_sizes,
    )
    with pytest.raises(MeshError, match="oriented"):
        validate_mesh(bad)


def test_read_mesh_format_errors(tmp_path, sphere_mesh):
    good = tmp_path / "good.txt"
    write_mesh(sphere_mesh, good)
    text = good.read_text()

    bad_header = tmp_path / "h.txt"
    bad_header.write_text(text.replace("aximesh 1", "aximesh 9", 1))
    with pytest.raises(MeshFormatError, match="header"):
        read_mesh(bad_header)

    truncated = tmp_path / "t.txt"
    truncated.write_text("\n".join(text.splitlines()[:5]) + "\n")
    with pytest.raises(MeshFormatError):
        read_mesh(truncated)

    bad_tag = tmp_path / "g.txt"
    lines = text.splitlines()
    for i, line in enumerate(lines):
        parts = line.split()
        if len(parts) == 3 and parts[2] in {t.value for t in BoundaryTag}:
            lines[i] = f"{parts[0]} {parts[1]} nonsense"
            break
    bad_tag.write_text("\n".join(lines) + "\n")
    with pytest.raises(MeshFormatError, match="tag"):
        read_mesh(bad_tag)


def test_make_mesh_single_triangle():
    v = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    cells = np.array([[0, 1, 2]])
    bedges = np.array([[0, 1], [1, 2], [2, 0]])
    tags = [BoundaryTag.OUTBOT, BoundaryTag.LATERAL, BoundaryTag.AXIS]
    mesh = make_mesh(v, cells, bedges, tags)
    validate_mesh(mesh)
    assert mesh.num_vertices == 3 and mesh.num_cells == 1
