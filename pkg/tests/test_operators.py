import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from pstbench.geometry import GeometrySpec, build_primitive
from pstbench.operators import (DEFAULT_QUADRATURE, SIGN, MatrixFreeOperator, OperatorError,
                                QuadratureConfig, apply_single_layer,
                                assemble_adjoint_double_layer, assemble_mass,
                                assemble_single_layer, dump_matrix,
                                evaluate_single_layer_potential, load_matrix)
from pstbench.quadrature import triangle_rule, vertex_graded_rule

from conftest import rel_l2


def test_sign_convention_constant():
    assert SIGN == -1.0


@pytest.mark.parametrize("degree", [1, 2, 3, 4, 5, 6, 8])
def test_triangle_rule_exactness(degree):
    pts, w = triangle_rule(degree)
    assert_allclose(w.sum(), 0.5, rtol=1e-14)
    # int_T s^a t^b = a! b! / (a + b + 2)!
    from math import factorial
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            exact = factorial(a) * factorial(b) / factorial(a + b + 2)
            assert_allclose(np.sum(w * pts[:, 0] ** a * pts[:, 1] ** b), exact, rtol=1e-12)


def test_vertex_graded_rule_weights():
    pts, w = vertex_graded_rule(4)
    assert len(w) == 96
    assert_allclose(w.sum(), 0.5, rtol=1e-14)
    assert np.all(pts.sum(axis=1) <= 1 + 1e-14) and np.all(pts >= 0)


def test_mass_matrix(cube, spheres):
    m = assemble_mass(cube)
    assert_allclose(np.diag(m.matrix), 0.5)
    assert_allclose(np.trace(m.matrix), 6.0)
    assert np.count_nonzero(m.matrix - np.diag(np.diag(m.matrix))) == 0
    areas = [np.trace(assemble_mass(s).matrix) for s in spheres]
    err = np.abs(4 * np.pi - np.array(areas))
    assert np.all(np.diff(err) < 0)


def test_single_layer_symmetric_positive_definite(cube):
    v = assemble_single_layer(cube).matrix
    assert np.max(np.abs(v - v.T)) / np.max(np.abs(v)) < 1e-10
    assert np.linalg.eigvalsh(0.5 * (v + v.T)).min() > 0


def test_single_layer_symmetric_lshape():
    mesh = build_primitive(GeometrySpec("lshape"))
    v = assemble_single_layer(mesh).matrix
    assert np.max(np.abs(v - v.T)) / np.max(np.abs(v)) < 1e-10


def test_adjoint_double_layer_zero_diagonal(cube, spheres):
    for mesh in (cube, spheres[1]):
        k = assemble_adjoint_double_layer(mesh).matrix
        assert_array_equal(np.diag(k), 0.0)


def test_regular_order_doubling_on_cube(cube):
    finer = QuadratureConfig(regular_order=6)
    for assemble in (assemble_single_layer, assemble_adjoint_double_layer):
        a = assemble(cube).matrix
        b = assemble(cube, finer).matrix
        assert np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-300)) < 1e-8


def test_all_orders_doubled_on_cube(cube):
    finer = QuadratureConfig(regular_order=6, near_order=12, singular_order=8)
    for assemble in (assemble_single_layer, assemble_adjoint_double_layer):
        a = assemble(cube).matrix
        b = assemble(cube, finer).matrix
        assert np.max(np.abs(a - b)) / np.max(np.abs(b)) < 1e-3


def test_regular_order_doubling_on_separated_panels():
    mesh = build_primitive(GeometrySpec("sphere", {}, 2))
    quad = QuadratureConfig(far_ratio=1e9)            # every non-near pair is "regular"
    finer = QuadratureConfig(regular_order=6, far_ratio=1e9)
    a = assemble_single_layer(mesh, quad).matrix
    b = assemble_single_layer(mesh, finer).matrix
    far = np.linalg.norm(mesh.centroids[:, None] - mesh.centroids[None], axis=2) > 6 * mesh.h
    assert np.max(np.abs(a - b)[far] / np.abs(b)[far]) < 1e-5


def _eigen_errors(spheres, assemble, value):
    errs = []
    for mesh in spheres:
        op = assemble(mesh).matrix
        xi = mesh.centroids / np.linalg.norm(mesh.centroids, axis=1)[:, None]
        errs.append(rel_l2(op @ xi, value * mesh.areas[:, None] * xi))
    return np.array(errs)


def test_single_layer_sphere_eigenvalue(spheres):
    errs = _eigen_errors(spheres, assemble_single_layer, 1.0 / 3.0)
    assert np.all(np.diff(errs) < 0)
    assert errs[-1] < 0.01


def test_adjoint_double_layer_sphere_eigenvalue(spheres):
    errs = _eigen_errors(spheres, assemble_adjoint_double_layer, -1.0 / 6.0)
    assert np.all(np.diff(errs) < 0)
    assert errs[-1] < 0.02


def test_generalized_eigenvalue_converges(spheres):
    vals = []
    for mesh in spheres:
        k = assemble_adjoint_double_layer(mesh).matrix
        xi = mesh.centroids / np.linalg.norm(mesh.centroids, axis=1)[:, None]
        kk = xi.T @ k @ xi
        mm = xi.T @ (mesh.areas[:, None] * xi)
        vals.append(np.linalg.eigvals(np.linalg.solve(mm, kk)).real)
    err = np.abs(np.array(vals) + 1.0 / 6.0).max(axis=1)
    rates = np.log(err[:-1] / err[1:]) / np.log(2.0)
    assert np.all(rates > 0.9)


def test_solid_angle_identity(spheres):
    # column sums pair K* with the constant: sum_T K*[T, T'] = SIGN * area_T' / 2
    errs = []
    for mesh in spheres:
        col = assemble_adjoint_double_layer(mesh).matrix.sum(axis=0)
        errs.append(rel_l2(col, SIGN * 0.5 * mesh.areas))
    assert np.all(np.diff(errs) < 0)
    assert errs[-1] < 0.01


def test_matrix_free_matches_dense(spheres):
    mesh = spheres[1]
    x = np.random.default_rng(1).standard_normal((mesh.n_triangles, 3))
    for kind, assemble in (("single_layer", assemble_single_layer),
                           ("adjoint_double_layer", assemble_adjoint_double_layer)):
        dense = assemble(mesh).matrix @ x
        for storage in ("none", "float32"):
            op = MatrixFreeOperator(mesh, kind, storage=storage)
            tol = 1e-12 if storage == "none" else 1e-6
            assert_allclose(op @ x, dense, rtol=0, atol=tol * np.abs(dense).max())
    assert_allclose(apply_single_layer(mesh, x[:, 0]), assemble_single_layer(mesh).matrix @ x[:, 0],
                    rtol=1e-12)


def test_potential_of_constant_density(spheres):
    errs = []
    for mesh in spheres:
        val = evaluate_single_layer_potential(mesh, np.ones(mesh.n_triangles),
                                              [[2.0, 0, 0], [0, 0, 10.0], [0, 0, 0]])
        errs.append(np.abs(val - [0.5, 0.1, 1.0]) / [0.5, 0.1, 1.0])
    errs = np.array(errs)
    assert np.all(np.diff(errs, axis=0) < 0)
    assert errs[-1].max() < 0.01


def test_potential_zero_density_and_guard(spheres):
    mesh = spheres[0]
    assert_array_equal(evaluate_single_layer_potential(mesh, np.zeros(80), [[3.0, 1.0, 0.0]]), 0.0)
    with pytest.raises(OperatorError, match="guard"):
        evaluate_single_layer_potential(mesh, np.ones(80), mesh.vertices[:1])
    with pytest.raises(OperatorError, match="entries"):
        evaluate_single_layer_potential(mesh, np.ones(3), [[3.0, 0, 0]])


def test_quadrature_config_validation():
    with pytest.raises(OperatorError, match="regular_order"):
        QuadratureConfig(regular_order=0)
    with pytest.raises(OperatorError, match="near_ratio"):
        QuadratureConfig(near_ratio=7.0, far_ratio=6.0)
    with pytest.raises(OperatorError, match="singular rule"):
        QuadratureConfig(singular_rule="sauter-schwab")


def test_fingerprint_binding(cube, spheres):
    v = assemble_single_layer(cube)
    v.check_mesh(cube)
    with pytest.raises(OperatorError, match="different mesh"):
        v.check_mesh(spheres[0])
    with pytest.raises(OperatorError, match="different mesh"):
        MatrixFreeOperator(cube, "single_layer").check_mesh(spheres[0])


def test_matrix_dump_round_trip(tmp_path, cube):
    v = assemble_single_layer(cube)
    path = dump_matrix(v, tmp_path / "v.bin")
    assert path.stat().st_size == 48 + 8 * 144
    back = load_matrix(path, cube.fingerprint)
    assert back.kind == "single_layer"
    assert_array_equal(back.matrix, v.matrix)
    (tmp_path / "junk.bin").write_bytes(b"nonsense")
    with pytest.raises(OperatorError):
        load_matrix(tmp_path / "junk.bin")


def test_default_quadrature_is_shared():
    assert DEFAULT_QUADRATURE == QuadratureConfig()
