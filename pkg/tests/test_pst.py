import json
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from pstbench.geometry import GeometrySpec, build_primitive
from pstbench.mesh import volume_centroid
from pstbench.pst import (ContrastParams, DensitySolution, PolarizabilityTensor, PSTError,
                          analytic_ellipsoid, analytic_sphere, bi_tensor, combine,
                          depolarization_factors, lp_tensor, off_diagonal_error,
                          perturbation_leading_order, relative_error, solve_densities,
                          symmetrize, weighted_tensor)

from conftest import rel_l2

P10 = ContrastParams(10.0, 0.01)


def test_contrast_params():
    assert P10.lam == pytest.approx(11 / 18)
    assert P10.r == pytest.approx(0.1)
    for k in (0.05, 0.2, 1.5, 200.0):
        assert abs(ContrastParams(k).lam) > 0.5
    with pytest.raises(PSTError, match="degenerate contrast"):
        ContrastParams(1.0)
    with pytest.raises(PSTError):
        ContrastParams(-2.0)
    with pytest.raises(PSTError):
        ContrastParams(10.0, 0.0)


def test_sphere_densities(spheres):
    errs_phi, errs_psi = [], []
    for mesh in spheres:
        sol = solve_densities(mesh, P10)
        assert sol.residual <= 1e-10
        assert sol.phi.shape == sol.psi.shape == (3, mesh.n_triangles)
        xi = (mesh.centroids / np.linalg.norm(mesh.centroids, axis=1)[:, None]).T
        errs_phi.append(rel_l2(sol.phi, 2.25 * xi))
        errs_psi.append(rel_l2(sol.psi, -0.75 / 0.9 * xi))
    assert np.all(np.diff(errs_phi) < 0) and errs_phi[-1] < 0.02
    assert np.all(np.diff(errs_psi) < 0) and errs_psi[-1] < 0.02


def test_solver_paths_agree(spheres):
    mesh = spheres[1]
    ref = solve_densities(mesh, P10, method="lu")
    for method in ("gmres", "gmres-matrix-free"):
        sol = solve_densities(mesh, P10, method=method)
        assert sol.residual <= 1e-10
        assert sol.method == method
        assert_allclose(sol.phi, ref.phi, rtol=0, atol=1e-6 * np.abs(ref.phi).max())


def test_sphere_tensors(sphere_solution):
    exact = analytic_sphere(P10)
    assert_allclose(exact.values, 3 * math.pi * 1e-6 * np.eye(3), rtol=1e-15)
    assert relative_error(lp_tensor(sphere_solution), exact) < 0.015
    assert relative_error(bi_tensor(sphere_solution), exact) < 0.005


def test_lp_bi_consistency_under_refinement(spheres):
    gaps = []
    for mesh in spheres:
        sol = solve_densities(mesh, P10)
        lp, bi = lp_tensor(sol), bi_tensor(sol)
        gaps.append(relative_error(bi, lp))
    assert np.all(np.diff(gaps) < 0)


def _fake_solution(mesh, phi, psi, params=P10):
    from pstbench.mesh import enclosed_volume

    return DensitySolution(mesh, params, phi, psi, 0.0, 0, "none", enclosed_volume(mesh),
                           volume_centroid(mesh))


def test_lp_with_exact_sphere_density(spheres):
    mesh = spheres[2]
    xi = (mesh.centroids / np.linalg.norm(mesh.centroids, axis=1)[:, None]).T
    t = lp_tensor(_fake_solution(mesh, 2.0 * xi, np.zeros_like(xi)))
    assert_allclose(t.values, 1e-6 * 2.0 * 4 * np.pi / 3 * np.eye(3), rtol=0.01, atol=1e-9)


def test_zero_densities(cube):
    zero = np.zeros((3, 12))
    sol = _fake_solution(cube, zero, zero)
    assert_array_equal(lp_tensor(sol).values, 0.0)
    # the volume term alone: alpha^3 (k - 1) |B| I
    assert_allclose(bi_tensor(sol).values, 1e-6 * 9.0 * np.eye(3), rtol=1e-14)


def test_weighted_endpoints_and_midpoint(sphere_solution):
    lp, bi = lp_tensor(sphere_solution), bi_tensor(sphere_solution)
    assert_array_equal(weighted_tensor(sphere_solution, 0.0).values, lp.values)
    assert_array_equal(weighted_tensor(sphere_solution, 1.0).values, bi.values)
    assert_allclose(weighted_tensor(sphere_solution, 0.5).values, 0.5 * (lp.values + bi.values),
                    rtol=1e-15)
    with pytest.raises(PSTError):
        combine(lp, bi, 1.5)


def test_symmetrize():
    t = PolarizabilityTensor(np.array([[1.0, 0.2, 0], [0.4, 2.0, 0], [0, 0, 3.0]]), "lp")
    s = symmetrize(t)
    assert s.values[0, 1] == s.values[1, 0] == pytest.approx(0.3)
    assert s.symmetrized
    assert np.trace(s.values) == np.trace(t.values)
    assert_array_equal(symmetrize(s).values, s.values)


def test_tensor_json_round_trip(sphere_solution):
    t = symmetrize(weighted_tensor(sphere_solution, 0.4))
    doc = json.loads(json.dumps(t.to_dict()))
    assert set(doc) == {"tensor", "alpha", "k", "beta", "formulation", "symmetrized"}
    back = PolarizabilityTensor.from_dict(doc)
    assert_array_equal(back.values, t.values)
    assert back.formulation == "weighted" and back.symmetrized and back.beta == 0.4


def test_alpha_scaling_is_exact(spheres):
    mesh = spheres[0]
    a = solve_densities(mesh, ContrastParams(10.0, 0.01))
    b = solve_densities(mesh, ContrastParams(10.0, 0.03))
    for f in (lp_tensor, bi_tensor):
        assert_allclose(f(b).values, 27.0 * f(a).values, rtol=1e-13)


def test_translation_invariance():
    mesh = build_primitive(GeometrySpec("tetrahedron", {}, 1))
    a = solve_densities(mesh, P10)
    b = solve_densities(mesh.translated([3.0, -7.0, 11.0]), P10)
    for beta in (0.0, 0.4, 1.0):
        ta = symmetrize(weighted_tensor(a, beta))
        tb = symmetrize(weighted_tensor(b, beta))
        assert relative_error(tb, ta) < 1e-10


def test_rotation_equivariance(spheres):
    mesh = spheres[1]
    c, s = math.cos(0.7), math.sin(0.7)
    rot = np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]]) @ np.array([[1, 0, 0], [0, c, -s], [0, s, c]])
    a = symmetrize(weighted_tensor(solve_densities(mesh, P10), 0.4)).values
    b = symmetrize(weighted_tensor(solve_densities(mesh.rotated(rot), P10), 0.4)).values
    assert np.linalg.norm(b - rot @ a @ rot.T) / np.linalg.norm(a) < 1e-8


def test_analytic_sphere():
    t = analytic_sphere(P10)
    assert_allclose(np.diag(t.values), 9.42477796e-6, rtol=1e-9)
    assert_array_equal(analytic_sphere((1.0, 0.01)).values, 0.0)
    assert_allclose(analytic_sphere(P10, 2.0).values, 8 * t.values, rtol=1e-15)


def test_depolarization_factors():
    assert_allclose(depolarization_factors(1, 1, 1), 1 / 3, rtol=1e-10)
    lf = depolarization_factors(1.0, 0.7, 0.5)
    assert abs(lf.sum() - 1.0) < 1e-10
    assert lf[0] < lf[1] < lf[2]
    with pytest.raises(PSTError):
        depolarization_factors(0.5, 0.7, 1.0)


def test_analytic_ellipsoid():
    assert_allclose(analytic_ellipsoid(P10, 1, 1, 1).values, analytic_sphere(P10).values, rtol=1e-10)
    t = analytic_ellipsoid(P10, 1.0, 0.7, 0.5).values
    assert np.count_nonzero(t - np.diag(np.diag(t))) == 0
    assert t[0, 0] > t[1, 1] > t[2, 2] > 0


def test_perturbation_leading_order():
    t = 3 * math.pi * 1e-6 * np.eye(3)
    assert perturbation_leading_order(np.zeros((3, 3)), [0, 0, 0], [0, 0, 1], [0, 0, 1]) == 0.0
    v = perturbation_leading_order(t, [0, 0, 0], [0, 0, 1], [0, 0, 1])
    assert v == pytest.approx(-7.5e-7, rel=1e-14)
    far = perturbation_leading_order(t, [0, 0, 0], [0, 0, 2], [0, 0, 1])
    assert far == pytest.approx(v / 4, rel=1e-14)
    with pytest.raises(PSTError):
        perturbation_leading_order(t, [1, 2, 3], [1, 2, 3], [0, 0, 1])


def test_error_metrics():
    ref = np.eye(3)
    assert relative_error(ref, ref) == 0.0
    assert relative_error(0.99 * ref, ref) == pytest.approx(0.01)
    assert off_diagonal_error(0.99 * ref, ref) == 0.0
    assert off_diagonal_error(np.diag([5.0, 1, 1]), ref) == 0.0
    off = ref + 0.01 * (np.ones((3, 3)) - ref)
    assert off_diagonal_error(off, ref) == pytest.approx(0.01 * math.sqrt(6) / math.sqrt(3))
    with pytest.raises(PSTError):
        relative_error(ref, np.zeros((3, 3)))


def test_tensor_shape_validation():
    with pytest.raises(PSTError):
        PolarizabilityTensor(np.zeros((2, 2)), "lp")
    with pytest.raises(PSTError):
        PolarizabilityTensor(np.eye(3), "exact")
    with pytest.raises(PSTError):
        PolarizabilityTensor(np.triu(np.ones((3, 3))), "lp", symmetrized=True)
