import numpy as np
import pytest

from accesstopo import kernels
from accesstopo import _kernels_py
from accesstopo.fea import (BoundaryConditions, ElasticityModel, FEAError, MaterialModel,
                            assemble_and_solve, compliance_sensitivity, element_stiffness,
                            filter_weights, sensitivity_filter)
from accesstopo.grid import GridDims, ScalarGrid


def cantilever_bc(nx, ny, load=-1.0):
    fixed = [((0, j), a) for j in range(ny + 1) for a in (0, 1)]
    return BoundaryConditions(fixed, [((nx, ny // 2), 1, load)])


def node_u(u, nn, node, axis):
    return u[np.ravel_multi_index(node, nn) * len(nn) + axis]


def test_material_validation():
    with pytest.raises(ValueError, match="Poisson"):
        MaterialModel(1.0, 0.5)
    with pytest.raises(ValueError, match="modulus"):
        MaterialModel(0.0, 0.3)
    m = MaterialModel(2.0, 0.3)
    assert m.stiffness_scale(np.array([0.0, 1.0])).tolist() == [1e-3, 1.0]


def test_single_element_patch():
    E, nu, h = 210.0, 0.3, 2.0
    d = GridDims(1, 1, 1, spacing=h)
    bc = BoundaryConditions([((0, 0), 0), ((0, 0), 1), ((0, 1), 0)],
                            [((1, 0), 0, 0.5), ((1, 1), 0, 0.5)])
    res = assemble_and_solve(ScalarGrid.full(d, 1.0), bc, MaterialModel(E, nu), solver="direct")
    u = res.displacements
    nn = (2, 2)
    # uniform stress sigma_x = F / (h * 1); plane stress
    ux = h * (1.0 / h) / E
    uy = -nu * h * (1.0 / h) / E
    assert node_u(u, nn, (1, 0), 0) == pytest.approx(ux, rel=1e-10)
    assert node_u(u, nn, (1, 1), 0) == pytest.approx(ux, rel=1e-10)
    assert node_u(u, nn, (0, 1), 1) == pytest.approx(uy, rel=1e-10)
    assert node_u(u, nn, (1, 1), 1) == pytest.approx(uy, rel=1e-10)
    assert node_u(u, nn, (1, 0), 1) == pytest.approx(0.0, abs=1e-14)
    assert res.compliance == pytest.approx(ux, rel=1e-10)


def test_3d_patch_uniaxial():
    E, nu = 100.0, 0.25
    d = GridDims(2, 2, 2)
    fixed = []
    for j in range(3):
        for k in range(3):
            fixed.append(((0, j, k), 0))
    fixed += [((0, 0, 0), 1), ((0, 0, 0), 2), ((0, 0, 1), 1)]
    # consistent nodal loads for unit traction on the x = 2 face (area 4)
    w = {0: 0.25, 1: 0.5, 2: 0.25}
    loads = [((2, j, k), 0, w[j] * w[k] * 4) for j in range(3) for k in range(3)]
    res = assemble_and_solve(ScalarGrid.full(d, 1.0), BoundaryConditions(fixed, loads),
                             MaterialModel(E, nu), solver="direct")
    u = res.displacements.reshape(3, 3, 3, 3)
    assert np.allclose(u[2, :, :, 0], 2 / E, rtol=1e-9)
    assert np.allclose(u[:, 2, :, 1] - u[:, 0, :, 1], -nu * 2 / E, rtol=1e-9)


def test_zero_load():
    d = GridDims(6, 3)
    res = assemble_and_solve(ScalarGrid.full(d, 0.5), BoundaryConditions([((0, 0), 0), ((0, 0), 1), ((0, 1), 0)]),
                             MaterialModel())
    assert res.compliance == 0 and not res.displacements.any()


def test_linearity_in_modulus(rng):
    d = GridDims(8, 4)
    rho = ScalarGrid(d, 0.2 + 0.8 * rng.random(d.shape))
    bc = cantilever_bc(8, 4)
    a = assemble_and_solve(rho, bc, MaterialModel(1.0, 0.3), solver="direct")
    b = assemble_and_solve(rho, bc, MaterialModel(2.0, 0.3), solver="direct")
    assert np.allclose(b.displacements, a.displacements / 2, rtol=1e-10, atol=0)
    assert b.compliance == pytest.approx(a.compliance / 2, rel=1e-12)


@pytest.mark.parametrize("ndim", [2, 3])
def test_stiffness_symmetric_psd(ndim):
    Ke = element_stiffness(1.0, 0.3, 1.0, ndim)
    assert np.allclose(Ke, Ke.T, atol=1e-14)
    ev = np.linalg.eigvalsh(Ke)
    assert ev.min() > -1e-12
    assert (ev < 1e-10).sum() == (3 if ndim == 2 else 6)      # rigid modes


def test_assembled_matrix_symmetric_and_matches_matvec(rng):
    d = GridDims(5, 4, 3)
    fixed = [((0, j, k), a) for j in range(5) for k in range(4) for a in range(3)]
    m = ElasticityModel(d, BoundaryConditions(fixed, [((5, 2, 1), 2, -1.0)]), MaterialModel())
    scale = m.mat.stiffness_scale(rng.random(m.shape)).ravel()
    K = m.assemble(scale)
    assert abs(K - K.T).max() <= 1e-9 * abs(K).max()
    u = rng.normal(size=m.ndof)
    assert np.allclose(K @ u, m.matvec(u, scale), rtol=1e-12, atol=1e-12)


def test_compliance_identity_and_residual(rng):
    d = GridDims(20, 10)
    rho = rng.uniform(0.1, 1.0, element_shape := (20, 10))
    m = ElasticityModel(d, cantilever_bc(20, 10), MaterialModel(), solver="cg", tol=1e-10)
    res = m.solve(rho)
    scale = m.mat.stiffness_scale(rho).ravel()
    u = res.displacements
    assert res.compliance == pytest.approx(u @ m.matvec(u, scale), rel=1e-8)
    assert res.residual <= 1e-10


def test_cg_matches_direct(rng):
    d = GridDims(30, 12)
    rho = rng.uniform(0.05, 1.0, (30, 12))
    bc = cantilever_bc(30, 12)
    a = ElasticityModel(d, bc, MaterialModel(), solver="cg", tol=1e-10).solve(rho)
    b = ElasticityModel(d, bc, MaterialModel(), solver="direct").solve(rho)
    assert a.compliance == pytest.approx(b.compliance, rel=1e-8)
    assert np.allclose(a.displacements, b.displacements, rtol=0, atol=1e-7 * np.abs(b.displacements).max())


def test_auto_solver_choice():
    bc2 = cantilever_bc(4, 2)
    assert ElasticityModel(GridDims(4, 2), bc2, MaterialModel()).solver == "direct"
    fixed = [((0, j, k), a) for j in range(3) for k in range(3) for a in range(3)]
    m3 = ElasticityModel(GridDims(2, 2, 2), BoundaryConditions(fixed, []), MaterialModel())
    assert m3.solver == "cg"


def test_rigid_mode_error():
    d = GridDims(4, 2)
    with pytest.raises(FEAError, match="rotation about axis z"):
        ElasticityModel(d, BoundaryConditions([((0, 0), 0), ((0, 0), 1)], [((4, 1), 1, -1.0)]),
                        MaterialModel())
    with pytest.raises(FEAError, match="translation along axis y"):
        ElasticityModel(d, BoundaryConditions([((0, 0), 0), ((0, 1), 0)], [((4, 1), 1, -1.0)]),
                        MaterialModel())
    with pytest.raises(FEAError, match="fixed"):
        ElasticityModel(d, BoundaryConditions([], [((4, 1), 1, -1.0)]), MaterialModel())


def test_bc_validation():
    d = GridDims(4, 2)
    errs = BoundaryConditions([((9, 0), 0)], [((0, 0), 5, np.inf)]).validate(d)
    assert any("outside" in e for e in errs)
    assert any("axis 5" in e for e in errs)
    assert any("non-finite" in e for e in errs)


def test_pcg_iteration_cap():
    d = GridDims(30, 10)
    m = ElasticityModel(d, cantilever_bc(30, 10), MaterialModel(), solver="cg", max_iter=3)
    with pytest.raises(FEAError, match="residual"):
        m.solve(np.full((30, 10), 0.5))


def test_density_range_checked():
    m = ElasticityModel(GridDims(4, 2), cantilever_bc(4, 2), MaterialModel())
    with pytest.raises(FEAError, match=r"\[0, 1\]"):
        m.solve(np.full((4, 2), 1.5))


def test_sensitivity_sign_and_zero(rng):
    d = GridDims(12, 6)
    rho = ScalarGrid(d, rng.uniform(0.2, 1, d.shape))
    mat = MaterialModel()
    res = assemble_and_solve(rho, cantilever_bc(12, 6), mat)
    s = compliance_sensitivity(rho, res, mat)
    assert s.values.max() <= 0 and s.values.min() == pytest.approx(-1.0)
    zero = assemble_and_solve(rho, BoundaryConditions(cantilever_bc(12, 6).fixed, []), mat)
    assert not compliance_sensitivity(rho, zero, mat).values.any()
    with pytest.raises(ValueError, match="shape"):
        compliance_sensitivity(ScalarGrid.full(GridDims(3, 3), 1.0), res, mat)


def test_finite_difference_gradient():
    rng = np.random.default_rng(7)
    nx, ny = 20, 10
    d = GridDims(nx, ny)
    mat = MaterialModel(1.0, 0.3)
    m = ElasticityModel(d, cantilever_bc(nx, ny), mat, solver="direct")
    rho = rng.uniform(0.3, 1.0, (nx, ny))
    grad = m.compliance_gradient(rho, m.solve(rho))
    h = 1e-4
    for e in rng.choice(nx * ny, 20, replace=False):
        i, j = divmod(int(e), ny)
        rp, rm = rho.copy(), rho.copy()
        rp[i, j] += h
        rm[i, j] -= h
        fd = (m.solve(rp).compliance - m.solve(rm).compliance) / (2 * h)
        assert abs(fd - grad[i, j]) <= 1e-3 * abs(fd)


def test_backends_agree(rng):
    if kernels.BACKEND == "numpy":
        pytest.skip("compiled kernels not built")
    for shape in [(7, 5), (4, 3, 5)]:
        ndim = len(shape)
        Ke = element_stiffness(1.0, 0.3, 1.0, ndim)
        nn = int(np.prod([s + 1 for s in shape])) * ndim
        u = rng.normal(size=nn)
        scale = rng.random(int(np.prod(shape)))
        assert np.allclose(kernels.matvec(u, scale, Ke, shape), _kernels_py.matvec(u, scale, Ke, shape),
                           rtol=1e-13, atol=1e-13)
        assert np.allclose(kernels.element_energy(u, Ke, shape), _kernels_py.element_energy(u, Ke, shape),
                           rtol=1e-13, atol=1e-13)
        assert np.allclose(kernels.diagonal(scale, Ke, shape), _kernels_py.diagonal(scale, Ke, shape),
                           rtol=1e-13, atol=1e-13)


def test_filter_weights_and_constant_field():
    w = filter_weights(1.5, 2)
    assert w.shape == (3, 3) and w[1, 1] == 1.5 and w[0, 0] == pytest.approx(1.5 - np.sqrt(2))
    rho = np.ones((6, 5))
    dc = np.full((6, 5), -2.0)
    assert np.allclose(sensitivity_filter(rho, dc)[1:-1, 1:-1], -2.0)
