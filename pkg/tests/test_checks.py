import numpy as np

from rhscatter.checks import (check_det_unity, check_e_dbar, check_green_dbar, check_green_difference,
                              check_green_dlambda, check_jump_relation, check_psi_dbar, check_schwarz,
                              contour_fields, d_fd, dbar_fd, fields_from_dataset)
from rhscatter.potentials import Disk, zero_potential
from rhscatter.reconstruct import build_context
from rhscatter.spectral import ContourSpec, build_contour


def test_fd_stencils_on_polynomials():
    f = lambda z: z ** 3 + 2 * np.conj(z) ** 2 + z * np.conj(z)
    lam = 0.7 - 0.2j
    assert abs(dbar_fd(f, lam, 1e-2) - (4 * np.conj(lam) + lam)) < 1e-10
    assert abs(d_fd(f, lam, 1e-2) - (3 * lam ** 2 + np.conj(lam))) < 1e-10


def test_identities_on_small_dataset(small_dataset, small_context):
    ds = small_dataset
    v = ds.potential
    for res in (check_jump_relation(v, ds.contour, fields_from_dataset(ds)),
                check_green_difference(ds.contour),
                check_green_dbar(1.0),
                check_green_dlambda(ds.contour),
                check_schwarz(v, 1.0),
                check_psi_dbar(v, 1.0),
                check_e_dbar(ds, v.points[10, 20])):
        assert res.passed, res.line()
    zero = ds.with_tables(h=np.zeros_like(ds.h), b=np.zeros_like(ds.b))
    assert check_det_unity(build_context(zero), v.points[::8, ::8]).residual == 0


def test_misoriented_contour_fails_jump_relation(bump32):
    bad = build_contour(ContourSpec(1.0, 0.25, 16), misorient=True)
    with np.errstate(all="ignore"):
        res = check_jump_relation(bump32, bad)
    assert not res.passed


def test_zero_potential_passes_trivially():
    v = zero_potential(Disk((0.0, 0.0), 1.0), 12)
    c = build_contour(ContourSpec(1.0, 0.25, 8))
    assert check_jump_relation(v, c, contour_fields(v, c)).residual == 0
    res = check_psi_dbar(v, 1.0)
    assert res.passed
