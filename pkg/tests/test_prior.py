import itertools

import numpy as np
import pytest

from turbrestore.optics import OpticsParams
from turbrestore.prior import (
    PsfBasis,
    PsfPrior,
    estimate_sigmas,
    generate_ensemble,
    learn_basis,
    omp_sparse_code,
    read_psfb,
    sparse_code_batch,
    train_prior,
    write_psfb,
)


def toy_basis(rng, p=6, K=3, mean=None):
    q, _ = np.linalg.qr(rng.normal(size=(K * K, p)))
    mean = np.zeros((K, K)) if mean is None else mean
    return PsfBasis(mean_kernel=mean, components=q.T.reshape(p, K, K), sigmas=np.ones(p))


def exhaustive_l0(x, D, max_support):
    """Smallest residual per support size, by trying every support."""
    best = {0: float(x @ x)}
    for k in range(1, max_support + 1):
        for S in itertools.combinations(range(D.shape[1]), k):
            A = D[:, S]
            c, *_ = np.linalg.lstsq(A, x, rcond=None)
            r = x - A @ c
            best[k] = min(best.get(k, np.inf), float(r @ r))
    return best


# ---------------------------------------------------------------- ensemble

def test_unbounded_kappa_accepts_everything(rng):
    ens = generate_ensemble(50, [2.0], kappa=1e12, rng=rng)
    assert ens.accept_rate[2.0] == 1.0


def test_accepted_samples_satisfy_threshold(rng):
    kappa = 0.3
    ens = generate_ensemble(200, [1.0, 2.0], kappa=kappa, rng=rng, scale_kappa=False,
                            batch=256)
    # tilt removal only touches a_2, a_3
    assert np.all(np.sum(ens.coeffs[:, 3:] ** 2, axis=1) <= kappa)
    assert ens.psfs.shape[0] == 200
    assert set(np.unique(ens.dr0)) == {1.0, 2.0}
    assert all(0 < r < 1 for r in ens.accept_rate.values())


def test_fried_threshold_rarely_rejects():
    # E||a_4:N||^2 is about 0.134 (D/r0)^(5/3) rad^2, far below 1 rad^2
    ens = generate_ensemble(4096, [1.0], kappa=1.0, rng=np.random.default_rng(0))
    assert ens.accept_rate[1.0] > 0.999


def test_tiny_kappa_aborts(rng):
    with pytest.raises(RuntimeError, match="accept rate"):
        generate_ensemble(10, [4.0], kappa=1e-6, rng=rng, scale_kappa=False, batch=64)


def test_ensemble_psfs_are_valid(rng):
    ens = generate_ensemble(30, [3.0], rng=rng)
    assert np.all(ens.psfs >= 0)
    assert np.allclose(ens.psfs.sum(axis=(1, 2)), 1.0, atol=1e-9)


# ------------------------------------------------------------------- basis

def test_identical_kernels_give_empty_basis():
    k = np.full((5, 5), 1 / 25)
    with pytest.warns(RuntimeWarning, match="rank"):
        b = learn_basis(np.stack([k] * 4), p=2)
    assert b.n_components == 0
    assert np.allclose(b.mean_kernel, k)


def test_two_kernels_give_their_difference(rng):
    a, b = rng.random((3, 3)), rng.random((3, 3))
    basis = learn_basis(np.stack([a, b]), p=1)
    d = (a - b).ravel()
    d /= np.linalg.norm(d)
    u = basis.matrix[0]
    assert abs(abs(u @ d) - 1) < 1e-12
    assert u[np.argmax(np.abs(u))] > 0
    assert np.allclose(basis.mean_kernel, (a + b) / 2)


def test_basis_orthonormal_and_deterministic(small_basis):
    U = small_basis.matrix
    assert np.allclose(U @ U.T, np.eye(U.shape[0]), atol=1e-8)
    assert np.all(small_basis.sigmas > 0)
    again = train_prior([1.4], m=400, p=20, rng=np.random.default_rng(7))
    assert np.array_equal(again.components, small_basis.components)


def test_reconstruction_error_equals_eigen_tail(rng):
    X = rng.random((40, 5, 5))
    full = learn_basis(X, p=20)
    # the tail beyond p components, from a basis of every component
    all_var = learn_basis(X, p=25).explained_variance
    flat = X.reshape(40, -1) - full.mean_kernel.ravel()
    rec = flat @ full.matrix.T @ full.matrix
    err = np.sum((flat - rec) ** 2)
    tail = np.sum(all_var[20:]) * (40 - 1)
    assert err == pytest.approx(tail, rel=1e-8)


def test_p_larger_than_ensemble_rejected(rng):
    with pytest.raises(ValueError):
        learn_basis(rng.random((3, 3, 3)), p=4)


@pytest.mark.slow
def test_sixty_components_capture_99_percent():
    for d in (1.0, 3.0):
        basis, ens = train_prior([d], m=2000, p=60, rng=np.random.default_rng(1),
                                 return_ensemble=True)
        flat = ens.psfs.reshape(len(ens.psfs), -1)
        total = np.sum(np.var(flat, axis=0, ddof=1))
        assert np.sum(basis.explained_variance) / total >= 0.99


# --------------------------------------------------------------------- OMP

def test_single_atom_code(rng):
    b = toy_basis(rng)
    h = b.mean_kernel + 3 * b.components[1]
    code = omp_sparse_code(h, b, tau=1e-12)
    assert list(code.support) == [1]
    assert code.w[1] == pytest.approx(3, abs=1e-8)


def test_threshold_already_met(rng):
    b = toy_basis(rng)
    h = b.mean_kernel + 0.01 * b.components[0]
    code = omp_sparse_code(h, b, tau=1e-3)
    assert code.support.size == 0 and np.all(code.w == 0)
    assert not code.exhausted


def test_span_of_two_atoms_recovered(rng):
    b = toy_basis(rng)
    h = b.mean_kernel + 0.7 * b.components[0] - 1.3 * b.components[3]
    code = omp_sparse_code(h, b, tau=1e-20)
    assert set(code.support) <= {0, 3}
    assert code.residual < 1e-10


def test_omp_equals_exhaustive_search(rng):
    for _ in range(20):
        b = toy_basis(rng)
        x = rng.normal(size=9)
        best = exhaustive_l0(x, b.matrix.T, 2)
        for k in (1, 2):
            # tau just above the best k-sparse residual forces exactly k atoms
            tau = best[k] * (1 + 1e-9) + 1e-15
            if best[k - 1] <= tau:
                continue
            code = omp_sparse_code(x.reshape(3, 3), b, tau)
            assert code.support.size == k
            assert code.residual == pytest.approx(best[k], rel=1e-9, abs=1e-14)


def test_code_invariants(small_basis, rng):
    from turbrestore.zernike import remove_gradient_tilt, sample_zernike_coeffs
    from turbrestore.optics import psfs_from_coeffs
    p = OpticsParams()
    a = remove_gradient_tilt(sample_zernike_coeffs(1.4, p.n_zernike, rng, size=5), 64)
    for h in psfs_from_coeffs(a, p):
        code = omp_sparse_code(h, small_basis, 1e-4)
        r = h - small_basis.reconstruct(code.w)
        assert code.residual == pytest.approx(float(np.sum(r * r)), abs=1e-10)
        assert code.support.size == np.count_nonzero(code.w)
        assert code.exhausted == (code.residual > 1e-4)
        inner = small_basis.project(h)
        assert np.allclose(code.w[code.support], inner[code.support], atol=1e-10)


def test_batch_coding_matches_omp(small_basis, rng):
    from turbrestore.zernike import remove_gradient_tilt, sample_zernike_coeffs
    from turbrestore.optics import psfs_from_coeffs
    p = OpticsParams()
    a = remove_gradient_tilt(sample_zernike_coeffs(1.4, p.n_zernike, rng, size=10), 64)
    H = psfs_from_coeffs(a, p)
    for tau in (1e-3, 1e-4, 1e-6):
        W, res = sparse_code_batch(H, small_basis, tau)
        for i, h in enumerate(H):
            code = omp_sparse_code(h, small_basis, tau)
            assert np.allclose(W[i], code.w, atol=1e-10)
            assert res[i] == pytest.approx(code.residual, abs=1e-10)


def test_omp_residual_non_increasing(rng):
    b = toy_basis(rng, p=8, K=3)
    x = rng.normal(size=(3, 3))
    prev = np.inf
    for tau_scale in np.geomspace(1, 1e-6, 12):
        code = omp_sparse_code(x, b, tau=float(np.sum(x ** 2)) * tau_scale)
        assert code.residual <= prev + 1e-12
        prev = code.residual


def test_omp_dimension_mismatch(small_basis):
    with pytest.raises(ValueError):
        omp_sparse_code(np.zeros((5, 5)), small_basis, 1e-4)


# ------------------------------------------------------------------ sigmas

def test_sigma_examples():
    assert np.all(estimate_sigmas(np.ones((5, 3))) == 1e-6)
    w = np.array([[-1.0], [1.0]] * 10)
    assert estimate_sigmas(w)[0] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        estimate_sigmas(np.ones((1, 3)))


def test_sigma_of_laplacian_codes():
    b = 0.3
    w = np.random.default_rng(8).laplace(scale=b, size=(100_000, 1))
    # a Laplacian of scale b has standard deviation b sqrt(2)
    assert estimate_sigmas(w)[0] / np.sqrt(2) == pytest.approx(b, rel=0.02)


# ---------------------------------------------------------------- PSFB/API

def test_psfb_round_trip(tmp_path, small_basis):
    path = tmp_path / "b.psfb"
    write_psfb(path, small_basis)
    back = read_psfb(path)
    for f in ("mean_kernel", "components", "sigmas"):
        assert np.array_equal(getattr(back, f), getattr(small_basis, f))
    assert back.n_samples == small_basis.n_samples
    assert back.dr0_range == small_basis.dr0_range
    write_psfb(tmp_path / "c.psfb", back)
    assert (tmp_path / "c.psfb").read_bytes() == path.read_bytes()


def test_psfb_rejects_bad_files(tmp_path, small_basis):
    path = tmp_path / "b.psfb"
    write_psfb(path, small_basis)
    data = path.read_bytes()
    (tmp_path / "magic.psfb").write_bytes(b"XXXX" + data[4:])
    (tmp_path / "short.psfb").write_bytes(data[:-8])
    with pytest.raises(ValueError, match="magic"):
        read_psfb(tmp_path / "magic.psfb")
    with pytest.raises(ValueError, match="expected"):
        read_psfb(tmp_path / "short.psfb")


def test_prior_estimator(rng):
    est = PsfPrior(dr0=1.0, n_samples=100, n_components=5, seed=2).fit()
    assert est.basis_.n_components == 5
    codes = est.transform(est.basis_.mean_kernel[None] + est.basis_.components[:1])
    assert codes.shape == (1, 5)
    assert codes[0, 0] == pytest.approx(1.0)
    assert est.get_params()["n_components"] == 5
