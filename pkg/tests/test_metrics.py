import math

import numpy as np
import pytest

from dect.geometry import ImageGrid
from dect.metrics import (CloudStat, clouds_from_tsv, clouds_to_tsv, image_quality, material_clouds,
                          psnr, ssim)
from dect.phantom import build_suitcase_phantom
from dect.physics import ImagePair


def ssim_oracle(x, y, L, win=8, k1=0.01, k2=0.03):
    """Literal per-window SSIM, averaged over non-overlapping windows."""
    vals = []
    for r in range(0, x.shape[0] - win + 1, win):
        for c in range(0, x.shape[1] - win + 1, win):
            a = x[r:r + win, c:c + win].ravel()
            b = y[r:r + win, c:c + win].ravel()
            n = a.size
            ma, mb = sum(a) / n, sum(b) / n
            va = sum((v - ma) ** 2 for v in a) / n
            vb = sum((v - mb) ** 2 for v in b) / n
            cov = sum((u - ma) * (v - mb) for u, v in zip(a, b)) / n
            c1, c2 = (k1 * L) ** 2, (k2 * L) ** 2
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
    return sum(vals) / len(vals)


def test_psnr_examples():
    ref = np.random.default_rng(0).uniform(size=(10, 10))
    assert psnr(ref + 0.1, ref, 1.0) == pytest.approx(20.0, abs=1e-12)
    assert psnr(ref, ref, 1.0) == math.inf
    assert psnr(ref + 0.03, ref, 2.0) - psnr(ref + 0.03, ref, 1.0) == pytest.approx(20 * math.log10(2), abs=1e-12)
    with pytest.raises(ValueError):
        psnr(ref, ref[:5], 1.0)


def test_ssim_identity_and_sign():
    rng = np.random.default_rng(1)
    x = rng.uniform(size=(16, 16))
    assert ssim(x, x, 1.0) == 1.0
    z = rng.normal(size=(16, 16))
    z -= z.reshape(2, 8, 2, 8).mean(axis=(1, 3)).repeat(8, 0).repeat(8, 1)
    assert ssim(-z, z, 1.0) < 0
    with pytest.raises(ValueError):
        ssim(x, x[:, :8], 1.0)
    with pytest.raises(ValueError):
        ssim(x[:4, :4], x[:4, :4], 1.0)


def test_ssim_formula_oracle():
    rng = np.random.default_rng(2)
    for _ in range(5):
        x, y = rng.uniform(size=(2, 16, 16))
        assert abs(ssim(x, y, 1.0) - ssim_oracle(x, y, 1.0)) <= 1e-12
    x, y = rng.uniform(size=(2, 21, 19))  # partial tiles dropped
    assert abs(ssim(x, y, 0.7) - ssim_oracle(x, y, 0.7)) <= 1e-12


def test_clouds_piecewise_constant_phantom():
    truth, scene = build_suitcase_phantom(ImageGrid(64, 64, 0.625))
    for s in material_clouds(truth, scene.masks):
        assert s.std_c == 0 and s.std_p == 0


def test_clouds_hand_arithmetic_population_std():
    grid = ImageGrid(2, 1)
    pair = ImagePair(grid, np.array([[0.1, 0.3]]), np.array([[1.0, 1.0]]))
    (s,) = material_clouds(pair, {"obj": np.array([[True, True]])}, {"obj": "water"})
    assert s.mean_c == pytest.approx(0.2) and s.std_c == pytest.approx(0.1)
    assert s.material == "water" and s.n == 2


def test_clouds_permutation_invariant_and_errors():
    rng = np.random.default_rng(3)
    grid = ImageGrid(6, 6)
    c, p = rng.uniform(size=(2, 6, 6))
    mask = rng.uniform(size=(6, 6)) > 0.4
    a = material_clouds(ImagePair(grid, c, p), {"m": mask})[0]
    perm = rng.permutation(np.flatnonzero(mask))
    c2, p2 = c.copy(), p.copy()
    c2.flat[np.flatnonzero(mask)] = c.flat[perm]
    p2.flat[np.flatnonzero(mask)] = p.flat[perm]
    b = material_clouds(ImagePair(grid, c2, p2), {"m": mask})[0]
    assert a.mean_c == pytest.approx(b.mean_c, rel=1e-14) and a.std_p == pytest.approx(b.std_p, rel=1e-12)
    with pytest.raises(ValueError):
        material_clouds(ImagePair(grid, c, p), {"empty": np.zeros((6, 6), bool)})
    with pytest.raises(ValueError):
        material_clouds(ImagePair(grid, c, p), {"small": np.ones((3, 3), bool)})


def test_clouds_tsv_round_trip():
    stats = [CloudStat("water", "water", 0.17, 0.01, 4700.0, 250.5, 120),
             CloudStat("neo", "neoprene", 0.19, 0.02, 31000.0, 900.25, 80)]
    assert clouds_from_tsv(clouds_to_tsv(stats)) == stats


def test_image_quality_keys():
    truth, _ = build_suitcase_phantom(ImageGrid(64, 64, 0.625))
    q = image_quality(truth, truth)
    assert set(q) == {"psnr_c", "psnr_p", "ssim_c", "ssim_p"}
    assert q["ssim_c"] == 1.0 and q["psnr_p"] == math.inf
