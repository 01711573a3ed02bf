import numpy as np
import pytest

from ffkit.baselines import diffusion_fill, empty_fill, nearest_fill
from ffkit.maskgen import MaskGenParams, generate_mask
from ffkit.scene import GridMeta, Scene, new_scene
from ffkit.synthetic import room_scenes

import oracles


def masked_scene(tsdf, mask, color=None):
    tsdf = np.asarray(tsdf, np.float32)
    color = np.zeros(tsdf.shape + (3,), np.uint8) if color is None else color
    return Scene(GridMeta(tsdf.shape), np.where(mask, 3.0, tsdf), np.where(mask[..., None], 0, color), mask, ~mask)


def ramp(dims=(48, 8, 8)):
    x = np.indices(dims)[0]
    return (0.1 * (x - 24)).astype(np.float32)


@pytest.mark.parametrize("width", [5, 11, 21])
def test_diffusion_recovers_linear_ramp(width):
    t = ramp()
    x = np.indices(t.shape)[0]
    mask = (x >= 10) & (x < 10 + width)
    out = diffusion_fill(masked_scene(t, mask))
    assert np.abs(out.tsdf - t).max() <= 1e-3


def test_diffusion_ramp_in_3d_box():
    dims = (20, 20, 20)
    i, j, k = np.indices(dims)
    t = (0.05 * i - 0.08 * j + 0.03 * k - 0.2).astype(np.float32)
    mask = np.zeros(dims, bool)
    mask[4:16, 5:15, 3:17] = True
    out = diffusion_fill(masked_scene(t, mask))
    assert np.abs(out.tsdf - t).max() <= 1e-3


def test_diffusion_constant_boundary():
    t = np.full((10, 10, 10), 0.5, np.float32)
    mask = np.zeros(t.shape, bool)
    mask[3:7, 3:7, 3:7] = True
    out = diffusion_fill(masked_scene(t, mask), tol=1e-4)
    assert np.abs(out.tsdf[mask] - 0.5).max() <= 1e-4
    assert out.known.all() and not out.mask.any()


def test_no_masked_voxels_identity(room):
    assert diffusion_fill(room).equals(room)
    assert nearest_fill(room).equals(room)


def test_no_known_voxels_errors():
    s = new_scene(GridMeta((4, 4, 4)))
    with pytest.raises(ValueError):
        diffusion_fill(s)
    with pytest.raises(ValueError):
        nearest_fill(s)
    with pytest.raises(ValueError):
        diffusion_fill(s.replace(known=np.ones((4, 4, 4), bool)), tol=0)


def test_non_convergence_flagged():
    t = ramp()
    mask = np.zeros(t.shape, bool)
    mask[10:30] = True
    s = masked_scene(t, mask)
    s = s.replace(tsdf=np.where(mask, 3.0, s.tsdf))
    x = np.indices(t.shape)[0]
    color = np.zeros(t.shape + (3,), np.uint8)
    color[..., 0] = np.where(mask, 0, (x * 5).astype(np.uint8))
    # max_iters=1 cannot certify convergence unless the first sweep is already still
    out, info = diffusion_fill(s.replace(color=color), tol=1e-300, max_iters=1, return_info=True)
    assert info["iterations"] == 1 and info["converged"] is False
    assert out.known.all()


@pytest.fixture(scope="module")
def masked_rooms():
    scenes = room_scenes(3, seed=40, dims=(32, 32, 48))
    return [generate_mask(s, MaskGenParams(diameter=8, total_step=40, seed=i))[0] for i, s in enumerate(scenes)]


@pytest.mark.parametrize("fill", [diffusion_fill, nearest_fill])
def test_preserves_known_bit_exact(masked_rooms, fill):
    for m in masked_rooms:
        out = fill(m)
        k = m.known
        assert np.array_equal(out.tsdf[k].view(np.uint32), m.tsdf[k].view(np.uint32))
        assert np.array_equal(out.color[k], m.color[k])
        assert out.known[m.mask].all() and not out.mask.any()


@pytest.mark.parametrize("fill", [diffusion_fill, nearest_fill])
def test_idempotent(masked_rooms, fill):
    for m in masked_rooms:
        once = fill(m)
        assert fill(once).equals(once)


def test_diffusion_maximum_principle(masked_rooms):
    for m in masked_rooms:
        out = diffusion_fill(m)
        f = m.mask
        kt = m.tsdf[m.known]
        assert out.tsdf[f].min() >= kt.min() and out.tsdf[f].max() <= kt.max()
        for c in range(3):
            kc = m.color[..., c][m.known]
            assert out.color[..., c][f].min() >= kc.min() and out.color[..., c][f].max() <= kc.max()


def test_nearest_single_source():
    t = np.full((5, 5, 5), 3.0, np.float32)
    known = np.zeros(t.shape, bool)
    known[2, 2, 2] = True
    t[2, 2, 2] = -0.7
    color = np.zeros(t.shape + (3,), np.uint8)
    color[2, 2, 2] = (9, 8, 7)
    mask = np.zeros(t.shape, bool)
    mask[2, 2, 3] = True
    s = Scene(GridMeta(t.shape), t, color, mask, known)
    out = nearest_fill(s)
    assert out.tsdf[2, 2, 3] == np.float32(-0.7) and tuple(out.color[2, 2, 3]) == (9, 8, 7)


def test_nearest_two_half_spaces_brute_force():
    dims = (16, 6, 6)
    x = np.indices(dims)[0]
    t = np.where(x < 8, -2.0, 1.5).astype(np.float32)
    mask = (x >= 4) & (x < 13)
    s = masked_scene(t, mask)
    out = nearest_fill(s)
    for v in np.argwhere(mask):
        cands = oracles.nearest_known_candidates(s.known, v)
        values = {float(s.tsdf[tuple(c)]) for c in cands}
        assert float(out.tsdf[tuple(v)]) in values
        if len(values) == 1:
            assert float(out.tsdf[tuple(v)]) == values.pop()


def test_nearest_random_matches_brute_force(masked_rooms):
    m = masked_rooms[0]
    out = nearest_fill(m)
    rng = np.random.default_rng(0)
    idx = np.argwhere(m.mask)
    for v in idx[rng.choice(len(idx), 200, replace=False)]:
        cands = oracles.nearest_known_candidates(m.known, v)
        assert any(out.tsdf[tuple(v)] == m.tsdf[tuple(c)] and np.array_equal(out.color[tuple(v)], m.color[tuple(c)])
                   for c in cands)


def test_empty_fill():
    t = ramp((10, 4, 4))
    mask = np.zeros(t.shape, bool)
    mask[3:6] = True
    out = empty_fill(masked_scene(t, mask))
    assert np.all(out.tsdf[mask] == 3.0) and out.known.all() and not out.mask.any()
