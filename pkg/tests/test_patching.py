import itertools
import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from cardioalign.numerics import ConfigurationError, DimensionError
from cardioalign.patching import (GridGeometry, MaskPlan, PatchSize, build_positional_embedding,
                                  masked_count, patch_extract, sample_mask, sinusoid, token_coords,
                                  token_project, unpatchify)


class TestPatchExtract:
    """Patch grids and their inverse."""

    def test_paper_grid_count(self):
        planes = np.zeros((9, 5, 128, 128), dtype=np.float32)
        grid = patch_extract(planes, PatchSize(8, 8, 5))
        assert grid.geometry.per_plane == 256
        assert grid.patches.shape == (2304, 320)

    def test_patch_equals_plane(self):
        planes = np.arange(5 * 8 * 8, dtype=np.float32).reshape(1, 5, 8, 8)
        grid = patch_extract(planes, PatchSize(8, 8, 5))
        np.testing.assert_array_equal(grid.patches[0], planes.ravel())

    @given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 3), st.integers(1, 3),
           st.integers(0, 2 ** 31 - 1))
    def test_round_trip(self, P, gt, gy, gx, seed):
        p = PatchSize(4, 2, 3)
        x = np.random.default_rng(seed).random((2, P, gt * p.t, gy * p.y, gx * p.x))
        grid = patch_extract(x, p)
        np.testing.assert_array_equal(unpatchify(grid.patches, grid.geometry), x)

    def test_torch_round_trip(self):
        x = torch.randn(2, 3, 5, 16, 16)
        grid = patch_extract(x, PatchSize())
        assert torch.equal(unpatchify(grid.patches, grid.geometry), x)

    def test_indivisible_names_axis(self):
        with pytest.raises(ConfigurationError, match="y=12"):
            patch_extract(np.zeros((1, 5, 12, 16)), PatchSize())

    def test_single_patch_lands_in_place(self):
        p = PatchSize(4, 4, 5)
        geo = GridGeometry(3, 10, 8, 12, p)
        coords = token_coords(geo, [0, 0, 1])
        patches = np.zeros((geo.total, p.volume))
        k = 29
        patches[k] = 1.0
        planes = unpatchify(patches, geo)
        x, y, t, plane, _ = coords[k]
        block = planes[plane, t * p.t:(t + 1) * p.t, y * p.y:(y + 1) * p.y, x * p.x:(x + 1) * p.x]
        np.testing.assert_array_equal(block, 1.0)
        assert planes.sum() == p.volume

    def test_unpatchify_zero(self):
        geo = GridGeometry(2, 5, 8, 8, PatchSize())
        assert not unpatchify(np.zeros((geo.total, 320)), geo).any()

    def test_unpatchify_count_mismatch(self):
        geo = GridGeometry(2, 5, 8, 8, PatchSize())
        with pytest.raises(DimensionError):
            unpatchify(np.zeros((3, 320)), geo)


class TestTokenProject:
    def _kernel(self, dim=6, seed=0):
        g = torch.Generator().manual_seed(seed)
        return torch.randn(dim, 1, 5, 8, 8, generator=g), torch.randn(dim, generator=g)

    def test_zero_input_gives_bias(self):
        k, b = self._kernel()
        tok = token_project(torch.zeros(1, 2, 5, 16, 16), k, b, PatchSize())
        np.testing.assert_array_equal(tok.numpy(), b.expand(1, 8, 6).numpy())

    def test_linear_in_pixels(self):
        k, b = self._kernel()
        x = torch.rand(1, 2, 5, 16, 16)
        t1 = token_project(x, k, b, PatchSize()) - b
        t2 = token_project(2 * x, k, b, PatchSize()) - b
        np.testing.assert_allclose(t2.numpy(), 2 * t1.numpy(), rtol=1e-5, atol=1e-5)

    def test_matches_dense_matmul(self):
        k, b = self._kernel()
        x = torch.rand(2, 3, 5, 16, 24)
        tok = token_project(x, k, b, PatchSize())
        dense = patch_extract(x, PatchSize()).patches @ k.reshape(6, -1).T + b
        assert float((tok - dense).abs().max()) < 1e-5

    def test_gradient_reaches_kernel(self):
        k, b = self._kernel()
        k.requires_grad_(True)
        token_project(torch.rand(1, 1, 5, 8, 8), k, b, PatchSize()).sum().backward()
        assert k.grad is not None and k.grad.abs().sum() > 0

    def test_kernel_mismatch(self):
        with pytest.raises(DimensionError):
            token_project(torch.zeros(1, 1, 5, 8, 8), torch.zeros(4, 1, 5, 4, 4), None, PatchSize())


class TestPositionalEmbedding:
    """Sinusoids per axis plus a view indicator channel."""

    def test_origin_channels(self):
        pe = build_positional_embedding(np.zeros((1, 5), dtype=int), 65)
        c = 16
        for axis in range(4):
            chunk = pe[0, axis * c:(axis + 1) * c]
            np.testing.assert_array_equal(chunk[0::2], 0.0)
            np.testing.assert_array_equal(chunk[1::2], 1.0)

    def test_first_frequency_at_pos_one(self):
        pe = build_positional_embedding(np.array([[1, 0, 0, 0, 0]]), 65)
        np.testing.assert_allclose(pe[0, :2], [0.841471, 0.540302], atol=1e-6)

    def test_against_high_precision(self):
        from decimal import Decimal, getcontext

        getcontext().prec = 40

        def dsin_cos(x):
            # Taylor series with 40 significant digits
            x = Decimal(x)
            s, c, term_s, term_c = Decimal(0), Decimal(0), x, Decimal(1)
            for n in range(60):
                s += term_s
                c += term_c
                term_s *= -x * x / ((2 * n + 2) * (2 * n + 3))
                term_c *= -x * x / ((2 * n + 1) * (2 * n + 2))
            return s, c

        dim = 33
        coords = np.array([[3, 7, 1, 5, 1], [0, 2, 9, 4, 0]])
        pe = build_positional_embedding(coords, dim)
        c = (dim - 1) // 4
        for row, coord in zip(pe, coords):
            for axis in range(4):
                for i in range(c // 2):
                    freq = Decimal(10000) ** (-Decimal(2 * i) / Decimal(dim - 1))
                    s, co = dsin_cos(Decimal(int(coord[axis])) * freq)
                    assert abs(row[axis * c + 2 * i] - float(s)) < 1e-6
                    assert abs(row[axis * c + 2 * i + 1] - float(co)) < 1e-6

    def test_indicator_channel(self):
        geo = GridGeometry(9, 5, 16, 16, PatchSize())
        coords = token_coords(geo, [0] * 6 + [1] * 3)
        pe = build_positional_embedding(coords, 64)
        assert set(np.unique(pe[:, -1])) == {0.0, 1.0}
        np.testing.assert_array_equal(pe[:, -1], coords[:, 4])
        assert (pe[coords[:, 3] < 6, -1] == 0).all() and (pe[coords[:, 3] >= 6, -1] == 1).all()

    def test_remainder_channels_zero(self):
        pe = build_positional_embedding(np.random.default_rng(0).integers(0, 9, (20, 5)), 64)
        # (64 - 1) // 4 = 15 channels per axis: channels 60..62 unused
        np.testing.assert_array_equal(pe[:, 60:63], 0.0)

    def test_sinusoid_range(self):
        v = sinusoid(np.arange(100), 16, 64)
        assert v.min() >= -1 and v.max() <= 1

    def test_distinct_coordinates_distinct_rows(self):
        grid = np.array(list(itertools.product(range(4), range(4), range(2), range(2))))
        coords = np.concatenate([grid, (grid[:, 3:4] >= 1).astype(int)], axis=1)
        pe = build_positional_embedding(coords, 64)
        diffs = np.abs(pe[:, None, :] - pe[None, :, :]).max(-1)
        np.fill_diagonal(diffs, np.inf)
        assert diffs.min() > 1e-6

    def test_token_coordinates_unique(self):
        geo = GridGeometry(9, 5, 16, 16, PatchSize())
        coords = token_coords(geo, [0] * 6 + [1] * 3)
        assert len({tuple(c) for c in coords}) == geo.total

    def test_dim_too_small(self):
        with pytest.raises(ConfigurationError):
            build_positional_embedding(np.zeros((1, 5)), 8)


class TestMasking:
    """Random masks with exact floor arithmetic."""

    def test_zero_ratio(self):
        plan = sample_mask(50, 0, seed=0)
        assert len(plan.masked) == 0 and len(plan.visible) == 50

    def test_paper_scale(self):
        plan = sample_mask(2304, 70, seed=0)
        assert len(plan.masked) == 1612
        assert len(plan.visible) == 692

    def test_small(self):
        assert len(sample_mask(10, 70, seed=1).masked) == 7

    def test_hundred_random_instances(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            L = int(rng.integers(1, 5000))
            q = float(rng.uniform(0, 99.99))
            plan = sample_mask(L, q, seed=int(rng.integers(1 << 30)))
            assert len(plan.masked) == math.floor(q * L / 100 + 1e-9)
            both = np.concatenate([plan.visible, plan.masked])
            assert len(np.unique(both)) == L and both.min() == 0 and both.max() == L - 1

    @given(st.integers(1, 3000), st.integers(0, 99))
    def test_integer_ratio_count_exact(self, L, q):
        assert masked_count(L, q) == (q * L) // 100

    def test_seeded(self):
        a, b = sample_mask(100, 50, seed=3), sample_mask(100, 50, seed=3)
        np.testing.assert_array_equal(a.masked, b.masked)
        assert not np.array_equal(a.masked, sample_mask(100, 50, seed=4).masked)

    def test_ratio_out_of_range(self):
        with pytest.raises(ConfigurationError):
            sample_mask(10, 100)

    def test_full_plan(self):
        plan = MaskPlan.full(12)
        assert plan.total == 12 and len(plan.masked) == 0
