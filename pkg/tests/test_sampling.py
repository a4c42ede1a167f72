import math

import numpy as np
import pytest

from deformseg.errors import DimensionError
from deformseg.gradcheck import finite_diff_check
from deformseg.rng import Rng
from deformseg.sampling import SampleGrid, sample
from deformseg.tensor import Tensor, tensor_sum


def corners_2x2():
    return Tensor(np.array([[[1.0, 2.0], [3.0, 4.0]]]))


def manual_bilinear(f2d: np.ndarray, y: float, x: float) -> float:
    """Independent 4-corner blend with the zero-padding convention."""
    y0, x0 = math.floor(y), math.floor(x)
    wy, wx = y - y0, x - x0
    total = 0.0
    for dy, dx, w in ((0, 0, (1 - wy) * (1 - wx)), (0, 1, (1 - wy) * wx),
                      (1, 0, wy * (1 - wx)), (1, 1, wy * wx)):
        yy, xx = y0 + dy, x0 + dx
        if 0 <= yy < f2d.shape[0] and 0 <= xx < f2d.shape[1]:
            total += w * f2d[yy, xx]
    return total


class TestBilinearValues:
    def test_exact_grid_point(self):
        out = sample(corners_2x2(), SampleGrid(Tensor(np.array([[0.0, 1.0]]))))
        np.testing.assert_array_equal(out.data, [[2.0]])

    def test_cell_center_is_corner_mean(self):
        out = sample(corners_2x2(), Tensor(np.array([[0.5, 0.5]])))
        np.testing.assert_array_equal(out.data, [[2.5]])

    def test_outside_is_zero(self):
        out = sample(corners_2x2(), Tensor(np.array([[-1.0, -1.0]])))
        np.testing.assert_array_equal(out.data, [[0.0]])

    def test_integer_lattice_reproduces_map_bitwise(self):
        f = Tensor(Rng(1).normal((3, 5, 7)))
        ys, xs = np.meshgrid(np.arange(5), np.arange(7), indexing="ij")
        pos = Tensor(np.stack([ys.ravel(), xs.ravel()], axis=1).astype(np.float64))
        out = sample(f, pos)
        np.testing.assert_array_equal(out.data, f.data.reshape(3, -1))

    def test_matches_manual_four_corner_blend(self):
        f = Tensor(Rng(2).normal((2, 6, 6)))
        rng = Rng(3)
        pts = np.stack([rng.uniform((40,), low=-1.5, high=6.5),
                        rng.uniform((40,), low=-1.5, high=6.5)], axis=1)
        out = sample(f, Tensor(pts))
        for c in range(2):
            expected = [manual_bilinear(f.data[c], y, x) for y, x in pts]
            np.testing.assert_allclose(out.data[c], expected, atol=1e-12)

    def test_linearity_in_map(self):
        rng = Rng(4)
        f = Tensor(rng.normal((2, 5, 5)))
        g = Tensor(rng.normal((2, 5, 5)))
        pos = Tensor(np.stack([rng.uniform((20,), high=4.0),
                               rng.uniform((20,), high=4.0)], axis=1))
        lhs = sample(Tensor(1.7 * f.data - 0.3 * g.data), pos).data
        rhs = 1.7 * sample(f, pos).data - 0.3 * sample(g, pos).data
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_edge_positions_clamp_to_boundary_values(self):
        f = corners_2x2()
        out = sample(f, Tensor(np.array([[1.0, 1.0], [1.0, 0.0]])))
        np.testing.assert_array_equal(out.data, [[4.0, 3.0]])


class TestTrilinear:
    def test_cell_center_is_corner_mean(self):
        f = Tensor(Rng(5).normal((1, 2, 2, 2)))
        out = sample(f, Tensor(np.array([[0.5, 0.5, 0.5]])))
        np.testing.assert_allclose(out.data, [[f.data.mean()]], atol=1e-14)

    def test_exact_grid_point(self):
        f = Tensor(Rng(6).normal((2, 3, 3, 3)))
        out = sample(f, Tensor(np.array([[2.0, 1.0, 0.0]])))
        np.testing.assert_array_equal(out.data[:, 0], f.data[:, 2, 1, 0])

    def test_gradcheck(self):
        f = Tensor(Rng(7).normal((2, 4, 4, 4)), requires_grad=True)
        rng = Rng(8)
        pos = Tensor(np.stack([np.floor(rng.uniform((8,), high=3.0)) + rng.uniform((8,), low=0.05, high=0.95)
                               for _ in range(3)], axis=1), requires_grad=True)
        v = Tensor(rng.normal((2, 8)))
        worst = finite_diff_check(lambda: tensor_sum(sample(f, pos) * v),
                                  {"f": [f], "pos": [pos]}, Rng(9))
        assert max(worst.values()) < 1e-4


class TestGradients:
    def test_gradcheck_map_and_positions(self):
        f = Tensor(Rng(10).normal((3, 6, 6)), requires_grad=True)
        rng = Rng(11)
        cells = np.floor(np.stack([rng.uniform((12,), high=5.0),
                                   rng.uniform((12,), high=5.0)], axis=1))
        fracs = np.stack([rng.uniform((12,), low=0.05, high=0.95),
                          rng.uniform((12,), low=0.05, high=0.95)], axis=1)
        pos = Tensor(cells + fracs, requires_grad=True)
        v = Tensor(rng.normal((3, 12)))
        worst = finite_diff_check(lambda: tensor_sum(sample(f, pos) * v),
                                  {"f": [f], "positions": [pos]}, Rng(12))
        assert max(worst.values()) < 1e-4

    def test_position_gradient_matches_map_slope(self):
        # on a linear ramp, d(sample)/d(row) is the row step everywhere
        ramp = Tensor(np.arange(25, dtype=np.float64).reshape(1, 5, 5))
        pos = Tensor(np.array([[1.3, 2.6], [3.2, 0.4]]), requires_grad=True)
        from deformseg.tensor import Tape, backward
        with Tape() as tape:
            out = tensor_sum(sample(ramp, pos))
            backward(tape, out)
        np.testing.assert_allclose(pos.grad[:, 0], [5.0, 5.0], atol=1e-12)
        np.testing.assert_allclose(pos.grad[:, 1], [1.0, 1.0], atol=1e-12)


class TestValidation:
    def test_rank_mismatch_rejected(self):
        with pytest.raises(DimensionError, match="rank"):
            sample(Tensor(np.zeros((1, 4, 4))), Tensor(np.zeros((3, 3))))

    def test_positions_must_be_2d(self):
        with pytest.raises(DimensionError):
            sample(Tensor(np.zeros((1, 4, 4))), Tensor(np.zeros(4)))
