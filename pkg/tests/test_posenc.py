import numpy as np
import pytest

from deformseg.errors import DimensionError
from deformseg.gradcheck import run_checks
from deformseg.modules import Scope, to_grid, to_tokens
from deformseg.posenc import CpeBaseline, DeformDepthwiseBranch, MsDepe
from deformseg.rng import Rng
from deformseg.tensor import Tensor


def tokens(seed, n, d):
    return Tensor(Rng(seed).normal((n, d)))


class TestMsDepe:
    def test_zero_weights_is_exact_identity(self):
        layer = MsDepe(Scope(1).child("pe"), 4)
        for branch in (layer.branch3, layer.branch5):
            branch.kernel.data = np.zeros_like(branch.kernel.data)
            branch.bias.data = np.zeros_like(branch.bias.data)
        x = tokens(2, 36, 4)
        np.testing.assert_array_equal(layer(x, (6, 6)).data, x.data)

    @pytest.mark.parametrize("spatial,d", [((4, 4), 2), ((8, 8), 4), ((3, 5), 6)])
    def test_output_shape_equals_input_shape(self, spatial, d):
        layer = MsDepe(Scope(3).child("pe"), d)
        n = spatial[0] * spatial[1]
        assert layer(tokens(4, n, d), spatial).shape == (n, d)

    def test_additive_decomposition(self):
        layer = MsDepe(Scope(5).child("pe"), 4)
        layer.branch3.offset_b.data = np.array([0.2, -0.1])
        x = tokens(6, 64, 4)
        enc = layer.encoding(x, (8, 8))
        out = layer(x, (8, 8))
        np.testing.assert_allclose(out.data - x.data, enc.data, atol=1e-15)

    def test_encoding_is_sum_of_branches(self):
        layer = MsDepe(Scope(7).child("pe"), 3)
        x = tokens(8, 16, 3)
        grid = to_grid(x, (4, 4))
        expected = layer.branch3(grid).data + layer.branch5(grid).data
        got = to_grid(layer.encoding(x, (4, 4)), (4, 4)).data
        np.testing.assert_allclose(got, expected, atol=1e-15)

    def test_token_count_mismatch_rejected(self):
        layer = MsDepe(Scope(9).child("pe"), 4)
        with pytest.raises(DimensionError):
            layer(tokens(10, 15, 4), (4, 4))

    def test_gradcheck_all_groups(self):
        results = run_checks(["ms_depe"], seed=0, trials=3)
        assert all(r.passed for r in results)
        assert set(results[0].worst) == {"input", "kernels", "offset_conv"}


class TestDeformDepthwiseBranch:
    def test_zero_offsets_equal_dense_depthwise(self):
        from deformseg.tensor import depthwise_conv2d
        branch = DeformDepthwiseBranch(Scope(11).child("b"), 3, 5)
        branch.kernel.data = Rng(12).normal((3, 5, 5))
        g = Tensor(Rng(13).normal((3, 7, 7)))
        dense = depthwise_conv2d(g, branch.kernel, padding=2)
        np.testing.assert_allclose(branch(g).data, dense.data, atol=1e-12)

    def test_offsets_shift_the_response(self):
        # constant offset (1, 0) equals sampling the dense response one row down
        branch = DeformDepthwiseBranch(Scope(14).child("b"), 1, 3)
        branch.kernel.data = Rng(15).normal((1, 3, 3))
        branch.offset_b.data = np.array([1.0, 0.0])
        g = Tensor(Rng(16).normal((1, 8, 8)))
        shifted = branch(g).data
        branch.offset_b.data = np.array([0.0, 0.0])
        rigid = branch(g).data
        np.testing.assert_allclose(shifted[0, :-1], rigid[0, 1:], atol=1e-12)


class TestCpeBaseline:
    def test_zero_weights_is_exact_identity(self):
        layer = CpeBaseline(Scope(17).child("cpe"), 4)
        layer.kernel.data = np.zeros_like(layer.kernel.data)
        x = tokens(18, 16, 4)
        np.testing.assert_array_equal(layer(x, (4, 4)).data, x.data)

    def test_equals_zeroed_msdepe_kernel3_branch(self):
        cpe = CpeBaseline(Scope(19).child("cpe"), 4)
        ms = MsDepe(Scope(20).child("pe"), 4)
        ms.branch3.kernel.data = cpe.kernel.data.copy()
        ms.branch3.bias.data = cpe.bias.data.copy()
        ms.branch5.kernel.data = np.zeros_like(ms.branch5.kernel.data)
        ms.branch5.bias.data = np.zeros_like(ms.branch5.bias.data)
        x = tokens(21, 64, 4)
        np.testing.assert_allclose(ms(x, (8, 8)).data, cpe(x, (8, 8)).data, atol=1e-12)

    def test_translation_covariance_on_interior(self):
        layer = CpeBaseline(Scope(22).child("cpe"), 2)
        base = np.zeros((2, 10, 10))
        base[:, 2:6, 2:6] = Rng(23).normal((2, 4, 4))
        shifted = np.roll(base, (1, 2), axis=(1, 2))
        d_base = layer(to_tokens(Tensor(base)), (10, 10)).data - base.reshape(2, -1).T
        d_shift = layer(to_tokens(Tensor(shifted)), (10, 10)).data - shifted.reshape(2, -1).T
        d_base_grid = d_base.T.reshape(2, 10, 10)
        d_shift_grid = d_shift.T.reshape(2, 10, 10)
        np.testing.assert_allclose(d_shift_grid[:, 2:8, 3:9],
                                   np.roll(d_base_grid, (1, 2), axis=(1, 2))[:, 2:8, 3:9],
                                   atol=1e-12)

    def test_gradcheck(self):
        results = run_checks(["cpe"], seed=0, trials=3)
        assert all(r.passed for r in results)
