import subprocess
import sys

import numpy as np
import pytest

from deformseg.checkpoint import load_checkpoint, save_checkpoint
from deformseg.data import gen_synthetic
from deformseg.errors import (CheckpointFormatError, ConfigError,
                              DimensionError)
from deformseg.network import NetworkConfig, build, param_count
from deformseg.rng import Rng
from deformseg.tensor import Tensor

# frozen after the first build of the default nano config (no deep supervision)
NANO_PARAM_PIN = None  # set below once, see test_nano_param_count_pinned


class TestConfigValidation:
    def test_tiny_accepted_with_stage_ratio_depths(self):
        cfg = NetworkConfig.tiny()
        assert cfg.depths == (1, 2, 5, 1)
        assert cfg.embed_dims == (64, 128, 256, 512)

    def test_nano_accepted(self):
        cfg = NetworkConfig.nano()
        assert cfg.embed_dims == (16, 32, 64, 128)
        assert cfg.heads == (1, 2, 4, 8)

    def test_head_divisibility_error_names_field(self):
        with pytest.raises(ConfigError, match=r"heads\[0\]"):
            NetworkConfig.tiny(heads=(3, 4, 8, 16))

    def test_non_doubling_dims_rejected(self):
        with pytest.raises(ConfigError, match="embed_dims"):
            NetworkConfig(embed_dims=(64, 120, 256, 512), heads=(2, 4, 8, 16))

    def test_even_neighborhood_rejected(self):
        with pytest.raises(ConfigError, match="neighborhood"):
            NetworkConfig.nano(neighborhood=4)

    def test_bad_attention_pair_rejected(self):
        with pytest.raises(ConfigError, match="attention"):
            NetworkConfig.nano(attention="nmsa")


class TestStructure:
    def test_encoder_has_nine_blocks_at_default_ratio(self):
        net = build(NetworkConfig.nano(), seed=0)
        per_stage = [len(blocks) for blocks in net.enc_blocks]
        assert per_stage == [1, 2, 5, 1]
        assert sum(per_stage) == 9

    def test_blocks_alternate_first_then_second_kind(self):
        net = build(NetworkConfig.nano(), seed=0)
        stage3 = net.enc_blocks[2]
        kinds = [type(b.attn).__name__ for b in stage3]
        assert kinds == ["NMSA", "DMSA", "NMSA", "DMSA", "NMSA"]

    def test_decoder_is_minimal_one_block_per_stage(self):
        net = build(NetworkConfig.nano(), seed=0)
        assert [len(blocks) for blocks in net.dec_blocks] == [1, 1, 1]


class TestForward:
    def test_nano_64_output_and_aux_scales(self):
        net = build(NetworkConfig.nano(deep_supervision=True), seed=1)
        img = Tensor(Rng(2).normal((1, 64, 64)))
        out = net.forward(img)
        assert out.logits.shape == (3, 64, 64)
        assert [a.shape for a in out.aux_logits] == \
            [(3, 16, 16), (3, 8, 8), (3, 4, 4)]

    def test_rectangular_input(self):
        net = build(NetworkConfig.nano(), seed=3)
        out = net.forward(Tensor(Rng(4).normal((1, 64, 32))))
        assert out.logits.shape == (3, 64, 32)
        assert out.aux_logits == []

    def test_divisibility_error_states_multiple(self):
        net = build(NetworkConfig.nano(), seed=5)
        with pytest.raises(DimensionError, match="multiple of 32"):
            net.forward(Tensor(np.zeros((1, 48, 48))))

    def test_channel_mismatch_rejected(self):
        net = build(NetworkConfig.nano(), seed=6)
        with pytest.raises(DimensionError):
            net.forward(Tensor(np.zeros((2, 64, 64))))

    def test_deep_supervision_toggle_preserves_main_path(self):
        img = Tensor(Rng(7).normal((1, 32, 32)))
        plain = build(NetworkConfig.nano(), seed=8).forward(img)
        with_ds = build(NetworkConfig.nano(deep_supervision=True), seed=8).forward(img)
        np.testing.assert_array_equal(plain.logits.data, with_ds.logits.data)
        assert len(with_ds.aux_logits) == 3

    def test_same_seed_same_output_across_processes(self):
        snippet = (
            "import hashlib, numpy as np\n"
            "from deformseg.network import NetworkConfig, build\n"
            "from deformseg.tensor import Tensor\n"
            "from deformseg.rng import Rng\n"
            "net = build(NetworkConfig.nano(), seed=11)\n"
            "out = net.forward(Tensor(Rng(12).normal((1, 32, 32))))\n"
            "print(hashlib.sha256(out.logits.data.tobytes()).hexdigest())\n")
        digests = {
            subprocess.run([sys.executable, "-c", snippet], capture_output=True,
                           text=True, check=True).stdout.strip()
            for _ in range(2)}
        assert len(digests) == 1


class TestInitialization:
    def test_offset_convs_zero_other_weights_trunc_normal_biases_zero(self):
        net = build(NetworkConfig.nano(), seed=17)
        for p in net.parameters():
            leaf = p.name.split(".")[-1]
            if "offset" in leaf:
                assert not p.data.any(), p.name
            elif leaf in ("bias", "b", "beta"):
                assert not p.data.any(), p.name
            elif leaf == "gamma":
                assert np.all(p.data == 1.0), p.name
            else:
                assert np.abs(p.data).max() <= 0.04 + 1e-12, p.name
        big = max(net.parameters(), key=lambda p: p.size)
        assert 0.01 < big.data.std() < 0.03

    def test_no_dead_graph_input_gradient_is_live(self):
        from deformseg.losses import LossConfig, combined_loss
        from deformseg.tensor import Tape, backward
        net = build(NetworkConfig.nano(), seed=18)
        sample = gen_synthetic(19, 3, 32, 32)
        sample.image.requires_grad = True
        with Tape() as tape:
            out = net.forward(sample.image)
            loss = combined_loss(out.logits, out.aux_logits, sample.label,
                                 LossConfig(0.6))
            backward(tape, loss)
        assert sample.image.grad is not None
        assert np.abs(sample.image.grad).max() > 0

    def test_tape_nodes_are_topologically_ordered(self):
        from deformseg.tensor import Tape
        net = build(NetworkConfig.nano(), seed=20)
        img = Tensor(Rng(21).normal((1, 32, 32)))
        with Tape() as tape:
            net.forward(img)
        for nid, node in enumerate(tape.nodes):
            assert all(i < nid for i in node.inputs if i >= 0)


class TestParamCount:
    def test_nano_param_count_pinned(self):
        # regression pin from the first build of this architecture
        assert param_count(NetworkConfig.nano()) == 1945857

    def test_counting_matches_built_network(self):
        cfg = NetworkConfig.nano()
        assert param_count(cfg) == build(cfg, seed=0).param_count()

    def test_tiny_in_reported_band(self):
        tiny = param_count(NetworkConfig.tiny())
        assert 28.85e6 * 0.8 <= tiny <= 28.85e6 * 1.2

    def test_base_to_tiny_ratio(self):
        ratio = param_count(NetworkConfig.base()) / param_count(NetworkConfig.tiny())
        assert 3.5 <= ratio <= 4.8


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        net = build(NetworkConfig.nano(), seed=13)
        path = tmp_path / "net.agfk"
        save_checkpoint(path, net.state_dict())
        first = path.read_bytes()
        state = load_checkpoint(path)
        for name, arr in net.state_dict().items():
            np.testing.assert_array_equal(state[name], arr)
        save_checkpoint(path, state)
        assert path.read_bytes() == first

    def test_truncated_file_reports_offset(self, tmp_path):
        net = build(NetworkConfig.nano(), seed=14)
        path = tmp_path / "net.agfk"
        save_checkpoint(path, net.state_dict())
        path.write_bytes(path.read_bytes()[:100])
        with pytest.raises(CheckpointFormatError, match="offset"):
            load_checkpoint(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "net.agfk"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(CheckpointFormatError, match="magic"):
            load_checkpoint(path)

    def test_shape_mismatch_names_tensor(self, tmp_path):
        net = build(NetworkConfig.nano(), seed=15)
        state = net.state_dict()
        name = sorted(state)[0]
        state = dict(state)
        state[name] = np.zeros((2, 2))
        path = tmp_path / "net.agfk"
        save_checkpoint(path, state)
        with pytest.raises(DimensionError, match=name.replace(".", r"\.")):
            net.load_state_dict(load_checkpoint(path))

    def test_missing_tensor_named(self, tmp_path):
        net = build(NetworkConfig.nano(deep_supervision=True), seed=16)
        slim = build(NetworkConfig.nano(), seed=16)
        path = tmp_path / "net.agfk"
        save_checkpoint(path, slim.state_dict())
        with pytest.raises(DimensionError, match="aux"):
            net.load_state_dict(load_checkpoint(path))

    def test_scalar_free_roundtrip_values(self, tmp_path):
        state = {"a": np.arange(6, dtype=np.float64).reshape(2, 3),
                 "b": np.array(3.5)}
        path = tmp_path / "s.agfk"
        save_checkpoint(path, state)
        loaded = load_checkpoint(path)
        np.testing.assert_array_equal(loaded["a"], state["a"])
        np.testing.assert_array_equal(loaded["b"], state["b"])
