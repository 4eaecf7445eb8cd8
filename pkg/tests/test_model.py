import numpy as np
import pytest

from vlfat import autodiff as ad
from vlfat.autodiff import Tensor
from vlfat.encoder import EncoderConfig
from vlfat.errors import ConfigError, CorruptFileError
from vlfat.model import ModelConfig, VolumeModel, load_checkpoint, predict, save_checkpoint
from vlfat.rng import RngStream

from helpers import assert_grad_matches

TOY_ENC = EncoderConfig(image_size=(32, 32), patch_size=8, embed_dim=16, num_blocks=2, num_heads=4)


def config_for(mode, **kw):
    base = dict(encoder=TOY_ENC, aggregator=mode, num_classes=4, agg_blocks=2, agg_heads=4)
    if mode == "vlfat":
        base["schedule"] = (4, 6, 8, 12)
    else:
        base["schedule"] = None
        base["train_length"] = 8
    base.update(kw)
    return ModelConfig(**base)


ALL_MODES = ("vlfat", "fat", "nope", "sinpe", "avgpool", "maxpool", "conv1d")


class TestConfig:
    def test_schedule_only_for_vlfat(self):
        with pytest.raises(ConfigError):
            ModelConfig(encoder=TOY_ENC, aggregator="fat", schedule=(4, 8), train_length=None)
        with pytest.raises(ConfigError):
            ModelConfig(encoder=TOY_ENC, aggregator="vlfat", schedule=None)

    def test_fixed_length_required_otherwise(self):
        with pytest.raises(ConfigError):
            ModelConfig(encoder=TOY_ENC, aggregator="avgpool", schedule=None, train_length=None)

    def test_pe_base_length(self):
        assert config_for("vlfat").pe_base_length == 12
        assert config_for("fat").pe_base_length == 8
        assert config_for("avgpool").pe_base_length is None

    def test_roundtrip_dict(self):
        for mode in ALL_MODES:
            cfg = config_for(mode)
            assert ModelConfig.from_dict(cfg.to_dict()) == cfg


class TestForward:
    def test_logit_shape(self):
        model = VolumeModel(config_for("vlfat"), RngStream(0, 0))
        out = model.forward_volume(RngStream(1, 0).uniform((5, 32, 32)))
        assert out.shape == (4,)

    def test_every_mode_accepts_any_length(self):
        for mode in ALL_MODES:
            model = VolumeModel(config_for(mode), RngStream(0, 0))
            for n in (1, 3, 17):
                out = model.forward_volume(RngStream(2, n).uniform((n, 32, 32)))
                assert out.shape == (4,)

    def test_avgpool_permutation_invariance(self):
        model = VolumeModel(config_for("avgpool"), RngStream(0, 0))
        vol = RngStream(3, 0).uniform((6, 32, 32))
        perm = RngStream(3, 1).permutation(6)
        a = model.forward_volume(vol).data
        b = model.forward_volume(vol[perm]).data
        assert np.max(np.abs(a - b)) <= 1e-9

    def test_batch_matches_per_volume(self):
        model = VolumeModel(config_for("fat"), RngStream(0, 0))
        batch = RngStream(3, 2).uniform((3, 8, 32, 32))
        batched = model.forward_batch(batch).data
        for i in range(3):
            single = model.forward_volume(batch[i]).data
            assert np.allclose(batched[i], single, atol=1e-12)

    def test_scores_are_probabilities(self):
        model = VolumeModel(config_for("sinpe"), RngStream(0, 0))
        probs = model.scores(RngStream(3, 3).uniform((4, 32, 32)))
        assert abs(probs.sum() - 1.0) < 1e-12
        assert np.all(probs >= 0)

    def test_end_to_end_gradient(self):
        enc = EncoderConfig(image_size=(8, 8), patch_size=4, embed_dim=8,
                            num_blocks=1, num_heads=2, mlp_ratio=2.0)
        cfg = ModelConfig(encoder=enc, aggregator="vlfat", num_classes=3,
                          agg_blocks=1, agg_heads=2, agg_mlp_ratio=2.0, schedule=(2, 4))
        model = VolumeModel(cfg, RngStream(9, 0))
        vol = RngStream(9, 1).uniform((3, 8, 8))
        proj = RngStream(9, 2).normal((3,))

        def fn(_):
            return ad.reduce_sum(ad.mul(model.forward_volume(vol), Tensor(proj)))

        for target in (model.aggregator.pe_bank.table, model.head.weight,
                       model.encoder.cls_token):
            assert_grad_matches(fn, [target])


class TestPredict:
    def test_argmax(self):
        assert predict(np.array([0.1, 2.0, -1.0])) == 1

    def test_tie_breaks_low(self):
        assert predict(np.array([1.0, 1.0, 1.0])) == 0

    def test_shift_invariance(self):
        logits = np.array([0.3, -0.2, 0.9, 0.1])
        assert predict(logits) == predict(logits + 123.0)


class TestParamCount:
    @pytest.mark.parametrize("mode", ALL_MODES)
    def test_closed_form_matches(self, mode):
        cfg = config_for(mode)
        model = VolumeModel(cfg, RngStream(0, 0))
        assert model.num_params() == cfg.param_count()


class TestCheckpoint:
    def test_bit_exact_roundtrip(self, tmp_path):
        for mode in ("vlfat", "conv1d", "maxpool"):
            model = VolumeModel(config_for(mode), RngStream(4, 0))
            path = tmp_path / f"{mode}.ckpt"
            save_checkpoint(path, model, meta={"best_epoch": 3, "val_bacc": 0.75})
            loaded, meta = load_checkpoint(path)
            assert meta == {"best_epoch": 3, "val_bacc": 0.75}
            for (na, pa), (nb, pb) in zip(
                model.named_parameters(), loaded.named_parameters()
            ):
                assert na == nb
                assert np.array_equal(pa.data, pb.data)
            vol = RngStream(4, 1).uniform((5, 32, 32))
            assert np.array_equal(
                model.forward_volume(vol).data, loaded.forward_volume(vol).data
            )

    def test_truncated_blob_rejected(self, tmp_path):
        model = VolumeModel(config_for("fat"), RngStream(4, 0))
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, model)
        raw = path.read_bytes()
        path.write_bytes(raw[:-16])
        with pytest.raises(CorruptFileError):
            load_checkpoint(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(CorruptFileError):
            load_checkpoint(path)

    def test_header_documents_pe_base_length(self, tmp_path):
        import json
        import struct

        model = VolumeModel(config_for("vlfat"), RngStream(4, 0))
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, model)
        raw = path.read_bytes()
        (header_len,) = struct.unpack_from("<Q", raw, 4)
        header = json.loads(raw[12 : 12 + header_len])
        assert header["pe_base_length"] == 12
        offsets = [p["offset"] for p in header["params"]]
        assert offsets == sorted(offsets) and offsets[0] == 0
