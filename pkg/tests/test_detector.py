"""Shape contracts, wiring traces, decode/encode, loss, and checkpoint tests."""

import numpy as np
import numpy.testing as npt
import pytest

from sodyolo import nn
from sodyolo.boxes import GroundTruth
from sodyolo.errors import CheckpointError, InvalidArgumentError
from sodyolo.model import (C2fParams, Detector, HEAD_STRIDES, ModelConfig,
                           backbone_forward, batch_loss, c2f, count_params,
                           decode, encode_box, head_forward, load_checkpoint,
                           loss, neck_forward, save_checkpoint, sppf)
from sodyolo.nn import Conv2dLayer
from sodyolo.tensor import Tensor, no_grad


def rng(seed=0):
    return np.random.default_rng(seed)


def toy_cfg(**kw):
    base = dict(input_size=64, num_classes=10, width_per_level=(8, 16, 32, 64),
                neck_channels=16, conf_threshold=0.25)
    base.update(kw)
    return ModelConfig(**base)


def zero_one_dim_params(model: Detector):
    for name, p in model.named_params().items():
        if p.data.ndim == 1:
            p.data[:] = 0.0
    return model


class TestBackbone:
    def test_toy_shapes(self):
        model = Detector(toy_cfg(), seed=0)
        with no_grad():
            pyr = backbone_forward(Tensor(rng().random((3, 64, 64))), model.backbone)
        assert pyr.c2.shape == (8, 16, 16)
        assert pyr.c3.shape == (16, 8, 8)
        assert pyr.c4.shape == (32, 4, 4)
        assert pyr.c5.shape == (64, 2, 2)

    def test_zero_image_zero_biases(self):
        model = zero_one_dim_params(Detector(toy_cfg(), seed=1))
        with no_grad():
            pyr = backbone_forward(Tensor(np.zeros((3, 64, 64))), model.backbone)
        for feat in (pyr.c2, pyr.c3, pyr.c4, pyr.c5):
            npt.assert_array_equal(feat.data, np.zeros(feat.shape))

    def test_wrong_input_shape(self):
        model = Detector(toy_cfg(), seed=2)
        with pytest.raises(InvalidArgumentError):
            model.forward(Tensor(np.zeros((3, 32, 32))))


class TestC2f:
    def test_hand_traced_wiring(self):
        # identity cv1, zeroed bottleneck, cv2 passing through the two halves:
        # the block must reproduce a non-negative input exactly
        params = C2fParams.create(rng(3), 4, 4, depth=1)
        params.cv1.weight.data = np.eye(4).reshape(4, 4, 1, 1)
        params.cv1.bias.data[:] = 0.0
        for conv_a, conv_b in params.bottlenecks:
            conv_a.weight.data[:] = 0.0
            conv_a.bias.data[:] = 0.0
            conv_b.weight.data[:] = 0.0
            conv_b.bias.data[:] = 0.0
        cv2 = np.zeros((4, 6, 1, 1))
        for i in range(4):
            cv2[i, i, 0, 0] = 1.0
        params.cv2.weight.data = cv2
        params.cv2.bias.data[:] = 0.0
        x = rng(4).random((4, 3, 3))  # non-negative, so leaky acts as identity
        with no_grad():
            out = c2f(Tensor(x), params)
        npt.assert_allclose(out.data, x, atol=1e-12)

    def test_zero_propagation(self):
        params = C2fParams.create(rng(5), 4, 6, depth=2)
        params.cv1.bias.data[:] = 0.0
        params.cv2.bias.data[:] = 0.0
        for a, b in params.bottlenecks:
            a.bias.data[:] = 0.0
            b.bias.data[:] = 0.0
        with no_grad():
            out = c2f(Tensor(np.zeros((4, 3, 3))), params)
        npt.assert_array_equal(out.data, np.zeros((6, 3, 3)))

    @pytest.mark.parametrize("depth", [1, 2, 3])
    def test_output_channels_independent_of_depth(self, depth):
        params = C2fParams.create(rng(6), 4, 6, depth=depth)
        with no_grad():
            out = c2f(Tensor(rng(7).random((4, 5, 5))), params)
        assert out.shape == (6, 5, 5)

    def test_too_small_to_split(self):
        with pytest.raises(InvalidArgumentError):
            C2fParams.create(rng(8), 4, 1, depth=1)


class TestSPPF:
    def test_constant_input_constant_output(self):
        from sodyolo.model import SPPFParams
        params = SPPFParams.create(rng(9), 4)
        with no_grad():
            out = sppf(Tensor(np.full((4, 6, 6), 2.0)), params)
        # spatially constant: max pooling of a constant map is the map itself
        for c in range(4):
            assert np.ptp(out.data[c]) < 1e-12
        # value equals the two 1x1 convs applied to the constant by hand
        h = params.cv1.weight.data.shape[0]
        v1 = params.cv1.weight.data.reshape(h, 4) @ np.full(4, 2.0) + params.cv1.bias.data
        v1 = np.where(v1 >= 0, v1, 0.01 * v1)
        v4 = np.concatenate([v1, v1, v1, v1])
        v2 = params.cv2.weight.data.reshape(4, 4 * h) @ v4 + params.cv2.bias.data
        v2 = np.where(v2 >= 0, v2, 0.01 * v2)
        npt.assert_allclose(out.data[:, 0, 0], v2, atol=1e-12)

    @pytest.mark.parametrize("shape", [(4, 3, 3), (4, 7, 5), (4, 2, 9)])
    def test_spatial_shape_preserved(self, shape):
        from sodyolo.model import SPPFParams
        params = SPPFParams.create(rng(10), 4)
        with no_grad():
            out = sppf(Tensor(rng(11).random(shape)), params)
        assert out.shape == (4,) + shape[1:]

    def test_chained_pools_monotone(self):
        x = Tensor(rng(12).normal(size=(3, 8, 8)))
        with no_grad():
            p1 = nn.maxpool2d(x, 5, 1, 2)
            p2 = nn.maxpool2d(p1, 5, 1, 2)
            p3 = nn.maxpool2d(p2, 5, 1, 2)
        assert (p1.data <= p2.data).all()
        assert (p2.data <= p3.data).all()


class TestNeckAndHeads:
    def test_full_forward_shapes_paper_widths(self):
        cfg = ModelConfig(input_size=640, num_classes=10,
                          width_per_level=(32, 64, 128, 256), neck_channels=64)
        model = Detector(cfg, seed=13)
        with no_grad():
            pyr = backbone_forward(Tensor(rng(14).random((3, 640, 640))), model.backbone)
            assert pyr.c2.shape == (32, 160, 160)
            assert pyr.c3.shape == (64, 80, 80)
            assert pyr.c4.shape == (128, 40, 40)
            assert pyr.c5.shape == (256, 20, 20)
            n2, n3, n4, n5 = neck_forward(pyr, model.neck)
            assert n2.shape == (64, 160, 160)
            assert n3.shape == (64, 80, 80)
            assert n4.shape == (128, 40, 40)
            assert n5.shape == (256, 20, 20)
            raw = head_forward([n2, n3, n4, n5], model.heads)
        for level, t in enumerate(raw):
            stride = HEAD_STRIDES[level]
            assert t.shape == (15, 640 // stride, 640 // stride)

    def test_toy_head_levels(self):
        model = Detector(toy_cfg(), seed=15)
        with no_grad():
            raw = model.forward(Tensor(rng(16).random((3, 64, 64))))
        for level, t in enumerate(raw):
            assert t.shape == (15, 64 // HEAD_STRIDES[level], 64 // HEAD_STRIDES[level])

    def test_zero_propagation_through_neck_and_heads(self):
        model = zero_one_dim_params(Detector(toy_cfg(), seed=17))
        with no_grad():
            raw = model.forward(Tensor(np.zeros((3, 64, 64))))
        for t in raw:
            npt.assert_array_equal(t.data, np.zeros(t.shape))

    def test_neck_error_names_stage(self):
        model = Detector(toy_cfg(), seed=18)
        from sodyolo.model import FeaturePyramid
        bad = FeaturePyramid(c2=Tensor(np.zeros((8, 16, 16))),
                             c3=Tensor(np.zeros((16, 8, 8))),
                             c4=Tensor(np.zeros((32, 4, 4))),
                             c5=Tensor(np.zeros((99, 2, 2))))
        with pytest.raises(InvalidArgumentError, match="neck stage td4"):
            neck_forward(bad, model.neck)

    def test_neck_grad_check_sampled(self):
        cfg = ModelConfig(input_size=64, num_classes=2, width_per_level=(4, 4, 8, 8),
                          neck_channels=4)
        model = Detector(cfg, seed=19)

        def f(image):
            pyr = backbone_forward(image, model.backbone)
            feats = neck_forward(pyr, model.neck)
            total = None
            for t in feats:
                s = t.sum()
                total = s if total is None else total + s
            return total

        err = nn.grad_check(f, [Tensor(rng(20).random((3, 64, 64)))],
                            max_checks=80, seed=1)
        assert err < 1e-3

    def test_full_model_grad_check_sampled(self):
        model = Detector(toy_cfg(), seed=21)

        def f(image):
            raw = model.forward(image, training=False)
            total = None
            for t in raw:
                s = t.sum()
                total = s if total is None else total + s
            return total

        err = nn.grad_check(f, [Tensor(rng(22).random((3, 64, 64)))],
                            max_checks=80, seed=2)
        assert err < 1e-3


class TestDecode:
    def test_zero_logit_cell(self):
        cfg = toy_cfg()
        raw = [np.full((15, 64 // s, 64 // s), -20.0) for s in HEAD_STRIDES]
        raw[1][:, 0, 0] = 0.0
        dets = decode(raw, cfg, conf_threshold=0.2)
        assert len(dets) == 1
        d = dets[0]
        assert d.score == pytest.approx(0.25, abs=1e-12)
        assert d.box == pytest.approx((0.0, 0.0, 8.0, 8.0), abs=1e-9)
        cx, cy = (d.box[0] + d.box[2]) / 2, (d.box[1] + d.box[3]) / 2
        assert (cx, cy) == pytest.approx((4.0, 4.0), abs=1e-12)

    def test_conf_above_one_empty(self):
        cfg = toy_cfg(conf_threshold=1.1)
        raw = [np.zeros((15, 64 // s, 64 // s)) for s in HEAD_STRIDES]
        assert decode(raw, cfg) == []

    def test_encode_decode_round_trip(self):
        cfg = toy_cfg()
        gen = rng(23)
        for _ in range(50):
            w = float(gen.uniform(3, 40))
            h = float(gen.uniform(3, 40))
            cx = float(gen.uniform(w / 2 + 1, 64 - w / 2 - 1))
            cy = float(gen.uniform(h / 2 + 1, 64 - h / 2 - 1))
            box = (cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)
            level, ci, cj, t = encode_box(box, cfg)
            raw = [np.full((15, 64 // s, 64 // s), -30.0) for s in HEAD_STRIDES]
            raw[level][0:4, ci, cj] = t
            raw[level][4, ci, cj] = 20.0
            raw[level][5, ci, cj] = 20.0
            dets = decode(raw, cfg, conf_threshold=0.5)
            assert len(dets) == 1
            d = dets[0]
            stride = HEAD_STRIDES[level]
            dcx, dcy = (d.box[0] + d.box[2]) / 2, (d.box[1] + d.box[3]) / 2
            assert abs(dcx - cx) <= 0.5 * stride
            assert abs(dcy - cy) <= 0.5 * stride
            assert abs((d.box[2] - d.box[0]) - w) / w < 1e-6
            assert abs((d.box[3] - d.box[1]) - h) / h < 1e-6

    def test_clipping_keeps_boxes_valid(self):
        cfg = toy_cfg(conf_threshold=0.0)
        raw = [rng(24).normal(size=(15, 64 // s, 64 // s)) * 4 for s in HEAD_STRIDES]
        for d in decode(raw, cfg):
            x1, y1, x2, y2 = d.box
            assert 0 <= x1 < x2 <= 64 and 0 <= y1 < y2 <= 64


class TestLoss:
    def test_no_gt_suppressed_logits_near_zero(self):
        cfg = toy_cfg()
        raw = [Tensor(np.full((15, 64 // s, 64 // s), 0.0)) for s in HEAD_STRIDES]
        for t in raw:
            t.data[4] = -20.0
        total, comps = loss(raw, [], cfg)
        assert comps["total"] < 1e-6

    def test_perfect_prediction(self):
        cfg = toy_cfg()
        box = (20.0, 24.0, 32.0, 36.0)
        g = GroundTruth(box=box, class_id=3)
        level, ci, cj, t = encode_box(box, cfg)
        raw = [Tensor(np.zeros((15, 64 // s, 64 // s))) for s in HEAD_STRIDES]
        for tt in raw:
            tt.data[4] = -25.0
            tt.data[5:] = -25.0
        raw[level].data[0:4, ci, cj] = t
        raw[level].data[4, ci, cj] = 25.0
        raw[level].data[5 + 3, ci, cj] = 25.0
        total, comps = loss(raw, [g], cfg)
        assert comps["iou"] < 1e-9
        assert comps["total"] < 1e-6

    def test_non_positive_gt_rejected(self):
        cfg = toy_cfg()
        raw = [Tensor(np.zeros((15, 64 // s, 64 // s))) for s in HEAD_STRIDES]
        with pytest.raises(InvalidArgumentError):
            loss(raw, [GroundTruth(box=(5.0, 5.0, 5.0, 9.0), class_id=0)], cfg)

    def test_overfitting_one_image_decreases_loss(self):
        cfg = ModelConfig(input_size=32, num_classes=2, width_per_level=(4, 4, 8, 8),
                          neck_channels=4)
        model = Detector(cfg, seed=25)
        image = Tensor(rng(26).random((3, 32, 32)))
        gts = [GroundTruth(box=(8.0, 8.0, 20.0, 22.0), class_id=1)]
        from sodyolo.train import SGD, TrainConfig, lr_schedule
        tcfg = TrainConfig(epochs=200, batch_size=1)
        opt = SGD(model.named_params(), tcfg)
        history = []
        for step in range(200):
            opt.zero_grad()
            raw = model.forward(image, training=True)
            total, comps = loss(raw, gts, cfg)
            total.backward()
            opt.step(lr_schedule(step, 1, tcfg))
            history.append(comps["total"])
        # momentum ripples rule out per-step monotonicity; the trend must be
        # strictly decreasing at the 50-step scale and end far below the start
        windows = [float(np.mean(history[i:i + 50])) for i in range(0, 200, 50)]
        assert all(b < a for a, b in zip(windows, windows[1:]))
        assert history[-1] < 0.25 * history[0]

    def test_batch_and_single_consistency(self):
        cfg = toy_cfg()
        model = Detector(cfg, seed=27)
        img = rng(28).random((3, 64, 64))
        gts = [GroundTruth(box=(10.0, 10.0, 26.0, 26.0), class_id=2)]
        with no_grad():
            raw_single = model.forward(Tensor(img))
            raw_batch = model.forward(Tensor(img[None]))
        _, single = loss(raw_single, gts, cfg)
        _, batched = batch_loss(raw_batch, [gts], cfg)
        for key in single:
            assert single[key] == pytest.approx(batched[key], abs=1e-12)


class TestParamsAndCheckpoint:
    def test_count_single_conv(self):
        layer = Conv2dLayer.create(rng(29), 2, 3, 1)
        assert count_params(layer) == 2 * 3 + 3

    def test_count_invariant_to_values(self):
        model = Detector(toy_cfg(), seed=30)
        before = count_params(model)
        for p in model.named_params().values():
            p.data[:] = 7.0
        assert count_params(model) == before

    def test_empty_container_counts_zero(self):
        assert count_params([]) == 0

    def test_checkpoint_round_trip_bitwise(self, tmp_path):
        model = Detector(toy_cfg(), seed=31)
        # perturb running stats so buffers round-trip too
        from sodyolo.tensor import Tensor as T
        img = T(rng(32).random((1, 3, 64, 64)))
        with no_grad():
            model.forward(img, training=True)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, model)
        clone = load_checkpoint(path)
        for (name, p), (name2, p2) in zip(model.named_params().items(),
                                          clone.named_params().items()):
            assert name == name2
            npt.assert_array_equal(p.data, p2.data)
        for (name, b), (name2, b2) in zip(model.named_buffers().items(),
                                          clone.named_buffers().items()):
            assert name == name2
            npt.assert_array_equal(b, b2)
        probe = T(rng(33).random((3, 64, 64)))
        with no_grad():
            out_a = model.forward(probe)
            out_b = clone.forward(probe)
        for a, b in zip(out_a, out_b):
            npt.assert_array_equal(a.data, b.data)

    def test_checkpoint_bad_magic(self, tmp_path):
        path = tmp_path / "bogus.ckpt"
        path.write_bytes(b"not a checkpoint")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_config_validation(self):
        with pytest.raises(InvalidArgumentError):
            ModelConfig(input_size=65)
        with pytest.raises(InvalidArgumentError):
            ModelConfig(num_classes=0)
        with pytest.raises(InvalidArgumentError):
            ModelConfig(neck_channels=6)
