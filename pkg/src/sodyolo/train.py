"""Training loop (SGD + warmup/cosine schedule) and dataset evaluation.

Training is deterministic for a fixed seed: model init, shuffling, and the
optimizer are all driven by explicitly seeded generators, and all math is
64-bit. Weight decay is decoupled from the loss and applied only to
parameters of rank >= 2 (never to biases or norm affine terms).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .boxes import Detection, GroundTruth
from .data import DatasetIndex, iter_samples, letterbox, load_index
from .errors import InvalidArgumentError, TrainingDivergedError
from .evaluation import EvalReport, evaluate_detections
from .model import Detector, batch_loss, decode, load_checkpoint
from .postprocess import SuppressionConfig, suppress
from .tensor import Tensor, no_grad


@dataclass
class TrainConfig:
    lr_peak: float = 0.005
    warmup_epochs: int = 3
    momentum: float = 0.937
    weight_decay: float = 0.0005
    epochs: int = 40
    batch_size: int = 8
    final_lr_factor: float = 0.01
    warmup_start_factor: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.lr_peak <= 0:
            raise InvalidArgumentError(f"lr_peak must be > 0, got {self.lr_peak}")
        if not 0 <= self.warmup_epochs <= self.epochs:
            raise InvalidArgumentError(
                f"warmup_epochs must be in [0, epochs], got {self.warmup_epochs}")
        if self.batch_size < 1:
            raise InvalidArgumentError(f"batch_size must be >= 1, got {self.batch_size}")


def lr_schedule(step: int, steps_per_epoch: int, cfg: TrainConfig) -> float:
    """Linear warmup to the peak, then cosine decay to peak * final_lr_factor."""
    if step < 0:
        raise InvalidArgumentError(f"step must be >= 0, got {step}")
    warm = cfg.warmup_epochs * steps_per_epoch
    total = cfg.epochs * steps_per_epoch
    start = cfg.lr_peak * cfg.warmup_start_factor
    if step < warm:
        return start + (cfg.lr_peak - start) * (step / warm)
    if total <= warm:
        return cfg.lr_peak
    t = min((step - warm) / (total - warm), 1.0)
    floor = cfg.lr_peak * cfg.final_lr_factor
    return floor + (cfg.lr_peak - floor) * 0.5 * (1.0 + math.cos(math.pi * t))


class SGD:
    """Momentum SGD with decoupled weight decay on rank >= 2 parameters."""

    def __init__(self, params: dict[str, Tensor], cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.velocity = {name: np.zeros_like(p.data) for name, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float) -> None:
        for name, p in self.params.items():
            if p.grad is None:
                continue
            v = self.cfg.momentum * self.velocity[name] + p.grad
            self.velocity[name] = v
            if p.data.ndim >= 2 and self.cfg.weight_decay > 0:
                p.data = p.data * (1.0 - lr * self.cfg.weight_decay)
            p.data = p.data - lr * v


def _prepare_samples(model: Detector, index: DatasetIndex):
    """Letterbox every image to the model input size; boxes follow."""
    samples = []
    for stem, image, gts in iter_samples(index):
        boxed, tf = letterbox(image, model.cfg.input_size)
        chw = boxed.astype(np.float64).transpose(2, 0, 1) / 255.0
        mapped = [GroundTruth(box=tf.apply_box(g.box), class_id=g.class_id,
                              ignore=g.ignore) for g in gts]
        samples.append((stem, chw, mapped))
    return samples


def train(model: Detector, dataset, cfg: TrainConfig,
          log: Callable[[str], None] | None = None,
          checkpoint_dir=None, checkpoint_every: int = 0) -> Detector:
    """Overfit/fit the model on a dataset; returns the mutated model."""
    from .model import save_checkpoint

    index = dataset if isinstance(dataset, DatasetIndex) else load_index(dataset)
    samples = _prepare_samples(model, index)
    if not samples:
        raise InvalidArgumentError("train: dataset is empty")

    params = model.named_params()
    opt = SGD(params, cfg)
    shuffle_rng = np.random.Generator(np.random.PCG64(cfg.seed))
    n = len(samples)
    steps_per_epoch = max(1, math.ceil(n / cfg.batch_size))
    step = 0
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        sums = {"obj": 0.0, "cls": 0.0, "iou": 0.0, "total": 0.0}
        for b0 in range(0, n, cfg.batch_size):
            batch = [samples[i] for i in order[b0:b0 + cfg.batch_size]]
            images = Tensor(np.stack([s[1] for s in batch]))
            gts_batch = [s[2] for s in batch]
            opt.zero_grad()
            raw = model.forward(images, training=True)
            total, comps = batch_loss(raw, gts_batch, model.cfg)
            if not math.isfinite(comps["total"]):
                raise TrainingDivergedError(step, comps)
            total.backward()
            opt.step(lr_schedule(step, steps_per_epoch, cfg))
            step += 1
            for key in sums:
                sums[key] += comps[key]
        if log is not None:
            means = {k: v / steps_per_epoch for k, v in sums.items()}
            log(f"epoch {epoch + 1}/{cfg.epochs} "
                f"loss {means['total']:.4f} (obj {means['obj']:.4f} "
                f"cls {means['cls']:.4f} iou {means['iou']:.4f}) "
                f"lr {lr_schedule(step - 1, steps_per_epoch, cfg):.6f}")
        if checkpoint_dir and checkpoint_every and (epoch + 1) % checkpoint_every == 0:
            save_checkpoint(Path(checkpoint_dir) / f"epoch_{epoch + 1:04d}.ckpt", model)
    return model


# ---------------------------------------------------------------------------
# inference / evaluation

DetectorFn = Callable[[str, np.ndarray, Sequence[GroundTruth]], list[Detection]]


def detect_image(model: Detector, image: np.ndarray,
                 conf_threshold: float | None = None) -> list[Detection]:
    """Run the model on one image; boxes come back in original pixel coords."""
    boxed, tf = letterbox(image, model.cfg.input_size)
    chw = boxed.astype(np.float64).transpose(2, 0, 1) / 255.0
    with no_grad():
        raw = model.forward(Tensor(chw), training=False)
    dets = decode(raw, model.cfg, conf_threshold)
    h, w = image.shape[:2]
    out = []
    for d in dets:
        x1, y1, x2, y2 = tf.invert_box(d.box)
        x1, x2 = max(0.0, min(x1, w)), max(0.0, min(x2, w))
        y1, y2 = max(0.0, min(y1, h)), max(0.0, min(y2, h))
        if x2 > x1 and y2 > y1:
            out.append(Detection(box=(x1, y1, x2, y2), class_id=d.class_id, score=d.score))
    return out


def run_detection(model, dataset, suppression: SuppressionConfig,
                  conf_threshold: float | None = None) -> dict[str, list[Detection]]:
    """Detect + suppress over a dataset; keyed by image stem."""
    if isinstance(model, (str, Path)):
        model = load_checkpoint(model)
    index = dataset if isinstance(dataset, DatasetIndex) else load_index(dataset)
    out: dict[str, list[Detection]] = {}
    for stem, image, _gts in iter_samples(index):
        out[stem] = suppress(detect_image(model, image, conf_threshold), suppression)
    return out


def evaluate(model, dataset, suppression: SuppressionConfig,
             conf_threshold: float | None = None, operating_score: float = 0.25,
             detector_fn: DetectorFn | None = None,
             num_classes: int | None = None) -> EvalReport:
    """Inference -> decode -> suppress -> metrics over a dataset.

    `detector_fn`, when given, replaces the model as the source of raw
    detections (still subject to suppression) — the oracle-injection hook.
    """
    if isinstance(model, (str, Path)):
        model = load_checkpoint(model)
    index = dataset if isinstance(dataset, DatasetIndex) else load_index(dataset)
    if model is not None:
        if model.cfg.num_classes != len(index.class_names):
            raise InvalidArgumentError(
                f"evaluate: checkpoint has {model.cfg.num_classes} classes, "
                f"dataset has {len(index.class_names)}")
        k = model.cfg.num_classes
    else:
        k = num_classes if num_classes is not None else len(index.class_names)

    dets_per_image, gts_per_image = [], []
    for stem, image, gts in iter_samples(index):
        if detector_fn is not None:
            raw_dets = detector_fn(stem, image, gts)
        else:
            raw_dets = detect_image(model, image, conf_threshold)
        dets_per_image.append(suppress(raw_dets, suppression))
        gts_per_image.append(gts)
    return evaluate_detections(dets_per_image, gts_per_image, k,
                               class_names=list(index.class_names),
                               operating_score=operating_score,
                               suppression_mode=suppression.mode)


# ---------------------------------------------------------------------------
# detection dump format (the contract between `detect` and standalone `eval`)


def detections_to_lines(dets_by_image: dict[str, list[Detection]]) -> str:
    lines = []
    for stem in sorted(dets_by_image):
        for d in dets_by_image[stem]:
            x1, y1, x2, y2 = d.box
            lines.append(f"{stem},{d.class_id},{d.score:.8f},"
                         f"{x1:.3f},{y1:.3f},{x2:.3f},{y2:.3f}")
    return "\n".join(lines) + ("\n" if lines else "")


def parse_detection_lines(text: str) -> dict[str, list[Detection]]:
    out: dict[str, list[Detection]] = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        fields = line.split(",")
        if len(fields) != 7:
            raise InvalidArgumentError(
                f"detections line {line_no}: expected 7 fields, got {len(fields)}")
        stem, class_id, score, x1, y1, x2, y2 = fields
        out.setdefault(stem, []).append(Detection(
            box=(float(x1), float(y1), float(x2), float(y2)),
            class_id=int(class_id), score=float(score)))
    return out


def evaluate_from_file(dets_path, dataset, operating_score: float = 0.25) -> EvalReport:
    """Match a stored detection dump against a dataset's annotations."""
    index = dataset if isinstance(dataset, DatasetIndex) else load_index(dataset)
    dets_by_image = parse_detection_lines(Path(dets_path).read_text())
    dets_per_image, gts_per_image = [], []
    for img_path, ann_path in index.entries:
        from .data import parse_visdrone
        stem = Path(img_path).stem
        dets_per_image.append(dets_by_image.get(stem, []))
        gts_per_image.append(parse_visdrone(Path(ann_path).read_text()))
    return evaluate_detections(dets_per_image, gts_per_image, len(index.class_names),
                               class_names=list(index.class_names),
                               operating_score=operating_score)
