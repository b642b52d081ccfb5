"""Toy training loop: STE-binarized net, Adam, line-delimited log."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field

import numpy as np

from .data import load_npz_dataset, synthetic_dataset
from .layers import (
    BpieBlock,
    ConvBNSign,
    DenseHead,
    maxpool_backward,
    maxpool_forward,
    softmax_cross_entropy,
)

__all__ = ["ToyTrainConfig", "ToyNet", "TrainingDiverged", "TrainResult", "train_toy"]


@dataclass
class ToyTrainConfig:
    epochs: int = 25
    batch_size: int = 32
    lr: float = 0.01
    lr_decay: float = 0.95  # multiplicative per-epoch schedule
    seed: int = 0
    planes: int = 4
    multiplier: int = 4
    conv_maps: int = 16
    classes: int = 2
    preset: str = "two-conv-blocks"
    train_size: int = 256
    test_size: int = 100
    image_hw: int = 8
    dataset: str | None = None  # optional .npz with images/labels


class TrainingDiverged(RuntimeError):
    def __init__(self, log):
        super().__init__("training loss became non-finite")
        self.log = log


class ToyNet:
    """Preset: bit-plane input block + two binary conv blocks + dense head."""

    def __init__(self, rng: np.random.Generator, cfg: ToyTrainConfig, channels: int = 3):
        if cfg.preset != "two-conv-blocks":
            raise ValueError(f"unknown architecture preset {cfg.preset!r}")
        hw = cfg.image_hw
        self.input_dims = (hw, hw, channels)
        self.bpie = BpieBlock(rng, channels, cfg.planes, cfg.multiplier)
        cn = channels * cfg.multiplier
        self.conv1 = ConvBNSign(rng, cn, cfg.conv_maps)
        self.conv2 = ConvBNSign(rng, cfg.conv_maps, cfg.conv_maps)
        self.head = DenseHead(rng, (hw // 4) * (hw // 4) * cfg.conv_maps, cfg.classes)

    def forward(self, img: np.ndarray, train: bool = False) -> np.ndarray:
        x = self.bpie.forward(img, train)
        x = self.conv1.forward(x, train)
        x, p1 = maxpool_forward(x)
        x = self.conv2.forward(x, train)
        x, p2 = maxpool_forward(x)
        if train:
            self._pools = (p1, p2)
        return self.head.forward(x, train)

    def backward(self, dlogits: np.ndarray) -> None:
        p1, p2 = self._pools
        dx = self.head.backward(dlogits)
        dx = maxpool_backward(dx, p2)
        dx = self.conv2.backward(dx)
        dx = maxpool_backward(dx, p1)
        dx = self.conv1.backward(dx)
        self.bpie.backward(dx)

    def probs(self, img: np.ndarray) -> np.ndarray:
        """Eval-mode class probabilities (float softmax over the head)."""
        logits = self.forward(img, train=False)
        z = logits - logits.max(axis=1, keepdims=True)
        ez = np.exp(z)
        return ez / ez.sum(axis=1, keepdims=True)

    def accuracy(self, img: np.ndarray, labels: np.ndarray) -> float:
        return float((self.forward(img).argmax(axis=1) == labels).mean())

    def params(self):
        out = []
        for prefix, block in [
            ("bpie", self.bpie),
            ("conv1", self.conv1),
            ("conv2", self.conv2),
            ("head", self.head),
        ]:
            for name, obj, attr, gattr in block.params():
                out.append((f"{prefix}.{name}", obj, attr, gattr))
        return out


class Adam:
    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(getattr(obj, attr)) for _, obj, attr, _ in params]
        self.v = [np.zeros_like(getattr(obj, attr)) for _, obj, attr, _ in params]
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        for i, (name, obj, attr, gattr) in enumerate(self.params):
            g = getattr(obj, gattr)
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g * g
            mhat = self.m[i] / (1 - self.beta1**self.t)
            vhat = self.v[i] / (1 - self.beta2**self.t)
            p = getattr(obj, attr) - lr * mhat / (np.sqrt(vhat) + self.eps)
            if attr == "w":
                # keep latent weights inside the STE window
                p = np.clip(p, -1.0, 1.0)
            setattr(obj, attr, p)


@dataclass
class TrainResult:
    net: ToyNet
    log: list[dict] = field(default_factory=list)
    train_images: np.ndarray | None = None
    train_labels: np.ndarray | None = None
    test_images: np.ndarray | None = None
    test_labels: np.ndarray | None = None


def train_toy(cfg: ToyTrainConfig) -> TrainResult:
    """Train the toy net; deterministic for a fixed config/seed.

    The returned log holds one record per epoch: epoch, loss, accuracy
    (eval-mode on the training set).
    """
    rng = np.random.default_rng(cfg.seed)
    if cfg.dataset is not None:
        images, labels = load_npz_dataset(cfg.dataset)
    else:
        images, labels = synthetic_dataset(
            rng, cfg.train_size + cfg.test_size, cfg.image_hw, cfg.image_hw
        )
    tr_i, tr_l = images[: cfg.train_size], labels[: cfg.train_size]
    te_i, te_l = images[cfg.train_size :], labels[cfg.train_size :]

    net = ToyNet(rng, cfg, channels=images.shape[3])
    opt = Adam(net.params())
    log: list[dict] = []
    n = tr_i.shape[0]
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        lr = cfg.lr * cfg.lr_decay**epoch
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            logits = net.forward(tr_i[idx], train=True)
            loss, dlogits, _ = softmax_cross_entropy(logits, tr_l[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(log)
            net.backward(dlogits)
            opt.step(lr)
            losses.append(loss)
        record = {
            "epoch": epoch,
            "loss": float(np.mean(losses)),
            "accuracy": net.accuracy(tr_i, tr_l),
        }
        log.append(record)
    return TrainResult(net, log, tr_i, tr_l, te_i, te_l)


def write_log(log: list[dict], path) -> None:
    """Line-delimited JSON records (epoch, loss, accuracy)."""
    with open(path, "w") as fh:
        for record in log:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="bpbn-train",
        description="toy STE training + export to the engine model format",
    )
    ap.add_argument("--epochs", type=int, default=25)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--planes", type=int, default=4)
    ap.add_argument("--multiplier", type=int, default=4)
    ap.add_argument("--dataset", default=None, help=".npz with images/labels")
    ap.add_argument("--out", required=True, help="model output path (.bpbn)")
    ap.add_argument("--log", default=None, help="training log path (.jsonl)")
    args = ap.parse_args(argv)

    cfg = ToyTrainConfig(
        epochs=args.epochs, seed=args.seed, planes=args.planes,
        multiplier=args.multiplier, dataset=args.dataset,
    )
    try:
        result = train_toy(cfg)
    except TrainingDiverged as e:
        for record in e.log:
            print(json.dumps(record, sort_keys=True), file=sys.stderr)
        print("error: training diverged", file=sys.stderr)
        return 1
    for record in result.log:
        print(json.dumps(record, sort_keys=True))
    if args.log:
        write_log(result.log, args.log)

    from .export import export_model

    export_model(result.net, args.out)
    final = result.log[-1]
    print(f"trained to {final['accuracy']:.1%} train accuracy; wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
