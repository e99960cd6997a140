"""The four end-to-end system configurations and their training recipes.

``nochannel`` / ``approach1``
    One classifier on the sensed signal. Approach 1 runs the classifier at the
    edge device and sends the label bit over an ideal link, so it behaves
    exactly like the no-channel case.
``approach2``
    Encoder -> power norm -> AWGN -> decoder trained to reconstruct the sensed
    signal (MSE), then a separate classifier trained on the reconstructions.
``toc``
    Encoder -> power norm -> AWGN -> decoder-classifier trained end to end
    with cross-entropy; one complex symbol crosses the channel.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from tcomm import nn
from tcomm.errors import ConfigError, NumericError, ShapeError, TrainingDiverged
from tcomm.nn import Dense, Dropout, GaussianNoise, Network, PowerNorm
from tcomm.rng import RngStreams, make_rng
from tcomm.signal import DIM


class PipelineKind(str, Enum):
    NO_CHANNEL = "nochannel"
    APPROACH1 = "approach1"
    APPROACH2 = "approach2"
    TOC = "toc"

    @classmethod
    def parse(cls, value) -> "PipelineKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigError(f"unknown pipeline {value!r}; expected one of {[k.value for k in cls]}") from None


def classifier_layers(n_in: int = DIM, dropout: float = 0.2) -> list:
    layers = []
    dim = n_in
    for width in (128, 64, 32, 16, 8, 4):
        layers += [Dense(dim, width, "relu"), Dropout(dropout)]
        dim = width
    layers.append(Dense(dim, 2, "softmax"))
    return layers


def approach2_encoder_layers() -> list:
    return [Dense(DIM, 128, "relu"), Dense(128, DIM, "linear"), PowerNorm()]


def approach2_decoder_layers() -> list:
    return [Dense(DIM, 128, "relu"), Dense(128, DIM, "linear")]


def toc_encoder_layers() -> list:
    return [Dense(DIM, 128, "relu"), Dense(128, 64, "tanh"), Dense(64, 2, "linear"), PowerNorm()]


def toc_decoder_layers() -> list:
    return [Dense(2, 32, "relu"), Dense(32, 8, "relu"), Dense(8, 2, "softmax")]


def build(kind) -> dict[str, Network]:
    """Untrained (zero-parameter) networks for ``kind``, keyed by role."""
    kind = PipelineKind.parse(kind)
    if kind in (PipelineKind.NO_CHANNEL, PipelineKind.APPROACH1):
        return {"classifier": Network(classifier_layers())}
    if kind is PipelineKind.APPROACH2:
        return {
            "encoder": Network(approach2_encoder_layers()),
            "decoder": Network(approach2_decoder_layers()),
            "classifier": Network(classifier_layers()),
        }
    return {"encoder": Network(toc_encoder_layers()), "decoder": Network(toc_decoder_layers())}


def channel(snr_c: float) -> Network:
    return Network([GaussianNoise(snr_c)])


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0
    snr_c: float = 10.0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or not self.lr > 0:
            raise ConfigError(f"invalid training config {self}")
        if not np.isfinite(self.snr_c):
            raise ConfigError("snr_c must be finite")


@dataclass
class TrainedPipeline:
    kind: PipelineKind
    nets: dict
    snr_c: float
    config: TrainConfig
    train_history: list = field(default_factory=list)

    def graph(self) -> list[Network]:
        """Networks in inference order, channel included."""
        if self.kind in (PipelineKind.NO_CHANNEL, PipelineKind.APPROACH1):
            return [self.nets["classifier"]]
        ch = channel(self.snr_c)
        if self.kind is PipelineKind.APPROACH2:
            return [self.nets["encoder"], ch, self.nets["decoder"], self.nets["classifier"]]
        return [self.nets["encoder"], ch, self.nets["decoder"]]

    @property
    def has_channel(self) -> bool:
        return self.kind in (PipelineKind.APPROACH2, PipelineKind.TOC)


def one_hot(labels: np.ndarray, n_classes: int = 2) -> np.ndarray:
    out = np.zeros((len(labels), n_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def _fit(chain, trainable, x, target, loss_kind, cfg, streams, history, stage, transform=None):
    """Minibatch Adam over the nets listed in ``trainable`` (indices into chain)."""
    states = {k: nn.AdamState.for_params(chain[k].params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, epsilon=cfg.epsilon) for k in trainable}
    n = len(x)
    for epoch in range(cfg.epochs):
        order = streams["shuffle"].permutation(n)
        total = 0.0
        try:
            for start in range(0, n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                xb = x[idx] if transform is None else transform(x[idx])
                out, caches = nn.forward_chain(chain, xb, "train", streams)
                value, g = nn.loss(loss_kind, out, target[idx])
                grads, _ = nn.backward_chain(chain, caches, g, need_input_grad=False)
                for k in trainable:
                    nn.adam_step(states[k], chain[k].params, grads[k])
                total += value * len(idx)
        except NumericError as exc:
            raise TrainingDiverged(f"{stage}: {exc}", epoch=epoch) from exc
        mean = total / n
        if not np.isfinite(mean):
            raise TrainingDiverged(f"{stage}: loss became non-finite", epoch=epoch)
        history.append(mean)


def init_nets(kind, seed: int) -> dict[str, Network]:
    nets = build(kind)
    for k, (name, net) in enumerate(sorted(nets.items())):
        net.init_params(make_rng(seed, "init", k))
        net.seed = seed
    return nets


def train(kind, train_x: np.ndarray, train_y: np.ndarray, cfg: TrainConfig) -> TrainedPipeline:
    kind = PipelineKind.parse(kind)
    train_x = np.asarray(train_x, dtype=np.float64)
    train_y = np.asarray(train_y, dtype=np.int64)
    if len(train_x) == 0:
        raise ShapeError("empty training set")
    if train_x.ndim != 2 or train_x.shape[1] != DIM or len(train_y) != len(train_x):
        raise ShapeError(f"expected ({len(train_y)}, {DIM}) samples, got {train_x.shape}")
    nets = init_nets(kind, cfg.seed)
    tp = TrainedPipeline(kind, nets, cfg.snr_c, cfg)
    target = one_hot(train_y)
    if kind in (PipelineKind.NO_CHANNEL, PipelineKind.APPROACH1):
        _fit([nets["classifier"]], [0], train_x, target, "ce", cfg, RngStreams(cfg.seed, 0), tp.train_history, "classifier")
    elif kind is PipelineKind.TOC:
        chain = tp.graph()
        _fit(chain, [0, 2], train_x, target, "ce", cfg, RngStreams(cfg.seed, 0), tp.train_history, "toc")
    else:
        chain = [nets["encoder"], channel(cfg.snr_c), nets["decoder"]]
        _fit(chain, [0, 2], train_x, train_x, "mse", cfg, RngStreams(cfg.seed, 0), tp.train_history, "autoencoder")
        streams = RngStreams(cfg.seed, 1)

        def reconstruct(xb):
            return nn.forward_chain(chain, xb, "eval", streams)[0]

        _fit([nets["classifier"]], [0], train_x, target, "ce", cfg, streams, tp.train_history, "classifier", reconstruct)
    return tp


@dataclass
class EvalReport:
    accuracy: float
    confusion: np.ndarray  # rows: true label, cols: predicted
    n: int

    def per_label_accuracy(self, label: int) -> float:
        row = self.confusion[label]
        return float(row[label] / row.sum()) if row.sum() else float("nan")


def predict_proba(tp: TrainedPipeline, samples: np.ndarray, rng=None) -> np.ndarray:
    if rng is None and tp.has_channel:
        raise ConfigError("a channel-noise stream is required for pipelines with a channel")
    return nn.forward_chain(tp.graph(), samples, "eval", rng)[0]


def predict(tp: TrainedPipeline, samples: np.ndarray, rng=None) -> np.ndarray:
    # argmax picks the lowest index on ties
    return np.argmax(predict_proba(tp, samples, rng), axis=1)


def report(labels: np.ndarray, predictions: np.ndarray, n_classes: int = 2) -> EvalReport:
    labels = np.asarray(labels, dtype=np.int64)
    predictions = np.asarray(predictions, dtype=np.int64)
    if labels.shape != predictions.shape or labels.size == 0:
        raise ShapeError("labels and predictions must be equal-length and nonempty")
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (labels, predictions), 1)
    return EvalReport(float(np.trace(confusion) / labels.size), confusion, int(labels.size))


def evaluate(tp: TrainedPipeline, samples: np.ndarray, labels: np.ndarray, rng=None) -> EvalReport:
    """Eval-mode accuracy; channel noise drawn from ``rng`` (stream ``eval_channel``)."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[1] != DIM or len(samples) != len(labels):
        raise ShapeError(f"expected ({len(labels)}, {DIM}) samples, got {samples.shape}")
    if rng is None:
        rng = make_rng(tp.config.seed, "eval_channel")
    elif isinstance(rng, RngStreams):
        rng = rng["eval_channel"]
    return report(labels, predict(tp, samples, rng))


def encode_transmit(tp: TrainedPipeline, samples: np.ndarray) -> np.ndarray:
    """Power-normalized channel symbols produced by the edge encoder."""
    if not tp.has_channel:
        raise ConfigError(f"{tp.kind.value} pipeline has no transmitter")
    single = np.ndim(samples) == 1
    out, _ = nn.forward(tp.nets["encoder"], np.atleast_2d(samples), "eval")
    return out[0] if single else out


# ---------------------------------------------------------------- persistence


def save_pipeline(tp: TrainedPipeline, directory) -> Path:
    """Weight files per net plus ``manifest.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, net in tp.nets.items():
        nn.save_weights(net, directory / f"{name}.tcnn")
    manifest = {
        "format": 1,
        "kind": tp.kind.value,
        "snr_c": tp.snr_c,
        "config": asdict(tp.config),
        "nets": sorted(tp.nets),
        "train_history": tp.train_history,
    }
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load_pipeline(directory) -> TrainedPipeline:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    if manifest.get("format") != 1:
        raise ConfigError(f"unsupported manifest format {manifest.get('format')!r}")
    nets = {name: nn.load_weights(directory / f"{name}.tcnn") for name in manifest["nets"]}
    kind = PipelineKind.parse(manifest["kind"])
    expected = build(kind)
    for name, net in expected.items():
        if name not in nets or nets[name].layers != net.layers:
            raise ShapeError(f"{name} weights do not match the {kind.value} architecture")
    return TrainedPipeline(kind, nets, manifest["snr_c"], TrainConfig(**manifest["config"]), manifest["train_history"])
