"""Backdoor (phase-shift trigger) and evasion (FGSM / Gaussian) attacks.

Both attacks act on the edge device's input, i.e. the sensed I/Q payload.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tcomm import nn
from tcomm.errors import ConfigError, ShapeError
from tcomm.pipelines import TrainedPipeline, one_hot, predict
from tcomm.rng import make_rng
from tcomm.signal import BPSK, QPSK, apply_phase


@dataclass(frozen=True)
class BackdoorConfig:
    victim: int = BPSK
    target: int = QPSK
    theta: float = np.pi / 5
    tau: float = 0.2
    seed: int = 0
    # "victim": tau is a fraction of the victim-label training samples
    # "all": tau is a fraction of all training samples
    denominator: str = "victim"

    def __post_init__(self):
        if self.victim == self.target:
            raise ConfigError("victim and target labels must differ")
        if not 0.0 < self.tau < 1.0:
            raise ConfigError(f"tau must lie in (0, 1), got {self.tau}")
        if self.denominator not in ("victim", "all"):
            raise ConfigError(f"denominator must be 'victim' or 'all', got {self.denominator!r}")


@dataclass(frozen=True)
class EvasionConfig:
    mode: str = "targeted"  # or "non_targeted"
    pnr_db: float = 0.0
    perturber: str = "fgsm"  # or "gaussian"
    target: int = QPSK
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("targeted", "non_targeted"):
            raise ConfigError(f"unknown evasion mode {self.mode!r}")
        if self.perturber not in ("fgsm", "gaussian"):
            raise ConfigError(f"unknown perturber {self.perturber!r}")
        if not np.isfinite(self.pnr_db):
            raise ConfigError("pnr_db must be finite")

    @property
    def victim(self) -> int:
        return 1 - self.target


@dataclass
class BackdoorReport:
    acc_poisoned_victim: float
    acc_clean_victim: float
    acc_clean_target: float

    def as_tuple(self):
        return (self.acc_poisoned_victim, self.acc_clean_victim, self.acc_clean_target)


# ---------------------------------------------------------------- backdoor


def poison_count(train_y: np.ndarray, cfg: BackdoorConfig) -> int:
    n_victim = int(np.sum(train_y == cfg.victim))
    base = n_victim if cfg.denominator == "victim" else len(train_y)
    return min(int(np.floor(cfg.tau * base)), n_victim)


def poison_dataset(ds, cfg: BackdoorConfig):
    """Rotate a random subset of victim training samples and relabel them.

    Returns ``(poisoned dataset, boolean mask over the training set)``; the
    test split is left untouched.
    """
    victims = np.flatnonzero(ds.train_y == cfg.victim)
    if victims.size == 0:
        raise ConfigError("training set holds no victim-label samples")
    count = poison_count(ds.train_y, cfg)
    if count == 0:
        raise ConfigError(f"tau={cfg.tau} selects no samples")
    chosen = np.sort(make_rng(cfg.seed, "poison").choice(victims, size=count, replace=False))
    train_x = ds.train_x.copy()
    train_y = ds.train_y.copy()
    train_x[chosen] = apply_phase(train_x[chosen], cfg.theta)
    train_y[chosen] = cfg.target
    mask = np.zeros(len(train_y), dtype=bool)
    mask[chosen] = True
    poisoned = ds.replace(train_x=train_x, train_y=train_y)
    poisoned.meta.update(poisoned.counts, poisoned_count=count, theta=cfg.theta, tau=cfg.tau)
    return poisoned, mask


def eval_backdoor(tp: TrainedPipeline, test_x, test_y, cfg: BackdoorConfig, rng=None) -> BackdoorReport:
    """Accuracies on triggered victim, clean victim and clean target samples.

    The triggered-victim accuracy is scored against the original victim label.
    """
    test_x = np.asarray(test_x, dtype=np.float64)
    test_y = np.asarray(test_y)
    victim = test_x[test_y == cfg.victim]
    target = test_x[test_y == cfg.target]
    if len(victim) == 0 or len(target) == 0:
        raise ShapeError("test set lacks victim or target samples")
    if rng is None:
        rng = make_rng(cfg.seed, "eval_channel")

    def acc(x, label):
        return float(np.mean(predict(tp, x, rng) == label))

    return BackdoorReport(
        acc(apply_phase(victim, cfg.theta), cfg.victim),
        acc(victim, cfg.victim),
        acc(target, cfg.target),
    )


# ---------------------------------------------------------------- evasion


def perturbation_size(pnr_db: float, sensing_noise_sigma: float) -> float:
    """Per-component amplitude whose power sits ``pnr_db`` above the noise power."""
    return float(sensing_noise_sigma * 10.0 ** (pnr_db / 20.0))


def input_gradient(tp: TrainedPipeline, x: np.ndarray, labels: np.ndarray, rng) -> np.ndarray:
    """Gradient of the per-sample cross-entropy w.r.t. the edge input.

    Channel noise is drawn once from ``rng`` and held fixed for the pass.
    The loss is differentiated exactly at the softmax logits (``p - onehot``)
    rather than through the floored log used for training, so confidently
    classified samples keep a nonzero gradient.
    """
    graph = tp.graph()
    out, caches = nn.forward_chain(graph, x, "eval", rng)
    g = out - one_hot(labels, out.shape[1])
    _, gx = nn.backward_chain(graph, caches, g, logits_grad=True)
    return gx


def fgsm_delta(tp: TrainedPipeline, x, labels, cfg: EvasionConfig, sensing_noise_sigma: float, rng=None):
    """The FGSM perturbation itself: ``eps * step`` with ``step`` in {-1, 0, 1}.

    Returns ``(delta, zero_grad)`` for a batch ``x`` (2-D).
    """
    if cfg.perturber != "fgsm":
        raise ConfigError("fgsm needs perturber='fgsm'")
    x = np.asarray(x, dtype=np.float64)
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if len(labels) != len(x):
        raise ShapeError("one label per sample is required")
    if rng is None:
        rng = make_rng(cfg.seed, "attack")
    eps = perturbation_size(cfg.pnr_db, sensing_noise_sigma)
    if cfg.mode == "targeted":
        grad = input_gradient(tp, x, np.full(len(x), cfg.target), rng)
        step = -np.sign(grad)
    else:
        grad = input_gradient(tp, x, labels, rng)
        step = np.sign(grad)
    zero_grad = ~np.any(grad != 0.0, axis=1)
    return eps * step, zero_grad


def fgsm(tp: TrainedPipeline, x, labels, cfg: EvasionConfig, sensing_noise_sigma: float, rng=None):
    """Single-step sign perturbation of ``x`` (one payload or a batch).

    Non-targeted steps up the loss of the true ``labels``; targeted steps down
    the loss of ``cfg.target``. Returns ``(x_adv, zero_grad)`` where
    ``zero_grad`` flags rows whose gradient vanished everywhere (those rows
    come back unchanged).
    """
    single = np.ndim(x) == 1
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    delta, zero_grad = fgsm_delta(tp, x, labels, cfg, sensing_noise_sigma, rng)
    x_adv = x + delta
    if single:
        return x_adv[0], bool(zero_grad[0])
    return x_adv, zero_grad


def gaussian_perturb(x, pnr_db: float, sensing_noise_sigma: float, rng: np.random.Generator):
    """Jamming baseline: i.i.d. Gaussian noise with per-component std eps."""
    x = np.asarray(x, dtype=np.float64)
    eps = perturbation_size(pnr_db, sensing_noise_sigma)
    return x + eps * rng.standard_normal(x.shape)


def eval_evasion(tp: TrainedPipeline, test_x, test_y, cfg: EvasionConfig, sensing_noise_sigma: float) -> float:
    """Accuracy under attack.

    Targeted attacks perturb only the victim-label samples and score those;
    non-targeted attacks perturb and score every sample.
    """
    test_x = np.asarray(test_x, dtype=np.float64)
    test_y = np.asarray(test_y, dtype=np.int64)
    if cfg.mode == "targeted":
        keep = test_y == cfg.victim
        test_x, test_y = test_x[keep], test_y[keep]
    if len(test_y) == 0:
        raise ShapeError("no samples selected for the attack")
    if cfg.perturber == "fgsm":
        x_adv, _ = fgsm(tp, test_x, test_y, cfg, sensing_noise_sigma, make_rng(cfg.seed, "attack", 0))
    else:
        x_adv = gaussian_perturb(test_x, cfg.pnr_db, sensing_noise_sigma, make_rng(cfg.seed, "attack", 1))
    pred = predict(tp, x_adv, make_rng(cfg.seed, "eval_channel"))
    return float(np.mean(pred == test_y))
