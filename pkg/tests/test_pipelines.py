import numpy as np
import pytest

from oracles import dense_param_count
from tcomm import nn, pipelines
from tcomm.errors import ConfigError, ShapeError, TrainingDiverged
from tcomm.nn import Dense, Dropout, PowerNorm
from tcomm.pipelines import PipelineKind, TrainConfig, TrainedPipeline
from tcomm.rng import make_rng
from tcomm.signal import SensingConfig, make_dataset


def total_params(kind):
    return sum(nn.param_count(n) for n in pipelines.build(kind).values())


def test_param_counts_against_widths():
    clf = dense_param_count([128, 128, 64, 32, 16, 8, 4, 2])
    ae = dense_param_count([128, 128, 128]) * 2
    toc = dense_param_count([128, 128, 64, 2]) + dense_param_count([2, 32, 8, 2])
    assert total_params("approach1") == total_params("nochannel") == clf == 27_558
    assert total_params("approach2") == clf + ae == 93_606 and ae == 66_048
    assert total_params("toc") == toc == 25_276


def test_net_roles_and_layers():
    assert sorted(pipelines.build("approach2")) == ["classifier", "decoder", "encoder"]
    assert sorted(pipelines.build("toc")) == ["decoder", "encoder"]
    assert list(pipelines.build("approach1")) == ["classifier"]
    enc = pipelines.build("toc")["encoder"].layers
    assert enc == (Dense(128, 128, "relu"), Dense(128, 64, "tanh"), Dense(64, 2, "linear"), PowerNorm())
    clf = pipelines.build("nochannel")["classifier"].layers
    assert sum(isinstance(l, Dropout) and l.rate == 0.2 for l in clf) == 6
    assert clf[-1] == Dense(4, 2, "softmax")


def test_pipeline_kind_parse():
    assert PipelineKind.parse("TOC") is PipelineKind.TOC
    with pytest.raises(ConfigError):
        PipelineKind.parse("approach3")


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(epochs=0)
    with pytest.raises(ConfigError):
        TrainConfig(lr=0.0)


def test_untrained_toc_is_at_chance(ds10):
    tp = TrainedPipeline(PipelineKind.TOC, pipelines.init_nets("toc", 3), 10.0, TrainConfig())
    acc = pipelines.evaluate(tp, ds10.test_x, ds10.test_y, make_rng(0, "eval_channel")).accuracy
    assert abs(acc - 0.5) <= 0.05


def test_training_reduces_loss(nochannel10):
    hist = nochannel10.train_history
    assert len(hist) == 100 and hist[-1] < hist[0]


def test_toc_tracks_no_channel(ds10, toc10, nochannel10):
    a = pipelines.evaluate(toc10, ds10.test_x, ds10.test_y).accuracy
    b = pipelines.evaluate(nochannel10, ds10.test_x, ds10.test_y).accuracy
    assert abs(a - b) <= 0.05


def test_channel_noise_stability(ds10, toc10):
    a = pipelines.evaluate(toc10, ds10.test_x, ds10.test_y, make_rng(1, "eval_channel")).accuracy
    b = pipelines.evaluate(toc10, ds10.test_x, ds10.test_y, make_rng(2, "eval_channel")).accuracy
    assert abs(a - b) < 0.03


def test_training_is_deterministic():
    ds = make_dataset(SensingConfig(n_samples=300, seed=2))
    a = pipelines.train("approach2", ds.train_x, ds.train_y, TrainConfig(epochs=2, seed=5, snr_c=3))
    b = pipelines.train("approach2", ds.train_x, ds.train_y, TrainConfig(epochs=2, seed=5, snr_c=3))
    for name in a.nets:
        assert a.nets[name].params.tobytes() == b.nets[name].params.tobytes()
    assert a.train_history == b.train_history and len(a.train_history) == 4


def test_label_shuffled_data_gives_chance():
    ds = make_dataset(SensingConfig(n_samples=2000, snr_s=10, seed=4))
    shuffled = make_rng(4, "label_shuffle").permutation(ds.train_y)
    tp = pipelines.train("nochannel", ds.train_x, shuffled, TrainConfig(epochs=10, seed=4))
    assert abs(pipelines.evaluate(tp, ds.test_x, ds.test_y).accuracy - 0.5) <= 0.05


def test_report_trivial_cases():
    y = np.array([0, 1, 1, 0, 1])
    r = pipelines.report(y, y)
    assert r.accuracy == 1.0 and r.confusion[0, 1] == r.confusion[1, 0] == 0 and r.confusion.sum() == 5
    assert pipelines.report(y, 1 - y).accuracy == 0.0
    with pytest.raises(ShapeError):
        pipelines.report(y, y[:3])


def test_argmax_ties_go_to_lower_label():
    nets = pipelines.build("nochannel")  # all-zero weights give exactly (0.5, 0.5)
    tp = TrainedPipeline(PipelineKind.NO_CHANNEL, nets, 0.0, TrainConfig())
    assert np.all(pipelines.predict(tp, np.ones((4, 128))) == 0)


def test_evaluate_shape_error(toc10):
    with pytest.raises(ShapeError):
        pipelines.evaluate(toc10, np.ones((3, 100)), np.zeros(3, dtype=int))


def test_encode_transmit(ds10, toc10):
    sym = pipelines.encode_transmit(toc10, ds10.test_x[0])
    assert sym.shape == (2,) and abs(np.mean(sym**2) - 1) <= 1e-12
    tp2 = TrainedPipeline(PipelineKind.APPROACH2, pipelines.init_nets("approach2", 0), 5.0, TrainConfig())
    out = pipelines.encode_transmit(tp2, ds10.test_x[:3])
    assert out.shape == (3, 128) and np.all(np.abs(np.mean(out**2, axis=1) - 1) <= 1e-12)
    nc = TrainedPipeline(PipelineKind.NO_CHANNEL, pipelines.init_nets("nochannel", 0), 0.0, TrainConfig())
    with pytest.raises(ConfigError):
        pipelines.encode_transmit(nc, ds10.test_x[0])


def test_divergence_carries_epoch():
    ds = make_dataset(SensingConfig(n_samples=100, seed=0))
    x = ds.train_x.copy()
    x[5, 0] = np.nan
    with pytest.raises(TrainingDiverged) as info:
        pipelines.train("nochannel", x, ds.train_y, TrainConfig(epochs=3))
    assert info.value.epoch == 0


def test_pipeline_save_load(tmp_path, ds10, toc10):
    pipelines.save_pipeline(toc10, tmp_path / "m")
    back = pipelines.load_pipeline(tmp_path / "m")
    assert back.kind is PipelineKind.TOC and back.snr_c == toc10.snr_c and back.config == toc10.config
    a = pipelines.predict_proba(toc10, ds10.test_x[:50], make_rng(0, "eval_channel"))
    b = pipelines.predict_proba(back, ds10.test_x[:50], make_rng(0, "eval_channel"))
    assert a.tobytes() == b.tobytes()
