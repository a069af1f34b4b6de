import copy
import os
from dataclasses import replace

import numpy as np
import pytest
import torch

from asymstereo import trainer as tr
from asymstereo.datasets import collate, random_dot_samples
from asymstereo.network import NetworkConfig, StereoNet, load_checkpoint, parameters_equal


def tiny_net(seed=0):
    return StereoNet(NetworkConfig(d_max=16, feature_channels=4, num_extractor_blocks=1, matcher_channels=4,
                                   seed=seed))


def tiny_cfg(**kw):
    base = dict(epochs_per_stage=1, batch_size=2, crop_size=(32, 64), K=1)
    base.update(kw)
    return tr.TrainConfig(**base)


@pytest.fixture(scope="module")
def data():
    return random_dot_samples(3, (64, 64), 16, seed=2)


def snapshot(module):
    return {k: v.clone() for k, v in module.state_dict().items()}


def same(module, snap):
    return all(torch.equal(v, snap[k]) for k, v in module.state_dict().items())


def test_defaults():
    cfg = tr.TrainConfig()
    assert (cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.K) == (1e-3, 0.9, 0.999, 3)
    with pytest.raises(ValueError):
        tr.TrainConfig(setting="S5")


def test_stage_state_invariant():
    with pytest.raises(ValueError):
        tr.StageState(k=0, net=tiny_net(), frozen_loss_extractor=tiny_net().extractor)
    with pytest.raises(ValueError):
        tr.StageState(k=1, net=tiny_net())


def test_zero_epochs_is_identity(data):
    init = tiny_net()
    st = tr.train_stage(init, None, data, tiny_cfg(epochs_per_stage=0))
    assert parameters_equal(st.net, init) and st.history == []


def test_empty_data_rejected():
    with pytest.raises(ValueError):
        tr.train_stage(tiny_net(), None, [], tiny_cfg())


def test_init_not_mutated(data):
    init = tiny_net()
    snap = snapshot(init)
    tr.train_stage(init, None, data, tiny_cfg())
    assert same(init, snap)


def test_one_step_descent():
    """A single small ADAM step lowers the loss of the sample it was taken on."""
    decreased = 0
    cfg = tiny_cfg(learning_rate=1e-4, batch_size=1, crop_size=None)
    for seed in range(20):
        sample = random_dot_samples(1, (64, 64), 16, seed=100 + seed)
        net = tiny_net(seed)
        batch = collate(sample)
        with torch.no_grad():
            before = tr.compute_loss(net, batch, cfg)[0].item()
        st = tr.train_stage(net, None, sample, cfg)
        with torch.no_grad():
            after = tr.compute_loss(st.net, batch, cfg)[0].item()
        decreased += after < before
    assert decreased >= 18


def test_frozen_extractor_never_changes(data):
    source = tiny_net(5).extractor
    ref = snapshot(source)
    calls = []

    def check(module, inputs, output):
        calls.append(same(module, ref))
        assert not any(p.requires_grad for p in module.parameters())

    source.register_forward_hook(check)
    st = tr.train_stage(tiny_net(), source, data, tiny_cfg(epochs_per_stage=2), k=1)
    assert calls and all(calls)
    assert same(st.frozen_loss_extractor, ref) and same(source, ref)
    assert all(p.grad is None for p in st.frozen_loss_extractor.parameters())


def test_feature_loss_trains_network(data):
    init = tiny_net()
    st = tr.train_stage(init, tiny_net(9).extractor, data, tiny_cfg(), k=1)
    assert not parameters_equal(st.net, init)


def test_determinism(tmp_path, data):
    a = tr.train_stage(tiny_net(), None, data, tiny_cfg(epochs_per_stage=2), out_dir=tmp_path / "a")
    b = tr.train_stage(tiny_net(), None, data, tiny_cfg(epochs_per_stage=2), out_dir=tmp_path / "b")
    assert parameters_equal(a.net, b.net)
    ca, _ = load_checkpoint(tmp_path / "a" / "stage_0.ckpt")
    cb, _ = load_checkpoint(tmp_path / "b" / "stage_0.ckpt")
    assert parameters_equal(ca, cb) and parameters_equal(ca, a.net)
    c = tr.train_stage(tiny_net(), None, data, tiny_cfg(epochs_per_stage=2, seed=1))
    assert not parameters_equal(a.net, c.net)


def test_nan_loss_aborts(data):
    bad = replace(data[0], I_L=np.full_like(data[0].I_L, np.nan))
    with pytest.raises(tr.TrainingDivergedError, match="non-finite"):
        tr.train_stage(tiny_net(), None, [bad], tiny_cfg(batch_size=1))


def test_self_boost_k1_schedule(monkeypatch, tmp_path, data):
    seen = []
    real = tr.train_stage

    def spy(init, loss_extractor, *args, **kw):
        seen.append((snapshot(init), None if loss_extractor is None else snapshot(loss_extractor)))
        return real(init, loss_extractor, *args, **kw)

    monkeypatch.setattr(tr, "train_stage", spy)
    states = tr.self_boost(data, tiny_cfg(K=1), NetworkConfig(d_max=16, feature_channels=4,
                                                               num_extractor_blocks=1, matcher_channels=4),
                           out_dir=tmp_path)
    assert [s.k for s in states] == [0, 1]
    assert states[0].frozen_loss_extractor is None
    assert same(states[1].frozen_loss_extractor, snapshot(states[0].net.extractor))
    assert same(states[0].net, seen[1][0])
    assert seen[0][1] is None and same(states[0].net.extractor, seen[1][1])
    assert os.path.isfile(tmp_path / "stage_0.ckpt") and os.path.isfile(tmp_path / "stage_1.ckpt")
    lines = open(tmp_path / "train_log.tsv").read().splitlines()
    assert lines[0].split("\t")[:3] == ["stage", "epoch", "loss"] and len(lines) == 3


def test_self_boost_requires_stage():
    with pytest.raises(ValueError):
        tr.self_boost([object()], tiny_cfg(K=0), NetworkConfig(d_max=16))


def test_best_validation_checkpoint(tmp_path, data):
    st = tr.train_stage(tiny_net(), None, data, tiny_cfg(epochs_per_stage=2), val_data=data[:1], out_dir=tmp_path)
    assert st.best_net is not None and "val_epe" in st.history[0]
    assert os.path.isfile(tmp_path / "stage_0_best.ckpt")


def test_plateau_rule():
    cfg = tiny_cfg(early_stop=True, early_stop_rel=0.005, early_stop_patience=3)
    assert not tr._plateaued([1.0, 0.9, 0.8], cfg)
    assert tr._plateaued([1.0, 0.999, 0.998, 0.997], cfg)
    assert not tr._plateaued([1.0, 0.99, 0.98, 0.97], cfg)


def test_early_stop_halts(data):
    st = tr.train_stage(tiny_net(), None, data,
                        tiny_cfg(epochs_per_stage=6, early_stop=True, early_stop_rel=10.0, early_stop_patience=1))
    assert len(st.history) == 2


class TestAblation:
    batch = {"left": "L", "right_up": "up", "right_hr": "HR"}

    def test_s1_asymmetric_twice(self):
        assert tr.configure_ablation("S1", self.batch) == (("L", "up"), ("L", "up"))

    def test_s2(self):
        assert tr.configure_ablation("S2", self.batch) == (("L", "HR"), ("L", "up"))

    def test_s3_shares_s1_input(self):
        inp, loss = tr.configure_ablation("S3", self.batch)
        assert inp == tr.configure_ablation("S1", self.batch)[0] and loss == ("L", "HR")

    def test_s4_never_uses_upsampled(self):
        inp, loss = tr.configure_ablation("S4", self.batch)
        assert "up" not in inp + loss

    @pytest.mark.parametrize("setting", ["S2", "S3", "S4"])
    def test_requires_hr(self, setting):
        with pytest.raises(ValueError):
            tr.configure_ablation(setting, {"left": "L", "right_up": "up"})
        assert tr.configure_ablation("S1", {"left": "L", "right_up": "up"})

    def test_unknown(self):
        with pytest.raises(ValueError):
            tr.configure_ablation("S0", self.batch)


def test_evaluate_requires_ground_truth(data):
    with pytest.raises(ValueError):
        tr.evaluate(tiny_net(), [replace(data[0], gt_disparity=None)])
    m = tr.evaluate(tiny_net(), data)
    assert 0 <= m["3pe"] <= 100 and len(m["per_scene_epe"]) == len(data)


def test_network_init_preserves_global_rng():
    torch.manual_seed(123)
    expect = torch.rand(1)
    torch.manual_seed(123)
    copy.deepcopy(tiny_net())
    assert torch.equal(torch.rand(1), expect)
