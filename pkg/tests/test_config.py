"""Config dataclasses, the flat key = value format, and the schedule
helpers exposed through TrainConfig."""

import dataclasses

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zstrans.config import (LossWeights, NetConfig, TrainConfig,
                            config_to_flat_dict, format_config_text,
                            net_config_hash, parse_config_text,
                            resolve_configs)
from zstrans.training import lr_schedule


def test_desk_profile_defaults():
    c = NetConfig.desk()
    assert c.scale_profile == "desk"
    assert (c.resolution, c.feat_dim, c.attr_dim, c.noise_dim) == (32, 128, 32, 16)
    c.validate()


def test_paper_profile_shapes():
    c = NetConfig.paper()
    assert c.scale_profile == "paper"
    assert c.resolution == 128
    assert c.feat_dim == 2048
    assert c.attr_dim == 1024
    assert c.noise_dim == 312
    c.validate()


def test_desk_overrides_and_frozen():
    c = NetConfig.desk(feat_dim=64, n_seen_classes=5)
    assert c.feat_dim == 64
    with pytest.raises(dataclasses.FrozenInstanceError):
        c.feat_dim = 32


def test_validate_rejects_bad_values():
    with pytest.raises(ValueError, match="scale_profile"):
        NetConfig.desk(scale_profile="huge").validate()
    with pytest.raises(ValueError, match="divisible"):
        NetConfig.desk(feat_dim=126).validate()
    with pytest.raises(ValueError, match="seen classes"):
        NetConfig.desk(n_seen_classes=1).validate()
    with pytest.raises(ValueError, match="positive"):
        TrainConfig(total_iters=0).validate()
    with pytest.raises(ValueError, match="lr"):
        TrainConfig(lr=-1.0).validate()
    with pytest.raises(ValueError, match="m_limit"):
        TrainConfig(m_limit=1).validate()


def test_run_length_includes_decay_phase():
    t = TrainConfig(total_iters=5000, decay_total_iters=0)
    assert t.run_length == 5000
    t = TrainConfig(total_iters=100000, decay_total_iters=100000)
    assert t.run_length == 200000


def test_lr_schedule_documented_example():
    t = TrainConfig(lr=1e-4, total_iters=100000, decay_every=1000,
                    decay_total_iters=100000)
    assert lr_schedule(50000, t) == pytest.approx(1e-4)
    assert lr_schedule(100000, t) == pytest.approx(1e-4)
    # halfway through decay: 50 completed windows of 1000
    assert lr_schedule(150000, t) == pytest.approx(5e-5)
    assert lr_schedule(200000, t) == pytest.approx(0.0, abs=1e-12)


def test_lr_schedule_no_decay_constant():
    t = TrainConfig(lr=3e-4, total_iters=5000, decay_total_iters=0)
    for i in (0, 1, 4999, 5000, 99999):
        assert lr_schedule(i, t) == pytest.approx(3e-4)


def test_lr_schedule_steps_not_continuous():
    t = TrainConfig(lr=1e-4, total_iters=1000, decay_every=100,
                    decay_total_iters=1000)
    # within one decay window the lr is flat
    assert lr_schedule(1001, t) == lr_schedule(1099, t)
    assert lr_schedule(1100, t) < lr_schedule(1099, t)


def test_lr_schedule_never_negative():
    t = TrainConfig(lr=1e-4, total_iters=10, decay_every=1, decay_total_iters=10)
    for i in range(0, 40):
        assert lr_schedule(i, t) >= 0.0


# ------------------------------------------------------------ text format

def test_parse_simple_text():
    values = parse_config_text("feat_dim = 64\n# comment\nlr = 2e-4  # inline\n\nseed=7\n")
    assert values == {"feat_dim": "64", "lr": "2e-4", "seed": "7"}


def test_parse_duplicate_key_names_line():
    with pytest.raises(ValueError, match="line 3.*duplicate"):
        parse_config_text("a = 1\nb = 2\na = 3\n")


def test_parse_malformed_line():
    with pytest.raises(ValueError, match="key = value"):
        parse_config_text("feat_dim 64\n")
    with pytest.raises(ValueError, match="empty key or value"):
        parse_config_text("= 3\n")


def test_resolve_coercion_and_precedence():
    net, train = resolve_configs(
        {"feat_dim": "64", "lr": "2e-4", "lambda_m": "200", "m_limit": "none",
         "disable_cls": "true", "n_seen_classes": "6"},
        overrides={"lr": 5e-4, "seed": 3})
    assert net.feat_dim == 64
    assert net.n_seen_classes == 6
    assert train.lr == 5e-4  # override wins
    assert train.weights.lambda_m == 200.0
    assert train.m_limit is None
    assert train.disable_cls is True
    assert train.seed == 3


def test_resolve_unknown_key():
    with pytest.raises(ValueError, match="unknown config key"):
        resolve_configs({"feat_dims": "64"})


def test_resolve_bad_bool():
    with pytest.raises(ValueError, match="expected bool"):
        resolve_configs({"disable_cls": "maybe"})


def test_resolve_validates_result():
    with pytest.raises(ValueError, match="divisible"):
        resolve_configs({"feat_dim": "30"})


def test_format_roundtrip_identity():
    net = NetConfig.desk(feat_dim=64, n_seen_classes=8)
    train = TrainConfig(total_iters=123, lr=2e-4, seed=5,
                        weights=LossWeights(lambda_m=75.0))
    text = format_config_text(net, train)
    net2, train2 = resolve_configs(parse_config_text(text))
    assert net2 == net
    assert train2 == train


def test_flat_dict_covers_all_fields():
    flat = config_to_flat_dict(NetConfig.desk(), TrainConfig())
    for name in ("feat_dim", "lambda_m", "total_iters", "seed", "m_limit"):
        assert name in flat
    assert "weights" not in flat


def test_net_config_hash_stable_and_sensitive():
    a = net_config_hash(NetConfig.desk())
    b = net_config_hash(NetConfig.desk())
    c = net_config_hash(NetConfig.desk(feat_dim=64))
    assert a == b
    assert a != c
    assert len(a) == 12


@given(st.integers(1, 10 ** 6), st.integers(0, 10 ** 6), st.integers(1, 10 ** 4),
       st.integers(0, 3 * 10 ** 6))
@settings(max_examples=100, deadline=None)
def test_property_lr_monotone_nonincreasing(total, decay_total, every, i):
    t = TrainConfig(lr=1e-4, total_iters=total, decay_every=every,
                    decay_total_iters=decay_total)
    assert 0.0 <= lr_schedule(i + 1, t) <= lr_schedule(i, t) + 1e-18 <= t.lr + 1e-18
