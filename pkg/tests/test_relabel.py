"""Counterfactual-deadline relabeling rules and set-level properties."""

from __future__ import annotations

import numpy as np
import pytest

from fsiw.data import FeatureVector, LabeledSample
from fsiw.relabel import ArtificialSample, ConfigError, RelabelConfig, build_artificial_datasets


def _sample(click_ts: int, y: int, d: int | None, training_end: int = 1000, tag: int = 0) -> LabeledSample:
    return LabeledSample(
        x=FeatureVector(indices=(tag % 64,), dim=64),
        y=y,
        e=training_end - click_ts,
        d=d,
        click_ts=click_ts,
    )


CFG = RelabelConfig(tau=200, training_end=1000)  # cutoff at 800


def test_early_converter_goes_to_d1_with_s1() -> None:
    d1, d0 = build_artificial_datasets([_sample(500, 1, 100)], CFG)
    assert d0 == []
    assert d1 == [
        ArtificialSample(x=_sample(500, 1, 100).x, e_adj=300, s=1, destination="D1", e=500)
    ]


def test_late_converter_lands_in_both_sets_with_s0() -> None:
    d1, d0 = build_artificial_datasets([_sample(700, 1, 200)], CFG)
    assert len(d1) == 1 and len(d0) == 1
    assert (d1[0].s, d1[0].e_adj, d1[0].destination) == (0, 100, "D1")
    assert (d0[0].s, d0[0].e_adj, d0[0].destination) == (0, 100, "D0")


def test_negative_goes_to_d0_with_s1() -> None:
    d1, d0 = build_artificial_datasets([_sample(500, 0, None)], CFG)
    assert d1 == []
    assert (d0[0].s, d0[0].e_adj, d0[0].destination) == (1, 300, "D0")


def test_click_past_cutoff_is_excluded_from_both() -> None:
    d1, d0 = build_artificial_datasets(
        [_sample(900, 1, 50), _sample(900, 0, None), _sample(800, 0, None)], CFG
    )
    assert d1 == [] and d0 == []  # 800 is the cutoff itself: excluded too


def test_conversion_exactly_at_cutoff_counts_as_not_yet_converted() -> None:
    # click 600 + delay 200 = 800 = cutoff; "before" is strict
    d1, d0 = build_artificial_datasets([_sample(600, 1, 200)], CFG)
    assert d1[0].s == 0
    assert len(d0) == 1


def test_adjusted_elapsed_time_is_original_minus_tau_and_positive() -> None:
    samples = [_sample(c, 0, None) for c in (0, 100, 750, 799)]
    _, d0 = build_artificial_datasets(samples, CFG)
    assert [a.e_adj for a in d0] == [800, 700, 50, 1]
    assert all(a.e == a.e_adj + 200 for a in d0)


def test_config_rejects_bad_tau() -> None:
    with pytest.raises(ConfigError):
        RelabelConfig(tau=0, training_end=1000)
    with pytest.raises(ConfigError):
        RelabelConfig(tau=-5, training_end=1000)
    with pytest.raises(ConfigError):
        RelabelConfig(tau=1000, training_end=1000)


def test_sample_after_training_end_is_rejected() -> None:
    bad = LabeledSample(
        x=FeatureVector(indices=(0,), dim=64), y=0, e=5, d=None, click_ts=1200
    )
    with pytest.raises(ValueError, match="after training_end"):
        build_artificial_datasets([bad], CFG)


def _random_samples(n: int, seed: int, training_end: int = 1000) -> list[LabeledSample]:
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        click = int(rng.integers(0, training_end))
        e = training_end - click
        if rng.random() < 0.5:
            out.append(_sample(click, 1, int(rng.integers(0, e + 1)), training_end, tag=i))
        else:
            out.append(_sample(click, 0, None, training_end, tag=i))
    return out


def test_set_level_membership_properties() -> None:
    samples = _random_samples(500, seed=1)
    d1, d0 = build_artificial_datasets(samples, CFG)
    kept = [s for s in samples if s.click_ts < CFG.cutoff]
    kept_pos = [s for s in kept if s.y == 1]

    assert len(d1) == len(kept_pos)
    # every kept sample shows up somewhere, and only late converters twice
    assert len(d0) + len(d1) == len(kept) + sum(
        1 for s in kept_pos if s.click_ts + s.d >= CFG.cutoff
    )
    late = {(a.x.indices, a.e_adj) for a in d1 if a.s == 0}
    d0_s0 = {(a.x.indices, a.e_adj) for a in d0 if a.s == 0}
    assert late == d0_s0  # the s=0 part of D1 is exactly D0's s=0 part


def test_long_deadline_makes_d1_pure_s1() -> None:
    # all converters finish within 100s of the click; tau=500 >= that
    training_end = 1000
    rng = np.random.default_rng(3)
    samples = []
    for i in range(200):
        click = int(rng.integers(0, 400))
        if rng.random() < 0.5:
            d = int(rng.integers(0, 100))
            samples.append(_sample(click, 1, d, training_end, tag=i))
        else:
            samples.append(_sample(click, 0, None, training_end, tag=i))
    cfg = RelabelConfig(tau=500, training_end=training_end)
    d1, _ = build_artificial_datasets(samples, cfg)
    assert d1 and all(a.s == 1 for a in d1)


def test_output_preserves_input_order() -> None:
    samples = _random_samples(300, seed=9)
    d1, d0 = build_artificial_datasets(samples, CFG)
    order = {id(s.x): i for i, s in enumerate(samples)}
    for group in (d1, d0):
        positions = [order[id(a.x)] for a in group]
        assert positions == sorted(positions)


def test_artificial_sample_validation() -> None:
    x = FeatureVector(indices=(0,), dim=64)
    with pytest.raises(ValueError):
        ArtificialSample(x=x, e_adj=0, s=1, destination="D0", e=10)
    with pytest.raises(ValueError):
        ArtificialSample(x=x, e_adj=5, s=2, destination="D0", e=10)
    with pytest.raises(ValueError):
        ArtificialSample(x=x, e_adj=5, s=1, destination="DX", e=10)
