import json

import numpy as np
import pytest

from pyramidssl.errors import BudgetExceeded, ConfigError, FormatError, IoError
from pyramidssl.pyramid import whiteness
from pyramidssl.synth import (CohortConfig, SynthSpec, choose_roi, cohort_specs, generate_cohort,
                              generate_pyramid, pool2, read_cohort, render_top)

from conftest import TINY_COHORT, small_spec


def test_levels_are_exact_pools():
    img = generate_pyramid(small_spec(1))
    for t in range(img.top):
        np.testing.assert_allclose(pool2(img.levels[t + 1]), img.levels[t], atol=1e-12)
    assert img.shape(img.top) == (256, 256)


def test_deterministic_in_seed():
    a, b, c = (render_top(small_spec(s)) for s in (4, 4, 5))
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_ramps_make_position_readable():
    spec = small_spec(2, tissue_fraction=1.0, hue_ramp=0.4, luminance_ramp=0.4)
    top = render_top(spec)
    red_minus_blue = top[..., 0] - top[..., 2]
    left, right = red_minus_blue[:, :64].mean(), red_minus_blue[:, -64:].mean()
    assert right > left + 0.2
    brightness = top.mean(-1)
    assert brightness[:64].mean() > brightness[-64:].mean() + 0.1


def test_tissue_fraction_controls_background():
    top = render_top(small_spec(6, tissue_fraction=0.5))
    assert 0.4 < whiteness(top) < 0.6


def test_budget_guard():
    with pytest.raises(BudgetExceeded):
        render_top(SynthSpec(seed=0, levels=8, base_size=256, memory_budget_mb=64))


def test_too_few_levels():
    with pytest.raises(ConfigError):
        generate_pyramid(SynthSpec(seed=0, levels=2, base_size=8))


def test_cohort_config_validation():
    with pytest.raises(ConfigError):
        CohortConfig(train_per_class=[4, 4, 0, 4]).validate()
    with pytest.raises(ConfigError):
        CohortConfig(num_classes=5).validate()
    with pytest.raises(ConfigError):
        CohortConfig(test_per_class=[1, 2]).validate()
    with pytest.raises(ConfigError):
        CohortConfig(roi_size=4096).validate()


def test_custom_textures():
    cfg = CohortConfig(num_classes=2, textures=[
        {"palette": [0.5, 0.4, 0.5], "wavelength": 2.0, "amplitude": 0.1},
        {"palette": [0.6, 0.4, 0.4], "wavelength": 3.0, "amplitude": 0.1},
    ])
    cfg.validate()
    assert cfg.class_textures()[1].palette == (0.6, 0.4, 0.4)


def test_cohort_layout_and_seeds():
    jobs = cohort_specs(CohortConfig(**TINY_COHORT), seed=9)
    assert [(s.class_id, split) for s, split, _ in jobs] == [
        (0, "train"), (0, "train"), (0, "test"), (1, "train"), (1, "train"), (1, "test")]
    assert len({s.seed for s, _, _ in jobs}) == len(jobs)


def test_cohort_roundtrip(tiny_cohort):
    back = read_cohort(tiny_cohort.root)
    assert back.patients == tiny_cohort.patients
    assert len(back.by_split("test")) == 2
    entry = back.by_split("train")[0]
    r, c, h, w = entry.roi
    img = back.pyramid(entry)
    assert h == w == 128 and r + h <= img.shape(img.top)[0] and c + w <= img.shape(img.top)[1]
    meta = json.loads((tiny_cohort.root / "synth_config.json").read_text())
    assert meta["seed"] == 5


def test_cohort_threads_do_not_change_output(tmp_path):
    cfg = CohortConfig(**{**TINY_COHORT, "train_per_class": 1})
    a = generate_cohort(cfg, tmp_path / "a", seed=2, threads=1)
    b = generate_cohort(cfg, tmp_path / "b", seed=2, threads=2)
    for ea, eb in zip(a.patients, b.patients):
        assert (tmp_path / "a" / ea.pyramid_path / "level_3.ppm").read_bytes() == \
            (tmp_path / "b" / eb.pyramid_path / "level_3.ppm").read_bytes()


def test_choose_roi_prefers_tissue():
    img = generate_pyramid(small_spec(0, tissue_fraction=0.5))
    r, c, h, w = choose_roi(img, 64)
    from pyramidssl.pyramid import background_mask
    bg = background_mask(img.levels[-1])
    assert bg[r:r + h, c:c + w].mean() <= bg.mean()


def test_read_cohort_errors(tmp_path):
    with pytest.raises(IoError):
        read_cohort(tmp_path)
    (tmp_path / "cohort.json").write_text("[{\"bogus\": 1}]")
    with pytest.raises(FormatError):
        read_cohort(tmp_path)
    (tmp_path / "cohort.json").write_text("nope")
    with pytest.raises(FormatError):
        read_cohort(tmp_path)
