import json

import numpy as np
import pytest

import cccnet

TINY = """seed = 7
scenes = 10
regression_widths = 6, 6, 6, 6
mask_net_widths = 4, 4, 4, 4, 2
branch_widths = 4, 4, 4, 4, 2
[scene]
height = 32
width = 32
max_persons = 5
[phase1]
epochs = 10
batch = 32
[phase2]
epochs = 3
batch = 2
lr = 1e-3
[phase3_pre]
epochs = 2
batch = 2
lr = 1e-3
[phase3_joint]
epochs = 2
batch = 2
lr = 1e-3
"""


def test_density_mass():
    rng = np.random.default_rng(0)
    heads = [(float(x), float(y), "sitting") for x, y in rng.uniform(0, 128, size=(37, 2))]
    m = cccnet.render_density(heads, 128, 128)
    assert m.shape == (32, 32)
    assert (m >= 0).all()
    assert abs(cccnet.count(m) - 37) < 1e-3
    sit, stand = cccnet.render_category_maps(heads + [(10.0, 10.0, "standing")], 128, 128)
    assert abs(cccnet.count(sit) - 37) < 1e-3
    assert abs(cccnet.count(stand) - 1) < 1e-3


def test_formulas():
    pred = np.full((1, 4, 4), 3.0, dtype=np.float32)
    gt = np.full((1, 4, 4), 2.0, dtype=np.float32)
    assert cccnet.weighted_mse(pred, gt, 350.0) == 350.0 * 16
    assert cccnet.sample_weight([1.0] * 17) == 26.0
    assert cccnet.sample_weight([0.0] * 17) == 0.0
    assert cccnet.sample_weight([0.0] + [0.5] * 10 + [1.0] * 6) == 16.0


def test_conv_and_pool():
    x = np.arange(16, dtype=np.float32).reshape(1, 4, 4)
    w = np.ones((1, 1, 3, 3), dtype=np.float32)
    y = cccnet.conv2d(x, w, np.zeros(1, dtype=np.float32), padding=1)
    assert y.shape == (1, 4, 4)
    assert y[0, 1, 1] == pytest.approx(x[0, :3, :3].sum())
    assert cccnet.maxpool2(x).tolist() == [[[5.0, 7.0], [13.0, 15.0]]]
    with pytest.raises(cccnet.ShapeError):
        cccnet.conv2d(x, np.ones((1, 2, 3, 3), dtype=np.float32), np.zeros(1, dtype=np.float32))


def test_saddle_controller():
    c = cccnet.LearningRateController(1e-3)
    fired = [c.observe(1.0) for _ in range(15)]
    assert fired.index(True) == 14
    assert c.current_lr == 5e-4
    for _ in range(5):
        c.observe(1.0)
    assert c.current_lr == 1e-3
    assert cccnet.saddle_monitor([1.0] * 15)
    assert not cccnet.saddle_monitor([1.0 / (i + 1) for i in range(15)])


def test_config_errors():
    cfg = cccnet.Config.from_text(TINY)
    assert cfg.seed == 7
    assert cccnet.Config.from_text(cfg.to_text()).to_text() == cfg.to_text()
    with pytest.raises(cccnet.ConfigError, match="line 2"):
        cccnet.Config.from_text("seed = 1\nnope = 2\n")


def test_scene_generation_is_seeded():
    cfg = cccnet.Config.from_text(TINY)
    a = cccnet.generate_scene(cfg, 3)
    b = cccnet.generate_scene(cfg, 3)
    assert a["image"].shape == (1, 32, 32)
    assert np.array_equal(a["image"], b["image"])
    assert a["persons"] == b["persons"]
    for rec in a["keypoints"]:
        assert len(rec["joints"]) == 17


def test_pipeline_round_trip(tmp_path):
    cfg = cccnet.Config.from_text(TINY)
    data, models = tmp_path / "data", tmp_path / "models"
    first = cccnet.generate_corpus(data, 10, cfg)
    assert first == cccnet.generate_corpus(tmp_path / "again", 10, cfg)

    with pytest.raises(cccnet.MissingArtifactError, match="phase1.cccp"):
        cccnet.train_phase("2", data, models, cfg)
    for phase in ("1", "2", "3-pre", "3-joint"):
        assert cccnet.train_phase(phase, data, models, cfg)["complete"]

    out = cccnet.infer(models, np.zeros((32, 32), dtype=np.float32), cfg)
    assert out["final_sit"].shape == (8, 8)
    assert out["sdbc_sitting"] == 0.0
    report = json.loads(cccnet.evaluate(models, data, cfg))
    assert [r["mode"] for r in report["reports"]] == ["sdbc", "cccnet"]
