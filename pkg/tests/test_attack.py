"""Optimizer loop, transform sampling, artifact round-trip."""

import hashlib
import json

import numpy as np
import pytest

import advpatch.diffcore as dc
from advpatch import attack as atk
from advpatch.attack import (AdamState, AttackConfig, AttackError,
                             PatchArtifact, PlacementSampling, adam_step,
                             attack_config_from_dict, generate_patch,
                             hash_scenes, make_baseline_patch)
from advpatch.augment import AugmentParams, texture_augment
from advpatch.losses import LossWeights
from advpatch.scenegen import SceneConfig, generate_dataset
from advpatch.victims import MDEModel, SSModel


@pytest.fixture(scope="module")
def tiny_world():
    scenes = generate_dataset(6, SceneConfig(width=64, height=48), base_seed=500)
    return scenes, MDEModel.create(seed=1), SSModel.create(seed=2)


def tiny_config(**kw):
    base = dict(epochs=2, batch_size=3, t_res=16, seed=3)
    base.update(kw)
    return AttackConfig(**base)


# ---------------------------------------------------------------------------
# Adam


def test_adam_zero_grad_is_identity():
    state = AdamState()
    p = np.array([0.2, 0.7])
    out = adam_step([p], [np.zeros(2)], state, lr=0.5)[0]
    assert np.array_equal(out, p)


def test_adam_first_step_moves_by_lr():
    state = AdamState()
    p = np.zeros(3)
    g = np.array([0.3, -2.0, 1e-4])
    out = adam_step([p], [g], state, lr=0.01)[0]
    # bias-corrected first step is lr * sign(g) up to the eps cushion
    assert np.allclose(np.abs(out), 0.01, rtol=1e-3)
    assert np.array_equal(np.sign(out), -np.sign(g))


def test_adam_converges_on_quadratic():
    state = AdamState()
    p = np.full(4, 0.9)
    for _ in range(100):
        g = 2.0 * (p - 0.3)
        p = adam_step([p], [g], state, lr=0.05)[0]
    assert float(np.sum((p - 0.3) ** 2)) < 1e-3


def test_adam_clamp_projects():
    state = AdamState()
    p = np.array([0.001])
    out = adam_step([p], [np.array([5.0])], state, lr=0.1, clamp=(0.0, 1.0))[0]
    assert out[0] == 0.0


# ---------------------------------------------------------------------------
# transform sampling coverage


def test_placement_sampler_covers_bounds():
    ps = PlacementSampling()
    rng = np.random.default_rng(11)
    draws = np.array([ps.sample(rng) for _ in range(1000)])
    lo_f, hi_f = 1.8, 2.2
    lo_l, hi_l = -0.6, 0.2
    tol_f = 0.01 * (hi_f - lo_f)
    tol_l = 0.01 * (hi_l - lo_l)
    assert draws[:, 0].min() <= lo_f + tol_f and draws[:, 0].max() >= hi_f - tol_f
    assert draws[:, 0].min() >= lo_f and draws[:, 0].max() <= hi_f
    assert draws[:, 1].min() <= lo_l + tol_l and draws[:, 1].max() >= hi_l - tol_l
    assert draws[:, 1].min() >= lo_l and draws[:, 1].max() <= hi_l


def test_photometric_sampler_covers_bounds():
    # per-channel-constant texture: flips and rotations leave it unchanged,
    # so each draw's brightness/contrast can be read back exactly
    theta = np.empty((8, 8, 3))
    theta[:, :, 0], theta[:, :, 1], theta[:, :, 2] = 0.25, 0.75, 0.5
    params = AugmentParams()
    rng = np.random.default_rng(12)
    bs, cs = [], []
    for _ in range(1000):
        out = texture_augment(dc.constant(theta), params, rng).data
        bs.append(out[:, :, 2].mean() - 0.5)
        cs.append((out[:, :, 1].mean() - out[:, :, 0].mean()) / 0.5 - 1.0)
    bs, cs = np.array(bs), np.array(cs)
    assert bs.min() <= -0.2 + 0.004 and bs.max() >= 0.2 - 0.004
    assert np.all(np.abs(bs) <= 0.2 + 1e-12)
    assert cs.min() <= -0.1 + 0.002 and cs.max() >= 0.1 - 0.002
    assert np.all(np.abs(cs) <= 0.1 + 1e-9)


def test_flip_rotation_sampler_covers_orbit():
    # an asymmetric texture has 8 distinct images under flips+right angles
    rng0 = np.random.default_rng(0)
    theta = rng0.random((6, 6, 3))
    params = AugmentParams(brightness=0.0, contrast=0.0)
    rng = np.random.default_rng(13)
    seen = set()
    for _ in range(200):
        out = texture_augment(dc.constant(theta), params, rng).data
        seen.add(out.tobytes())
    assert len(seen) == 8


def test_fixed_placement_is_box_center():
    assert PlacementSampling().fixed() == (2.0, -0.2)


def test_inverted_jitter_range_rejected():
    with pytest.raises(AttackError):
        PlacementSampling(forward_jitter=(0.4, 0.0))


# ---------------------------------------------------------------------------
# optimization loop


def test_attack_is_deterministic(tiny_world):
    scenes, mde, ss = tiny_world
    cfg = tiny_config()
    a = generate_patch(scenes, mde, ss, cfg).artifact
    b = generate_patch(scenes, mde, ss, cfg).artifact
    assert np.array_equal(a.theta, b.theta)
    assert a.curve == b.curve


def test_attack_output_in_unit_box(tiny_world):
    scenes, mde, ss = tiny_world
    a = generate_patch(scenes, mde, ss, tiny_config()).artifact
    assert a.theta.shape == (16, 16, 3)
    assert a.theta.min() >= 0.0 and a.theta.max() <= 1.0


def test_attack_leaves_victims_frozen(tiny_world):
    scenes, mde, ss = tiny_world
    before = (mde.net.checksum(), ss.net.checksum())
    flags = [p.requires_grad for p in mde.net.parameters()]
    res = generate_patch(scenes, mde, ss, tiny_config())
    assert (mde.net.checksum(), ss.net.checksum()) == before
    assert res.mde_checksum == before[0] and res.ss_checksum == before[1]
    assert [p.requires_grad for p in mde.net.parameters()] == flags


def test_attack_no_eot_trajectories_repeat(tiny_world):
    # with augmentation forced off and a fixed placement the loop has no
    # stochasticity left; two runs log identical per-step losses
    scenes, mde, ss = tiny_world
    cfg = tiny_config(
        fixed_offset=True,
        augment=AugmentParams(flip_h=False, flip_v=False, rotation=0,
                              brightness=0.0, contrast=0.0))
    r1 = generate_patch(scenes, mde, ss, cfg)
    r2 = generate_patch(scenes, mde, ss, cfg)
    assert r1.artifact.step_log == r2.artifact.step_log


def test_attack_final_not_worse_than_initial(tiny_world):
    scenes, mde, ss = tiny_world
    a = generate_patch(scenes, mde, ss, tiny_config(epochs=3)).artifact
    assert a.curve[-1]["total"] <= a.curve[0]["total"]
    assert [row["epoch"] for row in a.curve] == [0, 1, 2]


def test_regularizer_only_descends(tiny_world):
    scenes, mde, ss = tiny_world
    cfg = tiny_config(
        epochs=8, batch_size=2, lr=0.02,
        weights=LossWeights(alpha=0.0, beta_ua=0.0, beta_ta=0.0,
                            gamma=1.0, delta=0.5))
    a = generate_patch(scenes, mde, ss, cfg).artifact
    for key in ("tv", "content"):
        series = np.array([row[key] for row in a.step_log])
        k = 3
        smooth = np.convolve(series, np.ones(k) / k, mode="valid")
        frac = float(np.mean(np.diff(smooth) < 0))
        assert frac >= 0.9, f"{key} decreased in only {frac:.0%} of steps"
    assert "mde" not in a.step_log[0]


def test_attack_requires_some_weight(tiny_world):
    scenes, mde, ss = tiny_world
    zero = LossWeights(alpha=0.0, beta_ua=0.0, beta_ta=0.0, gamma=0.0, delta=0.0)
    with pytest.raises(AttackError, match="zero weight"):
        generate_patch(scenes, mde, ss, tiny_config(weights=zero))


def test_attack_rejects_empty_scene_list(tiny_world):
    _, mde, ss = tiny_world
    with pytest.raises(AttackError, match="no scenes"):
        generate_patch([], mde, ss, tiny_config())


def test_unplaceable_sampling_errors(tiny_world):
    scenes, mde, ss = tiny_world
    cfg = tiny_config(sampling=PlacementSampling(forward_base=80.0))
    with pytest.raises(AttackError, match="no visible placement"):
        generate_patch(scenes, mde, ss, cfg)


def test_nonfinite_loss_aborts_with_last_theta(tiny_world, monkeypatch):
    scenes, mde, ss = tiny_world
    monkeypatch.setattr(atk, "tv_loss",
                        lambda t: dc.mul(dc.reduce_sum(t), np.nan))
    cfg = tiny_config(weights=LossWeights(alpha=0.0, beta_ua=0.0,
                                          beta_ta=0.0, gamma=1.0, delta=0.5))
    with pytest.raises(AttackError, match="non-finite") as exc:
        generate_patch(scenes, mde, ss, cfg)
    err = exc.value
    assert err.last_good_theta is not None
    assert err.last_good_theta.shape == (16, 16, 3)
    assert err.diagnostics["epoch"] == 0


def test_ablation_paths_run(tiny_world):
    scenes, mde, ss = tiny_world
    for kw in (dict(use_dpm=False), dict(fixed_offset=True),
               dict(use_texture_augment=False),
               dict(use_final_augment=False)):
        a = generate_patch(scenes, mde, ss,
                           tiny_config(epochs=1, **kw)).artifact
        assert np.isfinite(a.curve[-1]["total"])


def test_mde_only_config_skips_ss_terms(tiny_world):
    scenes, mde, ss = tiny_world
    cfg = tiny_config(epochs=1, weights=LossWeights(
        alpha=2.0, beta_ua=0.0, beta_ta=0.0, gamma=1.0, delta=0.5))
    a = generate_patch(scenes, mde, ss, cfg).artifact
    row = a.step_log[0]
    assert "mde" in row and "ss_untargeted" not in row and "ss_targeted" not in row


# ---------------------------------------------------------------------------
# config and artifact serialization


def test_config_json_round_trip():
    cfg = AttackConfig(epochs=7, t_res=32,
                       sampling=PlacementSampling(forward_base=2.5),
                       weights=LossWeights(alpha=1.5))
    blob = json.dumps(cfg.to_dict(), sort_keys=True)
    assert attack_config_from_dict(json.loads(blob)) == cfg


def test_config_rejects_unknown_keys():
    with pytest.raises(AttackError, match="unknown attack config"):
        attack_config_from_dict({"lr": 0.01, "warp_speed": 9})


def test_config_validation():
    for kw in (dict(lr=0.0), dict(batch_size=0), dict(epochs=0),
               dict(t_res=1), dict(t_scale=0.0), dict(max_resample=0)):
        with pytest.raises(AttackError):
            AttackConfig(**kw)


def test_artifact_round_trip(tiny_world, tmp_path):
    scenes, mde, ss = tiny_world
    a = generate_patch(scenes, mde, ss, tiny_config()).artifact
    a.save(tmp_path / "patch")
    b = PatchArtifact.load(tmp_path / "patch")
    # texture round-trips through the float32 file exactly
    assert np.array_equal(b.theta, a.theta.astype("<f4").astype(np.float64))
    assert b.config == a.config
    assert b.provenance == a.provenance
    assert len(b.curve) == len(a.curve)
    for ra, rb in zip(a.curve, b.curve):
        assert rb["epoch"] == ra["epoch"]
        for key in ("total", "mde", "tv"):
            assert rb[key] == pytest.approx(ra[key], rel=1e-9)


def test_artifact_save_is_byte_stable(tiny_world, tmp_path):
    scenes, mde, ss = tiny_world
    a = generate_patch(scenes, mde, ss, tiny_config()).artifact
    digests = []
    for name in ("one", "two"):
        out = tmp_path / name
        a.save(out)
        blob = b"".join(p.read_bytes() for p in sorted(out.iterdir()))
        digests.append(hashlib.sha256(blob).hexdigest())
    assert digests[0] == digests[1]


def test_artifact_load_rejects_truncated_texture(tiny_world, tmp_path):
    scenes, mde, ss = tiny_world
    a = generate_patch(scenes, mde, ss, tiny_config()).artifact
    a.save(tmp_path / "patch")
    raw = (tmp_path / "patch" / "texture.f32").read_bytes()
    (tmp_path / "patch" / "texture.f32").write_bytes(raw[:-8])
    with pytest.raises(AttackError, match="texture.f32"):
        PatchArtifact.load(tmp_path / "patch")


def test_baseline_patches():
    for kind in ("naive", "artistic", "random"):
        p = make_baseline_patch(kind, 24)
        assert p.shape == (24, 24, 3)
        assert p.min() >= 0.0 and p.max() <= 1.0
    r1 = make_baseline_patch("random", 24, seed=5)
    r2 = make_baseline_patch("random", 24, seed=5)
    assert np.array_equal(r1, r2)
    with pytest.raises(AttackError, match="unknown baseline"):
        make_baseline_patch("sticker", 24)


def test_hash_scenes_sensitivity(tiny_world):
    scenes, _, _ = tiny_world
    h1 = hash_scenes(scenes)
    assert h1 == hash_scenes(list(scenes))
    assert h1 != hash_scenes(scenes[::-1])
    assert len(h1) == 64
