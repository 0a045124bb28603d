import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pofcap.fitting import build_model
from pofcap.skeleton import Camera, PoseState, forward_kinematics, part_orientations
from pofcap.synth import (MotionConfig, NoiseConfig, SceneConfig, SynthError, dropout_mask,
                          filter_frames, generate_sequence, load_sequence, oracle_flow,
                          perturb_keypoints, perturb_orientations, render_observation, rng_for,
                          write_sequence)
from pofcap.tracking import residuals_tex

CAM = Camera.weak(1.8, 184, 184)


def bone_lengths(joints, skel):
    return np.array([np.linalg.norm(joints[n] - joints[m]) for m, n in skel.parts])


def test_same_seed_is_bit_identical():
    cfg = SceneConfig(seed=11, n_frames=6)
    a, b = generate_sequence(cfg), generate_sequence(cfg)
    for fa, fb in zip(a, b):
        assert fa.params.to_vector().tobytes() == fb.params.to_vector().tobytes()
        assert fa.joints.tobytes() == fb.joints.tobytes()
    c = generate_sequence(SceneConfig(seed=12, n_frames=6))
    assert not np.array_equal(a[0].joints, c[0].joints)


def test_zero_velocity_gives_constant_pose():
    cfg = SceneConfig(seed=3, n_frames=8, motion=MotionConfig(0.0, 0.0))
    frames = generate_sequence(cfg)
    for f in frames[1:]:
        assert np.array_equal(f.params.to_vector(), frames[0].params.to_vector())


@settings(max_examples=10)
@given(st.integers(0, 10_000))
def test_bones_are_rigid_and_motion_smooth(seed):
    cfg = SceneConfig(seed=seed, n_frames=20, shape_std=0.05)
    frames = generate_sequence(cfg)
    skel = cfg.model.skeleton
    lengths = np.array([bone_lengths(f.joints, skel) for f in frames])
    assert np.allclose(lengths, lengths[0], rtol=1e-12, atol=1e-9)
    theta = np.array([f.params.theta for f in frames])
    # bounded angular velocity: at most bound / fps per frame and axis
    step = np.abs(np.diff(np.delete(theta, skel.root, axis=1), axis=0))
    assert step.max() <= cfg.motion.velocity_bound / cfg.motion.fps + 1e-12


def test_sequence_is_centred_in_image():
    cfg = SceneConfig(seed=5)
    frame = generate_sequence(cfg)[0]
    toes = cfg.model.toes
    pts = PoseState(frame.params, cfg.model.skeleton).attached(toes.anchor, toes.frame,
                                                                toes.local, False)[0]
    xy = CAM.project(np.vstack([frame.joints, pts]))
    mid = 0.5 * (xy.min(axis=0) + xy.max(axis=0))
    assert np.allclose(mid, [183.5, 183.5], atol=1e-6)
    assert np.all((xy > 0) & (xy < 367))


def test_azimuth_rotates_about_vertical():
    skel = build_model({"kind": "body"}).skeleton

    def hips(az):
        cfg = SceneConfig(seed=2, azimuth=az, elevation=0.0, motion=MotionConfig(0.0, 0.0))
        j = generate_sequence(cfg)[0].joints
        return j[skel.index("LHip")] - j[skel.index("RHip")]

    quarter = np.array([[0.0, 0, 1], [0, 1, 0], [-1, 0, 0]])
    assert np.allclose(hips(90.0), quarter @ hips(0.0), atol=1e-9)


def test_noiseless_render_round_trip():
    cfg = SceneConfig(seed=7)
    frame = generate_sequence(cfg)[0]
    model = cfg.model
    rf = render_observation(frame, model, cfg.camera)
    obs = rf.observation
    xy = cfg.camera.project(frame.joints)
    assert obs.present.all()
    assert np.max(np.abs(obs.keypoints - xy)) <= 1.0
    u = part_orientations(frame.joints, model.skeleton)
    cos = np.clip(np.sum(obs.orientations * u, axis=1), -1, 1)
    assert np.degrees(np.arccos(cos)).max() <= 2.0
    assert obs.toes is not None and obs.toes.present.all()


def test_full_dropout_gives_empty_observation():
    cfg = SceneConfig(seed=1, noise=NoiseConfig(dropout=1.0))
    frame = generate_sequence(cfg)[0]
    obs = render_observation(frame, cfg.model, cfg.camera, cfg.noise, rng_for(1, 2)).observation
    assert obs.is_empty()


def test_keypoint_noise_rms():
    rng = rng_for(0, 42)
    xy = np.zeros((10_000, 2))
    d = perturb_keypoints(xy, 2.0, rng) - xy
    rms = math.sqrt(np.mean(np.sum(d ** 2, axis=1)))
    assert abs(rms - 2 * math.sqrt(2)) <= 0.05 * 2 * math.sqrt(2)


def test_noise_helpers_share_draws_across_levels():
    a = perturb_keypoints(np.zeros((5, 2)), 1.0, rng_for(0, 1))
    b = perturb_keypoints(np.zeros((5, 2)), 2.0, rng_for(0, 1))
    assert np.allclose(b, 2 * a)
    r0, r1 = rng_for(0, 2), rng_for(0, 2)
    perturb_orientations(np.eye(3), 0.0, r0)
    perturb_orientations(np.eye(3), 0.3, r1)
    assert r0.uniform() == r1.uniform()
    u = perturb_orientations(np.eye(3), 0.3, rng_for(0, 3))
    assert np.allclose(np.linalg.norm(u, axis=1), 1.0)
    assert dropout_mask(100, 0.0, rng_for(0, 4)).all()
    assert not dropout_mask(100, 1.0, rng_for(0, 4)).any()


def test_noise_config_validation():
    with pytest.raises(SynthError):
        NoiseConfig(keypoint_sigma=-1)
    with pytest.raises(SynthError):
        NoiseConfig(dropout=1.5)


def test_oracle_flow_examples():
    cfg = SceneConfig(seed=4, n_frames=2)
    frames = generate_sequence(cfg)
    skel = cfg.model.skeleton
    targets = oracle_flow(frames[1], CAM)
    assert np.allclose(residuals_tex(frames[1].params, skel, CAM, targets), 0.0)
    # an offset estimate does not change the targets, which are the GT projections
    assert np.array_equal(targets.xy, CAM.project(frames[1].markers))
    off = frames[1].params.replace(t=frames[1].params.t + 3.0)
    assert np.linalg.norm(residuals_tex(off, skel, CAM, targets)) > 0
    noisy = oracle_flow(frames[1], CAM, 0.5, rng_for(0, 9))
    assert np.array_equal(noisy.valid, targets.valid)
    assert not np.array_equal(noisy.xy, targets.xy)


def test_oracle_flow_visibility_propagates():
    frame = generate_sequence(SceneConfig(seed=6))[0]
    targets = oracle_flow(frame, CAM)
    assert 0 < targets.valid.sum() < len(targets.valid)
    assert oracle_flow(frame, CAM, visibility=False).valid.all()
    skel = build_model({"kind": "body"}).skeleton
    r = residuals_tex(frame.params, skel, CAM, targets)
    assert len(r) == 2 * targets.valid.sum()
    # a part's markers share one validity flag
    for p in range(skel.n_parts):
        flags = targets.valid[frame.marker_parts == p]
        assert flags.all() or not flags.any()


def test_filter_frames_examples():
    cfg = SceneConfig(seed=8, n_frames=10)
    frames = generate_sequence(cfg)
    skel = cfg.model.skeleton
    joints = np.array([f.joints for f in frames])
    assert filter_frames(joints, skel).tolist() == list(range(10))
    stretched = joints.copy()
    k = skel.part_child[4]
    m = skel.parts[4][0]
    avg = np.linalg.norm(joints[:, k] - joints[:, m], axis=1).mean()
    d = stretched[3, k] - stretched[3, m]
    # 1.3x the sequence average for this bone in frame 3
    stretched[3, k] = stretched[3, m] + d / np.linalg.norm(d) * avg * 1.3
    kept = filter_frames(stretched, skel, 0.2)
    assert 3 not in kept and len(kept) == 9
    mixed = np.array([forward_kinematics(frames[0].params.replace(phi=np.full(17, s)), skel)
                      for s in (1.0, 1.0, 1.2, 0.8)])
    assert filter_frames(mixed, skel, 0.0).tolist() == [0, 1]


def test_scene_config_round_trip(tmp_path):
    cfg = SceneConfig(seed=3, n_frames=2, noise=NoiseConfig(1.0, 0.1, 0.05),
                      camera=Camera.perspective(600, 184, 184), azimuth=45.0, elevation=-15.0)
    assert SceneConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(SynthError):
        SceneConfig.from_dict({**cfg.to_dict(), "bogus": 1})


def test_write_and_load_sequence(tmp_path):
    cfg = SceneConfig(seed=9, n_frames=2, noise=NoiseConfig(keypoint_sigma=1.0))
    manifest = write_sequence(tmp_path / "seq", cfg)
    assert manifest["n_frames"] == 2
    seq = load_sequence(tmp_path / "seq")
    assert seq.config == cfg
    frames = generate_sequence(cfg)
    assert np.array_equal(seq.gt_joints(), np.array([f.joints for f in frames]))
    rf = render_observation(frames[1], cfg.model, cfg.camera, cfg.noise, rng_for(9, 2, 1))
    obs = seq.observation(1)
    assert np.array_equal(obs.keypoints, rf.observation.keypoints)
    assert np.array_equal(obs.orientations, rf.observation.orientations)
    assert np.array_equal(obs.toes.xy, rf.observation.toes.xy)


def test_total_model_hand_crops(tmp_path):
    cfg = SceneConfig(seed=10, model_spec={"kind": "total", "k_sigma": 2}, depth=150.0)
    frame = generate_sequence(cfg)[0]
    rf = render_observation(frame, cfg.model, cfg.camera)
    assert set(rf.fields) == {"body", "lhand", "rhand"}
    assert rf.crops["rhand"].flip and not rf.crops["lhand"].flip
    skel = cfg.model.skeleton
    for key in ("lhand", "rhand"):
        hand = getattr(rf.observation, key)
        nm = cfg.model.networks[key]
        xy = cfg.camera.project(frame.joints[nm.joint_map])
        ok = hand.present
        assert ok.sum() >= 15
        # crop px are finer than image px, so decode error stays below one image px
        assert np.max(np.abs(hand.keypoints[ok] - xy[ok])) <= 1.0
    write_sequence(tmp_path / "s", cfg)
    obs = load_sequence(tmp_path / "s").observation(0)
    assert np.allclose(obs.rhand.keypoints, rf.observation.rhand.keypoints)
    assert skel.n_joints == 18 + 2 * 20
