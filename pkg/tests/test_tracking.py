import numpy as np
import pytest

from pofcap.evaluation import mpjpe
from pofcap.fitting import build_model
from pofcap.pofield import Observation
from pofcap.skeleton import Camera, ModelParams, PoseState, forward_kinematics, part_orientations
from pofcap.synth import MotionConfig, SceneConfig, generate_sequence, oracle_flow, rng_for
from pofcap.tracking import (FlowError, FlowTargets, TrackConfig, file_provider, identity_provider,
                             refine_sequence, residuals_dz, residuals_tex)

MODEL = build_model({"kind": "body"})
SKEL = MODEL.skeleton
CAM = Camera.weak(1.8, 184, 184)


def exact_observation(frame, camera=CAM):
    """Observation that agrees with the frame's own projections and orientations."""
    kp = camera.project(frame.joints)
    u = part_orientations(frame.joints, SKEL)
    return Observation(kp, np.ones(18), np.ones(18, bool), u, np.ones(17, bool))


def random_params(seed):
    rng = np.random.default_rng(seed)
    return ModelParams(0.4 * rng.standard_normal((18, 3)), rng.uniform(0.9, 1.1, 17),
                       [0, 0, 400])


def test_tex_examples():
    params = random_params(0)
    pts, _ = PoseState(params, SKEL).markers(False)
    xy = CAM.project(pts)
    ids = np.arange(len(xy))
    assert np.allclose(residuals_tex(params, SKEL, CAM, FlowTargets(ids, xy, np.ones(len(xy), bool))), 0)
    shifted = xy.copy()
    shifted[7] -= [1.0, 1.0]
    r = residuals_tex(params, SKEL, CAM, FlowTargets(ids, shifted, np.ones(len(xy), bool)))
    assert np.isclose(r @ r, 2.0)
    none = FlowTargets(ids, shifted, np.zeros(len(xy), bool))
    assert len(residuals_tex(params, SKEL, CAM, none)) == 0
    r, J = residuals_tex(params, SKEL, CAM, none, jacobian=True)
    assert J.shape == (0, params.size)


def test_invalid_markers_are_excluded():
    params = random_params(1)
    pts, _ = PoseState(params, SKEL).markers(False)
    xy = CAM.project(pts)
    valid = np.ones(len(xy), bool)
    valid[::3] = False
    bad = xy.copy()
    bad[::3] += 50.0
    r = residuals_tex(params, SKEL, CAM, FlowTargets(np.arange(len(xy)), bad, valid))
    assert len(r) == 2 * valid.sum() and np.allclose(r, 0)


def test_dz_examples():
    params = random_params(2)
    z = forward_kinematics(params, SKEL)[:, 2]
    assert np.allclose(residuals_dz(params, SKEL, z, 0.25), 0)
    prev = z.copy()
    prev[3] -= 2.0
    r = residuals_dz(params, SKEL, prev, 0.25)
    assert abs(r @ r - 1.0) <= 1e-12
    assert len(residuals_dz(params, SKEL, prev, 0.0)) == 0


def test_dz_has_no_xy_translation_gradient():
    params = random_params(3)
    z = forward_kinematics(params, SKEL)[:, 2] + 1.0
    _, J = residuals_dz(params, SKEL, z, 0.25, jacobian=True)
    off = 3 * 18 + 17
    assert np.all(J[:, off:off + 2] == 0.0)
    assert np.allclose(J[:, off + 2], 0.5)


def test_flow_targets_validation_and_io(tmp_path):
    with pytest.raises(ValueError):
        FlowTargets([0, 1], [[0, 0], [np.nan, 0]], [True, True])
    with pytest.raises(ValueError):
        FlowTargets([0, 1], [[0, 0]], [True, True])
    # non-finite targets are allowed when flagged invalid
    t = FlowTargets([0, 1], [[1.5, 2.5], [np.nan, 0]], [True, False])
    t.save(tmp_path / "f.poft")
    back = FlowTargets.load(tmp_path / "f.poft")
    assert np.array_equal(back.ids, t.ids) and np.array_equal(back.valid, t.valid)
    assert np.array_equal(back.xy[0], t.xy[0])


def test_track_config():
    cfg = TrackConfig()
    assert (cfg.pof_weight("body"), cfg.pof_weight("lhand"), cfg.pof_weight("rhand")) == \
        (22500.0, 900.0, 900.0)
    assert cfg.w_dz == 0.25 and cfg.max_iter == 30
    assert TrackConfig.from_dict(cfg.to_dict()) == cfg


def static_sequence(n=30, seed=0):
    cfg = SceneConfig(seed=seed, n_frames=n,
                      motion=MotionConfig(velocity_bound=0.0, root_velocity_bound=0.0))
    return generate_sequence(cfg)


def test_single_frame_is_returned_unchanged():
    frames = static_sequence(1)
    obs = exact_observation(frames[0])
    res = refine_sequence([(obs, frames[0].params)], identity_provider(SKEL, CAM))
    assert len(res.params) == 1 and res.params[0] is frames[0].params


def test_identity_flow_fixed_point():
    frames = static_sequence(30)
    inits = [f.params for f in frames]
    cfg = TrackConfig()
    res = refine_sequence([(exact_observation(f), f.params) for f in frames],
                          identity_provider(SKEL, CAM), cfg)
    assert not any(res.flags)
    for a, b in zip(res.params, inits):
        assert np.max(np.abs(a.to_vector() - b.to_vector())) <= cfg.fit.solver.xtol
    assert all(p.phi.tobytes() == res.params[0].phi.tobytes() for p in res.params)
    assert all(p.sigma.tobytes() == res.params[0].sigma.tobytes() for p in res.params)


def test_shape_frozen_from_first_frame():
    frames = static_sequence(5, seed=1)
    inits = [f.params.replace(phi=f.params.phi * (1 + 0.02 * i)) for i, f in enumerate(frames)]
    res = refine_sequence([(exact_observation(f), p) for f, p in zip(frames, inits)],
                          identity_provider(SKEL, CAM))
    for p in res.params:
        assert p.phi.tobytes() == inits[0].phi.tobytes()


def test_provider_failure_passes_frame_through():
    frames = static_sequence(4, seed=2)

    def provider(prev, cur, index):
        if index == 2:
            raise FlowError("no flow for this frame")
        return identity_provider(SKEL, CAM)(prev, cur, index)

    inits = [f.params for f in frames]
    res = refine_sequence([(exact_observation(f), p) for f, p in zip(frames, inits)], provider)
    assert res.flags[2] and "no flow" in res.flags[2]
    assert [bool(f) for f in res.flags] == [False, False, True, False]
    assert np.array_equal(res.params[2].to_vector(), inits[2].to_vector())


def test_file_provider(tmp_path):
    t = FlowTargets([0], [[1.0, 2.0]], [True])
    t.save(tmp_path / "1.poft")
    provider = file_provider({1: tmp_path / "1.poft", 2: tmp_path / "missing.poft"})
    assert np.array_equal(provider(None, None, 1).xy, t.xy)
    with pytest.raises(FlowError):
        provider(None, None, 2)
    with pytest.raises(FlowError):
        provider(None, None, 3)


def test_oracle_refinement_reduces_error():
    cfg = SceneConfig(seed=4, n_frames=10)
    frames = generate_sequence(cfg)
    rng = rng_for(4, 99)
    noisy = [f.params.replace(theta=f.params.theta + np.deg2rad(2.0) * rng.standard_normal((18, 3)))
             for f in frames]
    obs = [exact_observation(f) for f in frames]
    res = refine_sequence(list(zip(obs, noisy)),
                          lambda prev, cur, i: oracle_flow(frames[i], CAM))
    gt = np.array([f.joints for f in frames])
    before = np.array([forward_kinematics(p, SKEL) for p in noisy])
    after = np.array([forward_kinematics(p, SKEL) for p in res.params])
    assert mpjpe(after, gt, "root", SKEL.root) <= mpjpe(before, gt, "root", SKEL.root)
