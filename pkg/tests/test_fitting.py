import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blocks import face_model, gradient_errors, random_config
from oracles import central_difference, relative_error
from pofcap.evaluation import mpjpe
from pofcap.fitting import (DOWN, FitConfig, FitError, FitResult, Stage, Weights, assemble,
                            build_model, check_schedule, default_init, default_schedule, fit_frame,
                            inject_vertical_orientations, objective_cost, residuals_face,
                            residuals_keypoints2d, residuals_pof, residuals_regularizers)
from pofcap.pofield import Observation, Points2D
from pofcap.skeleton import (LEG_JOINTS, TORSO_JOINTS, BodyModel, Camera, ModelParams, PoseState,
                             forward_kinematics, part_orientations)
from pofcap.solver import solve_lm
from pofcap.synth import SceneConfig, generate_sequence, render_observation

CAM = Camera.weak(1.8, 184, 184)


def scene(seed, spec=None, **kw):
    cfg = SceneConfig(seed=seed, **({"model_spec": spec} if spec else {}), **kw)
    frame = generate_sequence(cfg)[0]
    obs = render_observation(frame, cfg.model, cfg.camera).observation
    return cfg, frame, obs


class Kp:
    def __init__(self, xy, present=None, conf=None):
        self.keypoints = np.asarray(xy, float).reshape(-1, 2)
        n = len(self.keypoints)
        self.present = np.ones(n, bool) if present is None else np.asarray(present, bool)
        self.confidence = np.ones(n) if conf is None else np.asarray(conf, float)


def test_weight_defaults():
    w = Weights()
    assert (w.wpof_body, w.wprior_body, w.wpof_hand, w.wprior_hand) == (22500, 200, 2500, 10)
    assert (w.w_phi, w.w_sigma, w.w2d_body, w.w2d_hand) == (0.01, 100, 1, 1)
    assert w.for_network("lhand") == (1, 2500) and w.prior_weight("rhand") == 10
    with pytest.raises(FitError):
        Weights(w_phi=-1)


# residual block examples

SKEL = build_model({"kind": "body"}).skeleton


def _rest_params():
    theta = np.zeros((18, 3))
    return ModelParams(theta, np.ones(17), [0, 0, 400])


def test_keypoint_examples():
    params = _rest_params()
    proj = CAM.project(forward_kinematics(params, SKEL))
    r = residuals_keypoints2d(params, SKEL, CAM, Kp(proj))
    assert r.shape == (36,) and np.allclose(r, 0)
    shifted = proj.copy()
    shifted[4] += [3, 4]
    r = residuals_keypoints2d(params, SKEL, CAM, Kp(shifted))
    assert np.isclose(r @ r, 25.0)
    present = np.ones(18, bool)
    present[[2, 7]] = False
    r = residuals_keypoints2d(params, SKEL, CAM, Kp(shifted, present))
    assert r.shape == (32,)
    half = residuals_keypoints2d(params, SKEL, CAM, Kp(shifted, conf=np.full(18, 0.5)))
    assert np.isclose(half @ half, 25.0 / 4)


@pytest.mark.parametrize("form", ["scalar", "chord"])
def test_pof_examples(form):
    params = _rest_params()
    u = part_orientations(forward_kinematics(params, SKEL), SKEL)
    r = residuals_pof(params, SKEL, u, 22500, form=form)
    # sqrt(1 - dot) turns a 1e-16 rounding error in the dot into ~1e-8
    assert len(r) == (17 if form == "scalar" else 51) and r @ r <= 1e-9
    # replace one part's observation with an orthogonal direction
    obs = u.copy()
    p = 3
    ortho = np.cross(u[p], [0.3, 0.4, 0.5])
    obs[p] = ortho / np.linalg.norm(ortho)
    present = np.zeros(17, bool)
    present[p] = True
    r = residuals_pof(params, SKEL, obs, 22500, present, form=form)
    assert abs(r @ r - 22500.0) <= 1e-9
    obs[p] = -u[p]
    r = residuals_pof(params, SKEL, obs, 1.0, present, form=form)
    assert abs(r @ r - 2.0) <= 1e-12
    assert len(residuals_pof(params, SKEL, obs, 1.0, np.zeros(17, bool), form=form)) == 0


def test_pof_forms_have_equal_cost():
    model, params, camera, obs, *_ = random_config(11)
    a = residuals_pof(params, model.skeleton, obs["orient"], 22500, obs["orient_present"],
                      form="scalar")
    b = residuals_pof(params, model.skeleton, obs["orient"], 22500, obs["orient_present"],
                      form="chord")
    assert np.isclose(a @ a, b @ b, rtol=1e-12)
    with pytest.raises(FitError):
        residuals_pof(params, model.skeleton, obs["orient"], form="other")


def test_face_examples():
    base = BodyModel.body(toes=False, face=True, face_basis=np.zeros((3 * 41, 1)))
    F = len(base.face)
    basis = np.zeros((3 * F, 1))
    basis[0::3, 0] = 1.0
    model = BodyModel.body(toes=False, face=True, face_basis=basis)
    skel = model.skeleton
    cam = Camera.weak(2.0, 184, 184)
    params = ModelParams(np.zeros((18, 3)), np.ones(17), [0, 0, 400], [0.0])
    state = PoseState(params, skel)
    pts, _ = state.attached(model.face.anchor, model.face.frame, model.face.local, False)
    aligned = Points2D(cam.project(pts), np.ones(F, bool))
    assert np.allclose(residuals_face(params, model, cam, aligned), 0)
    moved = params.replace(sigma=[2.0])
    pts2, _ = PoseState(moved, skel).attached(model.face.anchor, model.face.frame,
                                              model.face_local(moved.sigma), False)
    delta = cam.project(pts2) - cam.project(pts)
    assert np.allclose(delta, [[4.0, 0.0]] * F)
    r = residuals_face(moved, model, cam, aligned).reshape(-1, 2)
    assert np.allclose(r, [[-4.0, 0.0]] * F)
    assert len(residuals_face(params, model, cam, None)) == 0


def test_regularizer_examples():
    w = Weights()
    params = ModelParams(np.zeros((18, 3)), np.ones(17), np.zeros(3), np.zeros(2))
    assert np.allclose(residuals_regularizers(params, w), 0)
    phi = np.ones(17)
    phi[5] = 1.5
    r = residuals_regularizers(params.replace(phi=phi), w)
    assert abs(r @ r - 0.0025) <= 1e-15
    r = residuals_regularizers(params.replace(sigma=[0.1, 0.0]), w)
    assert abs(r @ r - 1.0) <= 1e-12


# gradients


@pytest.mark.parametrize("seed", range(10))
def test_block_jacobians_match_central_differences(seed):
    errs = gradient_errors(seed)
    assert max(errs.values()) <= 1e-4, errs


def test_hand_blocks_jacobians():
    cfg, frame, obs = scene(4, {"kind": "total", "k_sigma": 3})
    fcfg = FitConfig(model_spec={"kind": "total", "k_sigma": 3})
    params = frame.params.replace(theta=frame.params.theta + 0.05)
    system = assemble(fcfg.stages()[-1], obs, params, fcfg)
    z = system.initial()
    r, J = system(z)
    fd = central_difference(lambda x: system(x, False)[0], z)
    assert relative_error(J, fd) <= 1e-4
    assert J.shape == (len(r), system.free.sum())


def test_residual_system_jacobian_on_free_columns():
    cfg, frame, obs = scene(2)
    fcfg = FitConfig()
    params = default_init(obs, fcfg)
    for stage in fcfg.stages():
        system = assemble(stage, obs, params, fcfg)
        z = system.initial()
        r, J = system(z)
        fd = central_difference(lambda x: system(x, False)[0], z)
        assert relative_error(J, fd) <= 1e-4


# assembly


def test_torso_stage_rows_and_mask():
    cfg, frame, obs = scene(1)
    fcfg = FitConfig()
    model = fcfg.model
    skel = model.skeleton
    params = default_init(obs, fcfg)
    torso = fcfg.stages()[0]
    assert torso.joints == TORSO_JOINTS
    system = assemble(torso, obs, params, fcfg)
    ids = [skel.index(n) for n in TORSO_JOINTS]
    n_kp = int(obs.present[ids].sum())
    n_pof = sum(1 for p, (m, n) in enumerate(skel.parts)
                if m in ids and n in ids and obs.orient_present[p])
    blocks = system.block_costs(params)
    assert set(blocks) == {"kp2d", "pof", "prior"}
    assert len(system._last_blocks["kp2d"]) == 2 * n_kp
    assert len(system._last_blocks["pof"]) == 3 * n_pof
    free = np.zeros(params.size, bool)
    for j in ids:
        free[3 * j:3 * j + 3] = True
    off = 3 * 18 + 17
    free[off:off + 2] = True  # t_x, t_y (depth is unobservable under a weak camera)
    assert np.array_equal(system.free, free)


def test_full_stage_row_count():
    cfg, frame, obs = scene(1)
    fcfg = FitConfig()
    params = default_init(obs, fcfg)
    system = assemble(fcfg.stages()[-1], obs, params, fcfg)
    r, J = system.evaluate(params)
    assert len(r) == sum(len(v) for v in system._last_blocks.values()) == system.n_rows
    assert J.shape == (len(r), params.size)


def test_empty_observation_has_no_constraints():
    fcfg = FitConfig()
    params = ModelParams.rest(SKEL, t=(0, 0, 400))
    with pytest.raises(FitError, match="no constraints"):
        assemble(fcfg.stages()[0], Observation.empty(18, 17), params, fcfg)
    with pytest.raises(FitError, match="no constraints"):
        fit_frame(Observation.empty(18, 17), fcfg)


def test_wrist_rule_ignores_hand_root_keypoint():
    spec = {"kind": "total", "k_sigma": 2}
    cfg, frame, obs = scene(6, spec)
    fcfg = FitConfig(model_spec=spec)
    params = frame.params
    system = assemble(fcfg.stages()[-1], obs, params, fcfg)
    r0, _ = system.evaluate(params, False)
    moved = obs.lhand.keypoints.copy()
    moved[0] += [25.0, -13.0]
    obs2 = obs.replace(lhand=obs.lhand.replace(keypoints=moved))
    r1, _ = assemble(fcfg.stages()[-1], obs2, params, fcfg).evaluate(params, False)
    assert np.array_equal(r0, r1)
    moved = obs.lhand.keypoints.copy()
    moved[5] += [25.0, -13.0]
    obs3 = obs.replace(lhand=obs.lhand.replace(keypoints=moved))
    r2, _ = assemble(fcfg.stages()[-1], obs3, params, fcfg).evaluate(params, False)
    assert not np.array_equal(r0, r2)


@settings(max_examples=15)
@given(st.integers(0, 17))
def test_dropping_absent_keypoint_keeps_other_rows(k):
    model, params, camera, obs, *_ = random_config(3)
    kp = Kp(obs["xy"], np.ones(18, bool), obs["conf"])
    full = residuals_keypoints2d(params, model.skeleton, camera, kp).reshape(-1, 2)
    present = np.ones(18, bool)
    present[k] = False
    fewer = residuals_keypoints2d(params, model.skeleton, camera,
                                  Kp(obs["xy"], present, obs["conf"])).reshape(-1, 2)
    assert np.array_equal(fewer, np.delete(full, k, axis=0))


@settings(max_examples=15)
@given(st.integers(0, 1000), st.floats(0.5, 2.0))
def test_pof_invariant_to_uniform_scaling(seed, c):
    model, params, camera, obs, *_ = random_config(seed)
    scaled = params.replace(phi=c * params.phi, t=c * params.t)
    assert np.allclose(forward_kinematics(scaled, model.skeleton),
                       c * forward_kinematics(params, model.skeleton), atol=1e-9)
    for form in ("scalar", "chord"):
        a = residuals_pof(params, model.skeleton, obs["orient"], 22500, form=form)
        b = residuals_pof(scaled, model.skeleton, obs["orient"], 22500, form=form)
        assert np.allclose(a, b, atol=1e-7)


# schedule and config


def test_default_schedules():
    body = default_schedule(build_model({"kind": "body"}))
    assert [s.name for s in body] == ["torso", "limbs", "full"]
    check_schedule(body)
    hand = default_schedule(build_model({"kind": "hand"}))
    assert [s.name for s in hand] == ["palm", "full"]
    check_schedule(hand)


def test_schedule_validation():
    with pytest.raises(FitError, match="final stage"):
        check_schedule((Stage("a", ("Neck",)),))
    with pytest.raises(FitError, match="nested"):
        check_schedule((Stage("a", ("Neck", "RHip")), Stage("b", ("Neck",)), Stage("c")))
    with pytest.raises(FitError):
        check_schedule(())


def test_fit_config_round_trip(tmp_path):
    cfg = FitConfig(weights=Weights(w_toes=2.0), priors=None, pof_form="scalar",
                    schedule=default_schedule(build_model({"kind": "body"})),
                    camera=Camera.perspective(600, 180, 180), depth=350.0)
    path = tmp_path / "fit.json"
    cfg.save(path)
    back = FitConfig.load(path)
    assert back.to_dict() == cfg.to_dict()
    assert json.loads(path.read_text())["schema"] == "pofcap.fit/1"
    with pytest.raises(FitError):
        FitConfig.from_dict({"schema": "pofcap.fit/0"})
    with pytest.raises(FitError):
        build_model({"kind": "octopus"})


def test_fit_result_round_trip():
    cfg, frame, obs = scene(0)
    res = fit_frame(obs, FitConfig())
    back = FitResult.from_dict(json.loads(json.dumps(res.to_dict())))
    assert np.array_equal(back.params.to_vector(), res.params.to_vector())
    assert back.converged == res.converged and back.block_costs == res.block_costs


# fitting


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_noiseless_fit_recovers_pose(seed):
    cfg, frame, obs = scene(seed)
    res = fit_frame(obs, FitConfig(priors=None))
    err = mpjpe(forward_kinematics(res.params, SKEL), frame.joints, "root", SKEL.root)
    assert res.converged and err <= 0.5


def test_prior_bias_is_bounded():
    # the prior pulls a noiseless fit away from the truth, but only by centimetres
    cfg, frame, obs = scene(0)
    res = fit_frame(obs, FitConfig())
    assert mpjpe(forward_kinematics(res.params, SKEL), frame.joints, "root", SKEL.root) <= 4.0


@pytest.mark.parametrize("spec", [{"kind": "hand"}, {"kind": "hand", "side": "right"},
                                  {"kind": "total", "k_sigma": 10}])
def test_other_models_fit(spec):
    cfg, frame, obs = scene(3, spec)
    res = fit_frame(obs, FitConfig(model_spec=spec, priors=None))
    skel = cfg.model.skeleton
    assert res.converged
    assert mpjpe(forward_kinematics(res.params, skel), frame.joints, "root", skel.root) <= 0.5


def test_missing_legs_with_vertical_assumption():
    cfg, frame, obs = scene(5)
    skel = SKEL
    legs = [skel.index(n) for n in LEG_JOINTS]
    present = obs.present.copy()
    present[legs] = False
    op = obs.orient_present.copy()
    leg_parts = [p for p, (m, n) in enumerate(skel.parts) if n in legs]
    op[leg_parts] = False
    partial = obs.replace(present=present, orient_present=op, toes=None)
    injected = inject_vertical_orientations(partial, cfg.model)
    assert np.array_equal(injected.orientations[leg_parts], np.tile(DOWN, (4, 1)))
    res = fit_frame(injected, FitConfig())
    u = part_orientations(forward_kinematics(res.params, skel), skel)
    assert np.all(u[leg_parts] @ DOWN >= 0.99)


def test_ground_truth_init():
    cfg, frame, obs = scene(8)
    fcfg = FitConfig(priors=None)
    gt_cost = objective_cost(obs, frame.params, fcfg)
    two = fcfg.stages()[1:]  # limbs, then full
    res = fit_frame(obs, FitConfig(priors=None, schedule=two), init=frame.params)
    assert len(res.stages) == 2 and res.converged
    assert res.cost <= gt_cost
    assert all(s["cost"] <= s["initial_cost"] for s in res.stages)


def test_stage_monotonicity():
    cfg, frame, obs = scene(9)
    fcfg = FitConfig()
    params = default_init(obs, fcfg)
    stage1 = assemble(fcfg.stages()[0], obs, params, fcfg)
    first = stage1.params_from(solve_lm(stage1, stage1.initial(), fcfg.solver).x)
    final = fit_frame(obs, fcfg)
    assert final.cost <= objective_cost(obs, first, fcfg)
    assert np.isclose(final.cost, objective_cost(obs, final.params, fcfg), rtol=1e-12)


def test_default_init_places_root_on_keypoint():
    cfg, frame, obs = scene(2)
    fcfg = FitConfig()
    init = default_init(obs, fcfg)
    root = forward_kinematics(init, SKEL)[SKEL.root]
    assert np.allclose(fcfg.camera.project(root[None])[0], obs.keypoints[SKEL.root])
    assert init.t[2] == fcfg.depth
    prior = fcfg.prior_set()["body"]
    assert np.allclose(init.theta.ravel()[prior.columns()], prior.mu)


def test_face_model_fit_recovers_expression():
    model = face_model()
    spec = {"kind": "body", "toes": True, "face": True, "k_sigma": 5, "basis_scale": 2.0}
    cfg, frame, obs = scene(4, spec)
    free = fit_frame(obs, FitConfig(model_spec=spec, priors=None, weights=Weights(w_sigma=0.0)))
    assert free.converged and model.k_sigma == 5
    assert np.allclose(free.params.sigma, frame.params.sigma, atol=0.02)
    # the default expression regularizer shrinks the estimate toward zero
    shrunk = fit_frame(obs, FitConfig(model_spec=spec, priors=None))
    assert np.linalg.norm(shrunk.params.sigma) < np.linalg.norm(free.params.sigma)
