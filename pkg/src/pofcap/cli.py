"""Command-line front end: synth, fit, track, eval and sweep.

Exit codes: 0 success, 2 usage or configuration error, 3 malformed data
file, 4 semantic mismatch between inputs.
"""

import argparse
import hashlib
import json
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from . import __version__
from .container import ContainerError
from .evaluation import EvalError, jitter, mpjpe, pck_auc, per_joint_errors, pose_clusters, \
    view_sweep_report
from .fitting import FitConfig, FitError, FitResult, fit_frame
from .skeleton import ModelParams, forward_kinematics
from .solver import SolverError
from .synth import SceneConfig, SynthError, load_sequence, oracle_flow, rng_for, write_sequence
from .tracking import TrackConfig, file_provider, identity_provider, refine_sequence

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_MISMATCH = 0, 2, 3, 4


class UsageError(Exception):
    pass


class MismatchError(Exception):
    pass


def _jobs(args):
    if args.jobs is not None:
        return max(1, args.jobs)
    env = os.environ.get("POFCAP_JOBS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"POFCAP_JOBS must be an integer, got {env!r}") from None
    return 1


def _read_json(path, what):
    if path is None:
        return None
    try:
        with open(path) as f:
            return json.load(f)
    except FileNotFoundError:
        raise UsageError(f"{what} not found: {path}") from None
    except json.JSONDecodeError as e:
        raise UsageError(f"{what} is not valid JSON: {e}") from None


def _write_json(path, doc):
    with open(path, "w") as f:
        json.dump(doc, f, indent=1, sort_keys=True)


def _config_hash(doc):
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def _run_manifest(out, command, config_doc, seed, timings, outputs):
    """Provenance record; holds wall-clock timings, so it is not part of the reproducible outputs."""
    doc = {"schema": "pofcap.run/1", "command": command, "config_hash": _config_hash(config_doc),
           "seed": seed, "versions": {"pofcap": __version__, "numpy": np.__version__,
                                      "python": platform.python_version()},
           "timings_s": timings, "outputs": sorted(outputs)}
    _write_json(os.path.join(out, "run_manifest.json"), doc)


def _scene_config(args):
    doc = _read_json(args.config, "scene config") if args.config else {}
    try:
        cfg = SceneConfig.from_dict(doc)
    except (TypeError, ValueError, KeyError) as e:
        raise UsageError(f"invalid scene config: {e}") from None
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def cmd_synth(args):
    cfg = _scene_config(args)
    t0 = time.perf_counter()
    os.makedirs(args.out, exist_ok=True)
    write_sequence(args.out, cfg)
    _run_manifest(args.out, "synth", cfg.to_dict(), cfg.seed,
                  {"synth": time.perf_counter() - t0}, ["manifest.json", "gt.json", "frames"])
    return EXIT_OK


def _fit_config(args, seq):
    doc = _read_json(args.config, "fit config") if getattr(args, "config", None) else {}
    try:
        cfg = FitConfig.from_dict(doc)
    except (TypeError, ValueError, KeyError) as e:
        raise UsageError(f"invalid fit config: {e}") from None
    # the capture defines the camera and subject model
    return replace(cfg, camera=seq.config.camera, model_spec=seq.config.model_spec,
                   depth=seq.config.depth)


def _fit_one(job):
    seq_dir, cfg_doc, i = job
    seq = load_sequence(seq_dir)
    cfg = FitConfig.from_dict(cfg_doc)
    obs = seq.observation(i)
    if obs.is_empty():
        return i, None, "empty observation"
    try:
        res = fit_frame(obs, cfg)
    except (FitError, SolverError) as e:
        return i, None, str(e)
    return i, res.to_dict(), None


def _load_seq(path):
    try:
        return load_sequence(path)
    except FileNotFoundError:
        raise UsageError(f"sequence directory not found: {path}") from None
    except (SynthError, json.JSONDecodeError, KeyError) as e:
        raise UsageError(f"{path}: {e}") from None


def _map(fn, jobs, n_jobs):
    if n_jobs <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_jobs) as ex:
        return list(ex.map(fn, jobs))


def _joints_doc(names, joints):
    return {"schema": "pofcap.joints/1", "joint_names": list(names),
            "frames": [None if j is None else np.asarray(j).tolist() for j in joints]}


def cmd_fit(args):
    seq = _load_seq(args.sequence)
    cfg = _fit_config(args, seq)
    cfg.prior_set()
    os.makedirs(args.out, exist_ok=True)
    t0 = time.perf_counter()
    jobs = [(seq.path, cfg.to_dict(), i) for i in range(seq.n_frames)]
    results = _map(_fit_one, jobs, _jobs(args))
    skel = cfg.model.skeleton
    joints, flagged, converged = [], [], 0
    for i, res, err in results:
        doc = {"index": i, "status": "ok" if res else "flagged"}
        if res:
            doc["result"] = res
            converged += bool(res["converged"])
            joints.append(forward_kinematics(ModelParams.from_dict(res["params"]), skel))
        else:
            doc["error"] = err
            flagged.append({"index": i, "reason": err})
            joints.append(None)
        _write_json(os.path.join(args.out, f"frame_{i:06d}.json"), doc)
    _write_json(os.path.join(args.out, "joints.json"), _joints_doc(skel.names, joints))
    summary = {"n_frames": seq.n_frames, "converged": converged, "flagged": flagged,
               "warnings": len(flagged)}
    _write_json(os.path.join(args.out, "summary.json"), summary)
    _write_json(os.path.join(args.out, "fit_config.json"), cfg.to_dict())
    for f in flagged:
        print(f"warning: frame {f['index']} flagged: {f['reason']}", file=sys.stderr)
    _run_manifest(args.out, "fit", cfg.to_dict(), None, {"fit": time.perf_counter() - t0},
                  ["summary.json", "joints.json", "fit_config.json"])
    return EXIT_OK


def _load_fits(fit_dir, n_frames):
    params = []
    for i in range(n_frames):
        path = os.path.join(fit_dir, f"frame_{i:06d}.json")
        doc = _read_json(path, "fit result")
        params.append(FitResult.from_dict(doc["result"]).params if doc.get("result") else None)
    return params


def cmd_track(args):
    seq = _load_seq(args.sequence)
    cfg_doc = _read_json(args.config, "track config") if args.config else {}
    tcfg = TrackConfig.from_dict(cfg_doc)
    fcfg = replace(tcfg.fit, camera=seq.config.camera, model_spec=seq.config.model_spec)
    tcfg = replace(tcfg, fit=fcfg)
    model = fcfg.model
    skel = model.skeleton
    if args.provider == "identity":
        provider = identity_provider(skel, fcfg.camera)
    elif args.provider == "oracle":
        gt = seq.gt_frames()
        sigma = args.flow_sigma

        def provider(prev, cur, index):
            return oracle_flow(gt[index], fcfg.camera, sigma, rng_for(seq.config.seed, 3, index))
    else:
        if not args.flow_dir or not os.path.isdir(args.flow_dir):
            raise UsageError(f"flow directory not found: {args.flow_dir}")
        paths = {i: os.path.join(args.flow_dir, f"{i:06d}.poft") for i in range(seq.n_frames)}
        missing = [p for i, p in paths.items() if i > 0 and not os.path.exists(p)]
        if missing:
            raise UsageError(f"flow file not found: {missing[0]}")
        provider = file_provider(paths)
    fits = _load_fits(args.fits, seq.n_frames)
    if any(p is None for p in fits):
        raise MismatchError("tracking needs a fit for every frame")
    os.makedirs(args.out, exist_ok=True)
    t0 = time.perf_counter()
    frames = [(seq.observation(i), fits[i]) for i in range(seq.n_frames)]
    res = refine_sequence(frames, provider, tcfg, model)
    before = np.array([forward_kinematics(p, skel) for p in fits])
    after = np.array([forward_kinematics(p, skel) for p in res.params])
    for i, p in enumerate(res.params):
        _write_json(os.path.join(args.out, f"frame_{i:06d}.json"),
                    {"index": i, "params": p.to_dict(), "flag": res.flags[i]})
    _write_json(os.path.join(args.out, "joints.json"), _joints_doc(skel.names, after))
    gt = seq.gt_joints()
    root = skel.root
    table = {"jitter_before": jitter(before), "jitter_after": jitter(after),
             "mpjpe_before": mpjpe(before, gt, "root", root),
             "mpjpe_after": mpjpe(after, gt, "root", root)}
    with open(os.path.join(args.out, "jitter.csv"), "w") as f:
        f.write("metric,before,after\n")
        f.write(f"jitter,{table['jitter_before']!r},{table['jitter_after']!r}\n")
        f.write(f"mpjpe,{table['mpjpe_before']!r},{table['mpjpe_after']!r}\n")
    table["flagged"] = [i for i, fl in enumerate(res.flags) if fl]
    table["provider"] = args.provider
    _write_json(os.path.join(args.out, "summary.json"), table)
    _run_manifest(args.out, "track", tcfg.to_dict(), None, {"track": time.perf_counter() - t0},
                  ["summary.json", "joints.json", "jitter.csv"])
    return EXIT_OK


def _load_joints(path):
    """Joint stacks from a fit/track output (joints.json) or a sequence (gt.json)."""
    for name in ("joints.json", "gt.json"):
        p = os.path.join(path, name)
        if os.path.exists(p):
            doc = _read_json(p, name)
            frames = [f["joints"] if isinstance(f, dict) else f for f in doc["frames"]]
            return tuple(doc["joint_names"]), frames, doc
    raise UsageError(f"{path}: no joints.json or gt.json")


def cmd_eval(args):
    names_p, pred, _ = _load_joints(args.pred)
    names_g, gt, gdoc = _load_joints(args.gt)
    if names_p != names_g or len(pred) != len(gt):
        raise MismatchError("joint set mismatch between prediction and ground truth")
    root = names_g.index("Neck") if "Neck" in names_g else 0
    os.makedirs(args.out, exist_ok=True)
    errs_all, per_frame = [], []
    for i, (p, g) in enumerate(zip(pred, gt)):
        if p is None:
            per_frame.append(None)
            continue
        e = per_joint_errors(np.asarray(p), np.asarray(g), args.alignment, root)
        per_frame.append(float(e.mean()))
        errs_all.append(e)
    valid = [e for e in per_frame if e is not None]
    summary = {"n_frames": len(gt), "n_evaluated": len(valid), "alignment": args.alignment,
               "mpjpe": float(np.mean(valid)) if valid else None}
    with open(os.path.join(args.out, "per_frame.csv"), "w") as f:
        f.write("frame,mpjpe_cm\n")
        for i, e in enumerate(per_frame):
            f.write(f"{i},{'' if e is None else repr(e)}\n")
    if errs_all:
        pck = pck_auc(np.concatenate(errs_all) * 10.0, args.pck_min, args.pck_max, args.pck_steps)
        summary["pck_auc"] = pck["auc"]
        with open(os.path.join(args.out, "pck.csv"), "w") as f:
            f.write("threshold_mm,pck\n")
            for t, c in zip(pck["thresholds"], pck["curve"]):
                f.write(f"{t!r},{c!r}\n")
    if args.clusters:
        ok = [i for i, e in enumerate(per_frame) if e is not None]
        G = np.array([gt[i] for i in ok], dtype=float)
        G = G - G[:, root:root + 1]
        try:
            cl = pose_clusters(G, args.clusters, args.seed or 0,
                               errors=[per_frame[i] for i in ok])
        except EvalError as e:
            raise UsageError(str(e)) from None
        summary["cluster_mpjpe"] = [None if np.isnan(v) else float(v) for v in cl.cluster_mpjpe]
        summary["cluster_counts"] = cl.counts.tolist()
    _write_json(os.path.join(args.out, "summary.json"), summary)
    opts = {k: v for k, v in vars(args).items() if k != "func"}
    _run_manifest(args.out, "eval", opts, args.seed, {}, ["summary.json", "per_frame.csv"])
    return EXIT_OK


def _parse_list(text, what):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"{what} must be a comma-separated list of numbers") from None


def _cell_name(az, el):
    return f"az{az:+07.1f}_el{el:+06.1f}".replace("+", "p").replace("-", "m")


def _sweep_cell(job):
    cell_dir, scene_doc, fit_doc = job
    done = os.path.join(cell_dir, "cell.json")
    if os.path.exists(done):
        with open(done) as f:
            return json.load(f)
    scene = SceneConfig.from_dict(scene_doc)
    seq_dir = os.path.join(cell_dir, "sequence")
    write_sequence(seq_dir, scene)
    seq = load_sequence(seq_dir)
    cfg = replace(FitConfig.from_dict(fit_doc), camera=scene.camera, model_spec=scene.model_spec,
                  depth=scene.depth)
    skel = cfg.model.skeleton
    errors = []
    for i in range(seq.n_frames):
        obs = seq.observation(i)
        if obs.is_empty():
            continue
        try:
            res = fit_frame(obs, cfg)
        except (FitError, SolverError):
            continue
        errors.append(mpjpe(forward_kinematics(res.params, skel), seq.gt_joints()[i], "root",
                            skel.root))
    doc = {"azimuth": scene.azimuth, "elevation": scene.elevation, "errors": errors}
    tmp = done + ".tmp"
    with open(tmp, "w") as f:
        json.dump(doc, f)
    os.replace(tmp, done)
    return doc


def cmd_sweep(args):
    base = _scene_config(args)
    fit_doc = _read_json(args.fit_config, "fit config") if args.fit_config else {}
    azimuths = _parse_list(args.azimuths, "--azimuths")
    elevations = _parse_list(args.elevations, "--elevations")
    if not azimuths or not elevations:
        raise UsageError("need at least one azimuth and one elevation")
    os.makedirs(os.path.join(args.out, "cells"), exist_ok=True)
    t0 = time.perf_counter()
    jobs = []
    for el in elevations:
        for az in azimuths:
            scene = replace(base, azimuth=az, elevation=el, store_fields=args.store_fields)
            jobs.append((os.path.join(args.out, "cells", _cell_name(az, el)), scene.to_dict(), fit_doc))
    cells = _map(_sweep_cell, jobs, _jobs(args))
    results = {(c["azimuth"], c["elevation"]): c["errors"] for c in cells}
    rows, mean, _ = view_sweep_report(results, azimuths, elevations,
                                      os.path.join(args.out, "sweep.csv"))
    _write_json(os.path.join(args.out, "summary.json"),
                {"cells": len(rows), "global_mean_mpjpe": mean,
                 "absent": sum(r["status"] == "absent" for r in rows)})
    _run_manifest(args.out, "sweep", {"scene": base.to_dict(), "fit": fit_doc,
                                      "azimuths": azimuths, "elevations": elevations},
                  base.seed, {"sweep": time.perf_counter() - t0}, ["sweep.csv", "summary.json"])
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="pofcap", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_help):
        sp.add_argument("--config", help=config_help)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--jobs", type=int, help="worker processes (default: $POFCAP_JOBS or 1)")

    sp = sub.add_parser("synth", help="generate a synthetic sequence")
    common(sp, "scene config JSON")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("fit", help="fit every frame of a sequence")
    sp.add_argument("sequence")
    common(sp, "fit config JSON")
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("track", help="temporally refine per-frame fits")
    sp.add_argument("sequence")
    sp.add_argument("fits", help="output directory of 'pofcap fit'")
    common(sp, "track config JSON")
    sp.add_argument("--provider", choices=("oracle", "identity", "file"), default="oracle")
    sp.add_argument("--flow-dir", help="directory of NNNNNN.poft flow targets (provider=file)")
    sp.add_argument("--flow-sigma", type=float, default=0.0, help="oracle flow noise, px")
    sp.set_defaults(func=cmd_track)

    sp = sub.add_parser("eval", help="evaluate predicted joints against ground truth")
    sp.add_argument("pred")
    sp.add_argument("gt")
    common(sp, "unused; accepted for symmetry")
    sp.add_argument("--alignment", choices=("root", "none"), default="root")
    sp.add_argument("--pck-min", type=float, default=20.0)
    sp.add_argument("--pck-max", type=float, default=50.0)
    sp.add_argument("--pck-steps", type=int, default=31)
    sp.add_argument("--clusters", type=int, default=0, help="k for pose clustering (0 = off)")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("sweep", help="synth + fit over a camera azimuth x elevation grid")
    common(sp, "base scene config JSON")
    sp.add_argument("--fit-config")
    sp.add_argument("--azimuths", required=True, help="comma-separated degrees")
    sp.add_argument("--elevations", required=True, help="comma-separated degrees")
    sp.add_argument("--store-fields", action="store_true", help="keep rendered fields per cell")
    sp.set_defaults(func=cmd_sweep)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ContainerError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (MismatchError, EvalError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MISMATCH


if __name__ == "__main__":
    sys.exit(main())
