"""Command line front end: one subcommand per pipeline stage, artifacts on disk."""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import metrics, navigator, recon, splat, tourplanner, world
from .config import ConfigError, RunConfig
from .navgraph import NavGraph
from .pipeline import run_episodes, start_pose

log = logging.getLogger("antnav")

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_POLICY, EXIT_INFEASIBLE = 0, 2, 3, 4, 5
ENV_POLICY_URL = "ANTNAV_POLICY_URL"


class StageError(Exception):
    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code, self.kind = code, kind


def _missing(path: Path, stage: str) -> StageError:
    return StageError(EXIT_MISSING, "missing-artifact", f"run {stage} first ({path.name} not found)")


def _need(path: Path, stage: str) -> Path:
    if not path.exists():
        raise _missing(path, stage)
    return path


# --------------------------------------------------------------------------
# artifact access


def _scene(out: Path) -> world.Scene:
    return world.Scene.load(_need(out / "scene.json", "gen-scene"))


def _graph(out: Path) -> NavGraph:
    return NavGraph.load(_need(out / "graph.json", "explore"))


def _tours(out: Path, graph: NavGraph) -> list:
    files = sorted((out / "tours").glob("region_*.json")) if (out / "tours").exists() else []
    if not files:
        raise _missing(out / "tours", "plan-tours")
    return [tourplanner.ScanTour.from_dict(json.loads(f.read_text()), graph) for f in files]


def _cloud(out: Path) -> recon.RegionCloud:
    return recon.RegionCloud.load_ply(_need(out / "cloud.ply", "reconstruct"))


def _noise(cfg: RunConfig) -> recon.ReconNoise:
    n = cfg.noise
    return recon.ReconNoise(scale_seed=n.seed, pos_sigma=n.pos_sigma, dropout=n.dropout,
                            depth_sigma=n.depth_sigma, depth_seed=n.seed,
                            scale_range=(n.scale_min, n.scale_max))


def _splat_cfg(cfg: RunConfig, hfov: float | None = None) -> splat.SplatConfig:
    s = cfg.splat
    return splat.SplatConfig(epsilon=s.epsilon, width=s.out, height=s.out,
                             hfov=s.hfov if hfov is None else hfov)


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# stages


def cmd_gen_scene(cfg: RunConfig, out: Path, args) -> None:
    s = cfg.scene
    try:
        spec = world.SceneSpec(s.rooms, s.floors, s.min_room, s.max_room)
        spec.validate()
    except ValueError as exc:
        raise ConfigError(f"invalid scene spec: {exc}") from exc
    scene = world.generate_scene(s.seed, spec)
    out.mkdir(parents=True, exist_ok=True)
    scene.save(out / "scene.json")
    print(f"scene seed={s.seed} rooms={len(scene.rooms)} floors={len(scene.floors)} "
          f"-> {out / 'scene.json'}")


def cmd_explore(cfg: RunConfig, out: Path, args) -> None:
    from . import explorer

    scene = _scene(out)
    trace = explorer.ExplorationTrace()
    graph = explorer.explore(scene, start_pose(scene), cfg.grid.dxy, cfg.grid.dz, trace=trace)
    graph.save(out / "graph.json")
    (out / "trace.json").write_text(trace.to_json())
    print(f"graph nodes={len(graph)} edges={graph.edge_count()} "
          f"regions={len(graph.regions())} stair_edges={len(graph.stair_edges)}")


def cmd_plan_tours(cfg: RunConfig, out: Path, args) -> None:
    scene, graph = _scene(out), _graph(out)
    t = cfg.tour
    tours = tourplanner.plan_region_tours(scene, graph, t.tau, t.lambda_overlap, t.vis_radius)
    (out / "tours").mkdir(parents=True, exist_ok=True)
    for old in (out / "tours").glob("region_*.json"):
        old.unlink()
    for tour in tours:
        tour.save(out / "tours" / f"region_{tour.region:02d}.json")
    print("tours " + " ".join(f"region{t.region}:{len(t.hubs)}hubs" for t in tours))


def cmd_reconstruct(cfg: RunConfig, out: Path, args) -> None:
    scene, graph = _scene(out), _graph(out)
    tours = _tours(out, graph)
    logs = []
    for tour in tours:
        capture = tourplanner.execute_tour(scene, tour, graph)
        capture.save(out / "frames" / f"region_{tour.region:02d}")
        logs.append(capture)
    cloud, results = recon.reconstruct_scene(scene, tours, logs, _noise(cfg),
                                             reducer=cfg.noise.reducer)
    cloud.save_ply(out / "cloud.ply")
    _write_json(out / "regions.json", [
        {"region": r.region, "delta": r.scale.delta, "valid_pixels": r.scale.valid_pixel_count,
         "matched_frame": r.scale.matched_frame_index, "ssim": r.scale.ssim_score}
        for r in results])
    print(f"cloud points={len(cloud)} regions={len(results)}")


def _policy_kind(cfg: RunConfig, args) -> str:
    return getattr(args, "policy", None) or cfg.policy.kind


def _endpoint(cfg: RunConfig) -> str:
    return os.environ.get(ENV_POLICY_URL) or cfg.policy.endpoint


def _navigate(cfg: RunConfig, out: Path, kind: str, anticipation: bool,
              scfg: splat.SplatConfig) -> list:
    scene, graph, cloud = _scene(out), _graph(out), _cloud(out)
    e = cfg.episodes
    episodes = navigator.generate_episodes(scene, graph, e.seed, e.count, e.d_th, e.max_steps)
    endpoint = _endpoint(cfg)
    if kind == "http" and not endpoint:
        raise ConfigError(f"http policy needs an endpoint (config or {ENV_POLICY_URL})")
    return run_episodes(scene, graph, cloud, episodes, kind, anticipation, scfg, endpoint,
                        cfg.policy.timeout, e.workers)


def _check_policy_failures(results) -> None:
    for r in results:
        if r.failure:
            raise StageError(EXIT_POLICY, "policy", f"{r.episode_id}: {r.failure}")


def cmd_navigate(cfg: RunConfig, out: Path, args) -> None:
    anticipation = cfg.anticipation and not args.no_anticipation
    results = _navigate(cfg, out, _policy_kind(cfg, args), anticipation, _splat_cfg(cfg))
    directory = out / "episodes"
    directory.mkdir(parents=True, exist_ok=True)
    for old in directory.glob("*.json"):
        old.unlink()
    for r in results:
        r.save(directory / f"{r.episode_id}.json")
    wins = sum(r.metrics.sr for r in results)
    print(f"episodes={len(results)} successes={wins}")
    _check_policy_failures(results)


def cmd_eval(cfg: RunConfig, out: Path, args) -> None:
    files = sorted((out / "episodes").glob("*.json")) if (out / "episodes").exists() else []
    if not files:
        raise StageError(EXIT_MISSING, "missing-artifact",
                         "run navigate first (no episodes found)")
    results = [navigator.EpisodeResult.load(f) for f in files]
    summary = metrics.aggregate(r.metrics for r in results)
    _write_json(out / "summary.json", summary.to_dict())
    text = metrics.table({"run": summary})
    (out / "summary.txt").write_text(text + "\n")
    print(text)
    if not args.no_sweep:
        kind = _policy_kind(cfg, args)
        rows, payload = {}, {}
        for hfov in cfg.hfov_sweep:
            res = _navigate(cfg, out, kind, True, _splat_cfg(cfg, hfov))
            _check_policy_failures(res)
            s = metrics.aggregate(r.metrics for r in res)
            rows[f"HFOV {hfov:g}"] = s
            payload[f"{hfov:g}"] = s.to_dict()
        _write_json(out / "hfov_sweep.json", payload)
        table = metrics.table(rows)
        (out / "hfov_sweep.txt").write_text(table + "\n")
        print(table)


def cmd_render_view(cfg: RunConfig, out: Path, args) -> None:
    pose = world.Pose(args.x, args.y, args.z, math.radians(args.yaw), math.radians(args.pitch))
    target = Path(args.output) if args.output else out / "view.ppm"
    target.parent.mkdir(parents=True, exist_ok=True)
    if args.source == "scene":
        img, depth = world.render(_scene(out), pose.lifted(),
                                  world.CameraIntrinsics(cfg.splat.out, cfg.splat.out,
                                                         cfg.splat.hfov))
    else:
        img, depth = splat.splat_render(_cloud(out), pose.lifted(), _splat_cfg(cfg))
    img.save(target)
    target.with_suffix(".depth").write_bytes(depth.to_raw())
    if args.map:
        cloud = _cloud(out)
        splat.spatial_map(cloud, [pose], []).save(target.with_name(target.stem + "_map.ppm"))
    print(f"wrote {target}")


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="antnav", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="RunConfig JSON file")
        sp.add_argument("--out", help="artifact directory (overrides config)")
        sp.add_argument("--seed", type=int, help="scene seed (overrides config)")
        sp.set_defaults(func=fn)
        return sp

    add("gen-scene", cmd_gen_scene, "generate a scene -> scene.json")
    add("explore", cmd_explore, "frontier exploration -> graph.json, trace.json")
    add("plan-tours", cmd_plan_tours, "scan tours per region -> tours/")
    add("reconstruct", cmd_reconstruct, "capture and reconstruct -> frames/, cloud.ply")
    nav = add("navigate", cmd_navigate, "run episodes -> episodes/")
    nav.add_argument("--policy", choices=["oracle", "oracle-direct", "color", "http"])
    nav.add_argument("--no-anticipation", action="store_true")
    nav.add_argument("--episodes", type=int, help="episode count (overrides config)")
    ev = add("eval", cmd_eval, "aggregate episodes -> summary.json, HFOV sweep -> hfov_sweep.*")
    ev.add_argument("--no-sweep", action="store_true",
                    help="skip re-running navigation at each sweep HFOV")
    ev.add_argument("--policy", choices=["oracle", "oracle-direct", "color", "http"])
    ev.add_argument("--episodes", type=int, help="episode count for the sweep")
    rv = add("render-view", cmd_render_view, "render one view -> PPM + raw depth")
    rv.add_argument("--x", type=float, required=True)
    rv.add_argument("--y", type=float, required=True)
    rv.add_argument("--z", type=float, default=0.0, help="floor height under the agent")
    rv.add_argument("--yaw", type=float, default=0.0, help="degrees")
    rv.add_argument("--pitch", type=float, default=0.0, help="degrees")
    rv.add_argument("--source", choices=["scene", "cloud"], default="scene")
    rv.add_argument("--map", action="store_true", help="also write the spatial map")
    rv.add_argument("--output")
    return p


def load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.out:
        cfg.out = args.out
    if args.seed is not None:
        cfg.scene = replace(cfg.scene, seed=args.seed)
    if getattr(args, "episodes", None) is not None:
        cfg.episodes = replace(cfg.episodes, count=args.episodes)
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    from .policy import PolicyError

    try:
        cfg = load_config(args)
        args.func(cfg, Path(cfg.out), args)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", str(exc))
    except StageError as exc:
        return _fail(exc.code, exc.kind, str(exc))
    except PolicyError as exc:
        return _fail(EXIT_POLICY, "policy", str(exc))
    except (world.InfeasibleSpecError, tourplanner.CoverageInfeasibleError) as exc:
        return _fail(EXIT_INFEASIBLE, "infeasible", str(exc))
    return EXIT_OK


def _fail(code: int, kind: str, message: str) -> int:
    print(f"antnav: error code={code} kind={kind}: {message}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
