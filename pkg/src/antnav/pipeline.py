"""Stage composition shared by the CLI, demos and acceptance suites."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

from . import explorer, navigator, policy, recon, splat, tourplanner, world


@dataclass
class Prepared:
    scene: world.Scene
    graph: object
    tours: list
    logs: list
    cloud: recon.RegionCloud
    regions: list


def start_pose(scene: world.Scene) -> world.Pose:
    """Floor-level pose at the centre of the first room."""
    c = scene.rooms[0].center
    return world.Pose(c[0], c[1], c[2], 0.0)


def prepare(scene: world.Scene, noise: recon.ReconNoise | None = None, tau: float = tourplanner.TAU,
            lam: float = tourplanner.LAMBDA_OVERLAP, radius: float = tourplanner.VIS_RADIUS,
            reducer: str = "mean") -> Prepared:
    """Explore, plan and execute scan tours, reconstruct and merge."""
    graph = explorer.explore(scene, start_pose(scene))
    tours = tourplanner.plan_region_tours(scene, graph, tau, lam, radius)
    logs = [tourplanner.execute_tour(scene, t, graph) for t in tours]
    cloud, regions = recon.reconstruct_scene(scene, tours, logs, noise, reducer=reducer)
    return Prepared(scene, graph, tours, logs, cloud, regions)


def suite_spec(scene_seed: int) -> world.SceneSpec:
    """Single-floor specs cycling through 2 to 4 rooms."""
    return world.SceneSpec(rooms=2 + scene_seed % 3, floors=1)


EPISODES_PER_SCENE = 5


def suite_layout(episode_seeds) -> dict:
    """Episode seed k runs on scene seed (k - 1) // 5 + 1, five episodes per scene."""
    out = {}
    for k in episode_seeds:
        out.setdefault((k - 1) // EPISODES_PER_SCENE + 1, []).append(k)
    return out


def suite_episodes(prepared: Prepared, seeds, d_th: float = 3.0,
                   max_steps: int = navigator.MAX_STEPS) -> list:
    return [navigator.generate_episodes(prepared.scene, prepared.graph, k, 1, d_th, max_steps,
                                        prefix=f"s{prepared.scene.seed}-e{k}-")[0]
            for k in seeds]


def make_policy(kind: str, episode: navigator.Episode, endpoint: str = "",
                timeout: float = policy.HTTP_TIMEOUT, field=None):
    """``oracle`` descends the walking-distance ``field`` to the goal;
    ``oracle-direct`` heads straight for it."""
    if kind == "oracle":
        if field is None:
            raise ValueError("the oracle policy needs a geodesic field")
        return policy.make_oracle(episode.goal, episode.d_th, field, memory=True)
    if kind == "oracle-direct":
        return policy.make_oracle(episode.goal, episode.d_th)
    if kind == "color":
        return policy.color_match_policy
    if kind == "http":
        return policy.make_http_policy(endpoint, timeout)
    raise ValueError(f"unknown policy kind {kind!r}")


def _run_one(scene, graph, cloud, ep, kind, anticipation, cfg, endpoint, timeout, fields):
    field = None
    if kind == "oracle":
        if ep.goal not in fields:
            fields[ep.goal] = navigator.GeodesicField(scene, graph, ep.goal)
        field = fields[ep.goal]
    return navigator.run_episode(scene, cloud, ep, make_policy(kind, ep, endpoint, timeout, field),
                                 anticipation, cfg)


def run_episodes(scene: world.Scene, graph, cloud, episodes, kind: str,
                 anticipation: bool = True, cfg: splat.SplatConfig | None = None,
                 endpoint: str = "", timeout: float = policy.HTTP_TIMEOUT,
                 workers: int = 1) -> list:
    """Results in episode order; ``workers`` > 1 runs episodes in worker processes."""
    episodes = list(episodes)
    if workers <= 1 or len(episodes) < 2:
        fields = {}
        return [_run_one(scene, graph, cloud, ep, kind, anticipation, cfg, endpoint, timeout,
                         fields) for ep in episodes]
    n = len(episodes)
    with ProcessPoolExecutor(max_workers=min(workers, n)) as pool:
        return list(pool.map(_run_one, [scene] * n, [graph] * n, [cloud] * n, episodes,
                             [kind] * n, [anticipation] * n, [cfg] * n, [endpoint] * n,
                             [timeout] * n, [{}] * n))


def run_suite(prepared: Prepared, episodes, kind: str, anticipation: bool = True,
              cfg: splat.SplatConfig | None = None, endpoint: str = "") -> list:
    return run_episodes(prepared.scene, prepared.graph, prepared.cloud, episodes, kind,
                        anticipation, cfg, endpoint)
