"""End-to-end walkthrough on one small scene.

Generates a two-room scene, explores it, plans scan tours, reconstructs a
metric cloud, then runs one colour-matching episode and writes the agent's
first panorama view, the anticipated view of its chosen move and the
spatial map as PPM files.

    python3 demos/walkthrough.py --out /tmp/walkthrough
"""

import argparse
import logging
from pathlib import Path

from antnav import navigator, pipeline, policy, splat, world
from antnav.explorer import Waypoint
from antnav.recon import ReconNoise


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--out", default="walkthrough")
    args = ap.parse_args()
    logging.basicConfig(level=logging.ERROR)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    scene = world.generate_scene(args.seed, world.SceneSpec(rooms=2, floors=1))
    print(f"scene {args.seed}: rooms " + ", ".join(f"{r.label} ({r.wall_color} walls)"
                                                   for r in scene.rooms))

    prep = pipeline.prepare(scene, ReconNoise(scale_seed=args.seed))
    print(f"explored {len(prep.graph)} nodes in {len(prep.graph.regions())} region(s)")
    for tour, res in zip(prep.tours, prep.regions):
        print(f"region {tour.region}: {len(tour.hubs)} hubs, tour cost {tour.cost:.1f}, "
              f"hidden scale {res.injected_scale:.3f}, recovered {res.scale.delta:.3f} "
              f"(product {res.scale.delta * res.injected_scale:.3f})")
    print(f"merged cloud: {len(prep.cloud)} points")

    ep = navigator.generate_episodes(scene, prep.graph, seed=1, count=1)[0]
    print("instruction:", " ".join(ep.instruction))
    result = navigator.run_episode(scene, prep.cloud, ep, policy.color_match_policy)
    m = result.metrics
    print(f"decisions {[d['kind'] for d in result.decisions]}")
    print(f"NE {m.ne:.2f} m, SR {int(m.sr)}, SPL {m.spl:.2f}, nDTW {m.ndtw:.2f}")

    start = ep.start
    views = navigator.panorama(scene, start, world.CameraIntrinsics())
    views[0].save(out / "front.ppm")
    first = result.decisions[0]
    if first["kind"] == "move":
        cand = next(c for c in first["candidates"] if c["index"] == first["chosen"])
        wp = Waypoint(cand["dx"], cand["dy"])
        splat.anticipate_view(prep.cloud, start, wp).save(out / "anticipated.ppm")
    splat.spatial_map(prep.cloud, result.trajectory, []).save(out / "map.ppm")
    print(f"wrote views to {out}/")


if __name__ == "__main__":
    main()
