"""Paired comparison of the colour-matching policy with and without
anticipated views, on the first few scenes of the 50-episode suite.

Both arms see the same scenes, reconstructions and episodes; only the
anticipated candidate views differ (splat render vs gray placeholder).

    python3 demos/anticipation_ab.py --scenes 2
"""

import argparse
import logging
import time

from antnav import metrics, pipeline, world
from antnav.recon import ReconNoise


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenes", type=int, default=2, help="suite scenes to run (1-10)")
    ap.add_argument("--depth-sigma", type=float, default=0.05)
    ap.add_argument("--dropout", type=float, default=0.3)
    args = ap.parse_args()
    logging.basicConfig(level=logging.ERROR)
    noise = ReconNoise(depth_sigma=args.depth_sigma, dropout=args.dropout)

    arms = {"anticipation on": [], "anticipation off": []}
    t0 = time.perf_counter()
    layout = list(pipeline.suite_layout(range(1, 51)).items())[: args.scenes]
    for scene_seed, seeds in layout:
        scene = world.generate_scene(scene_seed, pipeline.suite_spec(scene_seed))
        prep = pipeline.prepare(scene, noise)
        episodes = pipeline.suite_episodes(prep, seeds)
        for name, flag in (("anticipation on", True), ("anticipation off", False)):
            res = pipeline.run_suite(prep, episodes, "color", flag)
            arms[name] += [r.metrics for r in res]
            print(f"scene {scene_seed} {name:17s} successes "
                  f"{sum(r.metrics.sr for r in res)}/{len(res)}")
    print()
    print(metrics.table({k: metrics.aggregate(v) for k, v in arms.items()}))
    print(f"\n{time.perf_counter() - t0:.0f} s")


if __name__ == "__main__":
    main()
