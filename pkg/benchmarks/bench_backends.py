"""Compare the numba kernels with the pure-numpy fallback.

    python3 benchmarks/bench_backends.py [--points 30000] [--repeat 3]

Each backend runs in its own interpreter so the ``CORAL_DISABLE_NUMBA``
switch is honoured at import time, exactly as in normal use.
"""
from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
from coral import _accel
from coral.baselines import build_ndt, mme, ndt_score
from coral.cloud import join, voxel_downsample
from coral.entropy import EntropyParams, coral_quality
from coral.harness import synth_scene
from coral.spatial import SpatialIndex

points, repeat = int(sys.argv[1]), int(sys.argv[2])
# a corridor whose downsampled scans hold about `points` points each
extent = 14.0 * (points / 31500.0) ** 0.5
pair = synth_scene("corridor", density=800, extent=extent, noise=0.01, seed=0)
a, b = voxel_downsample(pair.cloud_a, 0.08), voxel_downsample(pair.cloud_b, 0.08)
params = EntropyParams.fixed(0.3, e_reject=0.2)
grid = build_ndt(a, 0.6)
joint = join(a, b)
idx = SpatialIndex(joint, cell=0.15)

cases = {
    "radius query": lambda: idx.query_radius_batch(joint.points[:5000], 0.3),
    "coral_quality": lambda: coral_quality(a, b, params),
    "mme": lambda: mme(joint, 0.3),
    "ndt_score": lambda: ndt_score(grid, b),
}
out = {"backend": _accel.backend_name(), "n_a": len(a), "n_b": len(b), "times": {}}
for name, fn in cases.items():
    fn()  # warm-up (compiles or loads cached kernels)
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    out["times"][name] = best
print(json.dumps(out))
"""


def run(disable: bool, points: int, repeat: int) -> dict:
    env = dict(os.environ)
    env["CORAL_DISABLE_NUMBA"] = "1" if disable else "0"
    proc = subprocess.run([sys.executable, "-c", WORKER, str(points), str(repeat)],
                          env=env, capture_output=True, text=True, check=True)
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=30000, help="approximate points per scan")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    fast = run(False, args.points, args.repeat)
    slow = run(True, args.points, args.repeat)
    print(f"clouds: {fast['n_a']} + {fast['n_b']} points (best of {args.repeat})")
    print(f"{'kernel':<16}{fast['backend']:>12}{slow['backend']:>12}{'speedup':>10}")
    for name, t in fast["times"].items():
        s = slow["times"][name]
        print(f"{name:<16}{t:>11.3f}s{s:>11.3f}s{s / t:>9.1f}x")


if __name__ == "__main__":
    main()
