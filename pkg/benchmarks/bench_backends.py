"""Compare the numba and pure-Python backends on the hot integration paths.

Each backend runs in its own subprocess because the switch is read at import
time. Compilation is excluded by a warm-up call; the results of both backends
are compared so that a speedup never hides a change in the numbers.

    python3 benchmarks/bench_backends.py [--repeat 5]
"""

import argparse
import json
import os
import subprocess
import sys
import time

CHILD = r"""
import json, sys, time
import numpy as np
from pwsgrazing import _accel, maps, scenarios as sc, unfold as uf
from pwsgrazing import flow as fl

repeat = int(sys.argv[1])
scn = sc.make_scenario("S-I", 1)
sys_ = uf.build_unfolded(scn.normal_form, uf.UnfoldingParams(-1e-3, [-0.02]))
ctl = fl.DEFAULT.with_(max_time=20.0)

def arcs():
    return [fl.integrate_arc(sys_.upper, (x, 0.0), 1, ctl, fl.UPPER).exit.x for x in np.linspace(-0.8, -0.05, 40)]

def rmap():
    return maps.return_map(sys_, (0.01, 0.3), 40).R

out = {"backend": _accel.backend()}
for name, fn in (("integrate_arc x40", arcs), ("return_map n=40", rmap)):
    t0 = time.perf_counter(); ref = fn(); warm = time.perf_counter() - t0
    ts = []
    for _ in range(repeat):
        t0 = time.perf_counter(); fn(); ts.append(time.perf_counter() - t0)
    out[name] = {"first_call": warm, "best": min(ts), "values": [float(v) for v in ref]}
print(json.dumps(out))
"""


def run(disable: bool, repeat: int) -> dict:
    env = dict(os.environ)
    env.pop("PWSGRAZING_DISABLE_NUMBA", None)
    if disable:
        env["PWSGRAZING_DISABLE_NUMBA"] = "1"
    res = subprocess.run([sys.executable, "-c", CHILD, str(repeat)], env=env, capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    t0 = time.perf_counter()
    fast, slow = run(False, args.repeat), run(True, args.repeat)
    print(f"backends: {fast['backend']} vs {slow['backend']}")
    print(f"{'case':22s} {'numba [s]':>10s} {'python [s]':>11s} {'speedup':>8s} {'max |diff|':>11s}")
    for case in ("integrate_arc x40", "return_map n=40"):
        a, b = fast[case], slow[case]
        diff = max(abs(u - v) for u, v in zip(a["values"], b["values"]) if u == u and v == v)
        print(f"{case:22s} {a['best']:10.4f} {b['best']:11.4f} {b['best'] / a['best']:8.1f} {diff:11.2e}")
        print(f"{'  first call (JIT)':22s} {a['first_call']:10.4f} {b['first_call']:11.4f}")
    print(f"total wall time {time.perf_counter() - t0:.1f} s")


if __name__ == "__main__":
    main()
