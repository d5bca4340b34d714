#!/usr/bin/env python3
"""Regenerates the bundled benchmark files under benchmarks/.

The car platoons are exact zero-order-hold discretizations of chains of double
integrators; the helicopter is a fixed pseudo-random lightly damped 28-state
plant. Output is deterministic.
"""

import json
import re
import pathlib

import numpy as np
from scipy.linalg import expm

OUT = pathlib.Path(__file__).resolve().parent.parent / "benchmarks"


def box(lo, hi):
    return {"lower": list(map(float, lo)), "upper": list(map(float, hi))}


def interval_spec(lo, hi):
    parts = []
    for i, (a, b) in enumerate(zip(lo, hi)):
        parts.append(f"{a:g} < x{i} & x{i} < {b:g}")
    return " &\n".join(parts) + "\n"


def zoh(a_c, b_c, dt):
    n, m = b_c.shape
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = a_c
    aug[:n, n:] = b_c
    e = expm(aug * dt)
    return e[:n, :n], e[:n, n:]


def platoon(cars, dt):
    # x0 = lead velocity deviation; for follower i: x_{2i-1} = gap error,
    # x_{2i} = relative velocity v_{i-1} - v_i. u_j = acceleration of car j.
    n = 2 * cars - 1
    a_c = np.zeros((n, n))
    b_c = np.zeros((n, cars))
    b_c[0, 0] = 1.0
    for i in range(1, cars):
        gap, rel = 2 * i - 1, 2 * i
        a_c[gap, rel] = 1.0
        b_c[rel, i - 1] = 1.0
        b_c[rel, i] = -1.0
    return zoh(a_c, b_c, dt)


def helicopter(dt, seed=28):
    rng = np.random.default_rng(seed)
    n, m = 28, 6
    a_c = np.zeros((n, n))
    for k in range(n // 2):
        sigma = rng.uniform(-0.08, 0.04)
        omega = rng.uniform(0.2, 2.0)
        a_c[2 * k:2 * k + 2, 2 * k:2 * k + 2] = [[sigma, omega], [-omega, sigma]]
    coupling = rng.normal(0.0, 0.05, size=(n, n)) * (rng.uniform(size=(n, n)) < 0.1)
    a_c += coupling
    b_c = rng.normal(0.0, 0.5, size=(n, m))
    return zoh(a_c, b_c, dt)


def write(name, doc, spec_text):
    (OUT / f"{name}.spec").write_text(spec_text)
    doc["spec"] = f"{name}.spec"
    text = json.dumps(doc, indent=1)
    # one numeric row per line keeps the matrices readable
    text = re.sub(r"\[\s*([-0-9.eE+,\s]+?)\s*\]",
                  lambda m: "[" + ", ".join(v.strip() for v in m.group(1).split(",")) + "]", text)
    (OUT / f"{name}.json").write_text(text + "\n")


def main():
    OUT.mkdir(exist_ok=True)

    safe_lo, safe_hi = [-0.5, -0.5], [0.5, 0.5]
    write("pendulum", {
        "name": "pendulum",
        "state_dim": 2, "action_dim": 1, "horizon": 200,
        "state_names": ["theta", "omega"],
        "dynamics": {"type": "pendulum", "g": 9.81, "m": 1.0, "l": 1.0, "dt": 0.05},
        "init_box": box([-0.3, -0.3], [0.3, 0.3]),
        "action_box": box([-15.0], [15.0]),
        "safety_box": box(safe_lo, safe_hi),
        "attack_stride": 1,
    }, interval_spec(safe_lo, safe_hi))

    for cars, horizon, stride in ((4, 1000, 10), (8, 2000, 20)):
        n = 2 * cars - 1
        a, b = platoon(cars, dt=0.1)
        lo = [-2.0] + [0.0] * (n - 1)
        hi = [2.0] + [0.0] * (n - 1)
        for i in range(1, n):
            bound = 0.5 if i % 2 == 1 else 1.0
            if cars == 4 and i == 2:
                bound = 0.35
            lo[i], hi[i] = -bound, bound
        names = ["v0"]
        for i in range(1, cars):
            names += [f"gap{i}", f"relvel{i}"]
        write(f"carplatoon{cars}", {
            "name": f"carplatoon{cars}",
            "state_dim": n, "action_dim": cars, "horizon": horizon,
            "state_names": names,
            "dynamics": {"type": "linear", "dt": 0.1, "A": a.tolist(), "B": b.tolist()},
            "init_box": box([-0.1] * n, [0.1] * n),
            "action_box": box([-5.0] * cars, [5.0] * cars),
            "safety_box": box(lo, hi),
            "attack_stride": stride,
            "lqr": {"q_diag": [1.0] * n, "r_diag": [20.0] * cars},
        }, interval_spec(lo, hi))

    a, b = helicopter(dt=0.05)
    n = 28
    init_lo = [-0.002] * 8 + [-0.0023] * 20
    lo = [-8.0] * n
    lo[13], lo[14] = -10.0, -9.0
    hi = [-x for x in lo]
    write("helicopter", {
        "name": "helicopter",
        "state_dim": n, "action_dim": 6, "horizon": 2000,
        "dynamics": {"type": "linear", "dt": 0.05, "A": a.tolist(), "B": b.tolist()},
        "init_box": box(init_lo, [-x for x in init_lo]),
        "action_box": box([-10.0] * 6, [10.0] * 6),
        "safety_box": box(lo, hi),
        "attack_stride": 20,
        "lqr": {"q_diag": [1.0] * n, "r_diag": [1.0] * 6},
    }, interval_spec(lo, hi))


if __name__ == "__main__":
    main()
