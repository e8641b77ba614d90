"""Schedule and single-step reference values computed with numpy float64.

Usage: python3 make_ddim_fixtures.py > ../fixtures/ddim_reference.json
"""
import json

import numpy as np

T = 1000
betas = np.linspace(0.00085 ** 0.5, 0.012 ** 0.5, T, dtype=np.float64) ** 2
ac = np.cumprod(1.0 - betas)


def trailing(steps):
    return sorted(int(t) for t in (np.round(np.arange(T, 0, -T / steps)).astype(np.int64) - 1))


def step(z, eps, t, tp):
    x0 = (z - np.sqrt(1 - ac[t]) * eps) / np.sqrt(ac[t])
    return np.sqrt(ac[tp]) * x0 + np.sqrt(1 - ac[tp]) * eps


def invert(z, eps, t, tp):
    x0 = (z - np.sqrt(1 - ac[tp]) * eps) / np.sqrt(ac[tp])
    return np.sqrt(ac[t]) * x0 + np.sqrt(1 - ac[t]) * eps


rng = np.random.default_rng(20240501)
cases = []
for _ in range(12):
    tp = int(rng.integers(0, 990))
    t = int(rng.integers(tp + 1, 1000))
    z, eps = float(rng.normal()), float(rng.normal())
    cases.append({"t": t, "t_prev": tp, "z": z, "eps": eps, "step": float(step(z, eps, t, tp)),
                  "invert": float(invert(z, eps, t, tp))})

out = {
    "alpha_bar": {str(t): float(ac[t]) for t in (0, 1, 19, 499, 500, 998, 999)},
    "trailing": {str(s): trailing(s) for s in (1, 4, 10, 50, 100)},
    "steps": cases,
}
print(json.dumps(out, indent=1))
