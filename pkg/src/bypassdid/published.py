"""Published simulation benchmarks for side-by-side comparison.

Bias (%), standard error, and coverage (%) reported in the original
simulation study for each scenario cell, estimand, and method, keyed as
(scenario, estimand, method).  The `--compare-paper` CLI flag joins these
against freshly simulated metrics.
"""

from __future__ import annotations

_METHODS = ("twfe", "or", "ipw", "dr")


def _expand(table: dict) -> dict:
    out = {}
    for (scenario, estimand), (biases, ses, coverages) in table.items():
        for method, b, s, c in zip(_METHODS, biases, ses, coverages):
            out[(scenario, estimand, method)] = {"bias_pct": b, "std_err": s, "coverage_pct": c}
    return out


# rows: (bias twfe/or/ipw/dr), (se ...), (coverage ...)
_RAW = {
    ("1a", "att"): ((-12.784, -0.069, 0.929, -0.103), (0.564, 0.045, 0.389, 0.047), (91.9, 94.1, 98.5, 95.0)),
    ("1b", "att"): ((-39.051, -0.067, -2.251, -0.096), (0.571, 0.045, 0.49, 0.047), (72.0, 95.3, 96.5, 96.3)),
    ("1c", "att"): ((-7.286, -9.348, -0.225, -2.754), (0.597, 0.386, 0.492, 0.472), (93.2, 93.5, 97.7, 95.3)),
    ("1d", "att"): ((22.566, 28.382, 35.917, 32.824), (0.624, 0.397, 0.538, 0.453), (88.0, 72.8, 73.3, 70.3)),
    ("2a", "att"): ((-10.887, -0.002, -0.003, 0.032), (0.226, 0.038, 0.209, 0.040), (83.4, 94.7, 95.3, 94.3)),
    ("2b", "att"): ((-45.221, -0.062, -1.576, -0.059), (0.224, 0.037, 0.148, 0.038), (1.7, 94.7, 91.0, 95.0)),
    ("2c", "att"): ((-5.278, -8.913, -0.391, -0.745), (0.208, 0.138, 0.199, 0.187), (90.6, 75.2, 94.6, 93.7)),
    ("2d", "att"): ((19.201, 29.893, 35.902, 33.978), (0.206, 0.134, 0.171, 0.141), (35.8, 0.6, 1.1, 0.0)),
    ("1a", "atn"): ((-58.815, 0.078, 0.005, 0.186), (0.502, 0.037, 0.347, 0.042), (75.2, 100.0, 98.6, 100.0)),
    ("1b", "atn"): ((-13.883, -0.166, -24.357, -0.082), (0.497, 0.039, 0.801, 0.043), (93.2, 99.7, 98.2, 99.7)),
    ("1c", "atn"): ((45.954, -28.936, -0.928, -4.004), (0.519, 0.359, 0.561, 0.526), (84.8, 88.6, 97.0, 93.7)),
    ("1d", "atn"): ((10.542, -53.447, -63.872, -49.881), (0.539, 0.355, 0.750, 0.405), (93.8, 64.4, 85.2, 72.8)),
    ("2a", "atn"): ((-49.862, -0.051, 0.064, 0.013), (0.194, 0.031, 0.128, 0.033), (27.2, 98.2, 95.7, 98.0)),
    ("2b", "atn"): ((-26.739, 0.026, -28.104, 0.018), (0.193, 0.032, 0.420, 0.035), (71.7, 97.0, 66.8, 97.5)),
    ("2c", "atn"): ((52.672, -28.980, 0.132, -0.578), (0.174, 0.127, 0.139, 0.193), (14.7, 37.1, 94.6, 93.2)),
    ("2d", "atn"): ((-5.510, -51.219, -58.066, -42.967), (0.175, 0.120, 0.233, 0.200), (84.8, 0.4, 2.7, 11.8)),
    ("3a", "att"): ((-11.976, 0.128, 0.713, 0.139), (0.423, 0.057, 0.353, 0.059), (90.5, 93.1, 97.1, 93.8)),
    ("3b", "att"): ((-43.696, 0.152, -1.364, 0.187), (0.436, 0.058, 0.33, 0.059), (45.4, 92.5, 94.8, 94.0)),
    ("3c", "att"): ((-5.75, -9.288, -0.239, -2.410), (0.394, 0.279, 0.620, 0.451), (93.7, 88.7, 95.0, 92.8)),
    ("3d", "att"): ((18.497, 27.495, 34.590, 32.256), (0.400, 0.253, 0.352, 0.288), (83.2, 42.4, 42.9, 34.1)),
    ("3a", "atn"): ((-51.2, -0.080, 0.005, -0.166), (0.357, 0.048, 0.229, 0.051), (72.2, 98.7, 96.7, 98.4)),
    ("3b", "atn"): ((-23.631, -0.040, -24.953, -0.021), (0.369, 0.044, 0.590, 0.048), (89.4, 99.0, 94.5, 98.9)),
    ("3c", "atn"): ((50.125, -30.159, -0.983, -7.144), (0.353, 0.247, 0.249, 0.304), (69.9, 77.8, 95.9, 93.1)),
    ("3d", "atn"): ((-1.775, -51.697, -59.399, -46.790), (0.352, 0.243, 0.426, 0.330), (94.6, 41.8, 49.0, 55.6)),
}

PUBLISHED_SIM_RESULTS = _expand(_RAW)


def published_cell(scenario: str, estimand: str, method: str) -> dict | None:
    return PUBLISHED_SIM_RESULTS.get((scenario, estimand.lower(), method.lower()))
