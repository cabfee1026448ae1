"""Timing of full vs condensed training, for the complexity comparison.

The condensed side is a weighted sample of exactly ``m = ceil(fraction*n)``
rows whose integer weights sum to ``n``; per-iteration cost depends only on
``m`` and ``d``, not on how the rows were chosen.
"""

from __future__ import annotations

import math
import time
import timeit

import numpy as np

from . import mltrain
from .bitcodec import encode_tabular, infer_schema
from .gede import SearchConfig, compress


def _problem(n: int, d: int, fraction: float, seed: int):
    rng = np.random.default_rng(seed)
    X = mltrain.add_intercept(rng.normal(size=(n, d)))
    y = X @ rng.normal(size=d + 1) + rng.normal(size=n)
    m = max(1, math.ceil(fraction * n))
    pick = rng.choice(n, size=m, replace=False)
    w = np.ones(m) + rng.multinomial(n - m, np.full(m, 1.0 / m))
    return X, y, X[pick], y[pick], w.astype(np.float64)


def _best_time(fn, repeats: int, number: int) -> float:
    return min(timeit.repeat(fn, repeat=repeats, number=number)) / number


def bench_gd_iter(n: int = 100_000, d: int = 8, fraction: float = 0.05, seed: int = 0, repeats: int = 7,
                  number: int = 20) -> dict:
    X, y, Xc, yc, w = _problem(n, d, fraction, seed)
    theta = np.zeros(d + 1)
    full = _best_time(lambda: mltrain.gd_step_full(X, y, theta, 1e-3), repeats, number)
    cond = _best_time(lambda: mltrain.gd_step_condensed(Xc, yc, w, theta, 1e-3, n), repeats, number)
    return {"task": "gd-iter", "n": n, "d": d, "m": len(w), "full_s": full, "condensed_s": cond,
            "ratio": cond / full, "model_ratio": len(w) / n}


def bench_closed_form(n: int = 100_000, d: int = 8, fraction: float = 0.05, seed: int = 0, repeats: int = 7,
                      number: int = 5) -> dict:
    X, y, Xc, yc, w = _problem(n, d, fraction, seed)
    full = _best_time(lambda: mltrain.closed_form_full(X, y), repeats, number)
    cond = _best_time(lambda: mltrain.closed_form_weighted(Xc, yc, w), repeats, number)
    p, m = d + 1, len(w)
    predicted = (n * p * p + p**3) / (m * p * p + p**3)
    return {"task": "closed-form", "n": n, "d": d, "m": m, "full_s": full, "condensed_s": cond,
            "speedup": full / cond, "predicted_speedup": predicted, "speedup_over_predicted": full / cond / predicted}


def bench_compress(n: int = 20_000, d: int = 8, beta: int = 10, seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    cols = {f"x{j}": np.round(np.exp(rng.normal(size=n)), 3) for j in range(d)}
    schema = infer_schema(cols, decimals=True)
    t0 = time.perf_counter()
    bm = encode_tabular(cols, schema)
    t1 = time.perf_counter()
    cd = compress(bm, SearchConfig(beta=beta))
    t2 = time.perf_counter()
    return {"task": "compress", "n": n, "d": d, "m": cd.m, "n_b": cd.n_b, "encode_s": t1 - t0,
            "compress_s": t2 - t1, "size_bits": cd.best_size}


TASKS = {"gd-iter": bench_gd_iter, "closed-form": bench_closed_form, "compress": bench_compress}
