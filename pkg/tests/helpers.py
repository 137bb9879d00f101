"""Shared oracles for the tests: random expression generation and
finite-difference checking of graph derivatives."""

import numpy as np

from potflow import graph as gr

# stop_gradient is excluded: it intentionally disagrees with the true
# derivative, and has its own contract tests
UNARY = (gr.NEG, gr.TANH, gr.SQUARE, gr.SQRT)
BINARY = (gr.ADD, gr.SUB, gr.MUL, gr.DIV)


def random_expression(g, var_ids, rng, depth=4):
    """A random composition over the variables, avoiding singular regions:
    divisions keep denominators away from zero, square roots are applied
    to shifted squares so arguments stay positive."""
    pool = list(var_ids) + [g.const(float(rng.uniform(-2, 2)))]
    for _ in range(depth * 3):
        op = rng.choice(len(UNARY) + len(BINARY))
        if op < len(UNARY):
            kind = UNARY[op]
            a = pool[rng.integers(len(pool))]
            if kind == gr.SQRT:
                # keep the argument >= 0.5 everywhere
                a = g.add(g.square(a), g.const(0.5))
            pool.append(g.build(kind, (a,)))
        else:
            kind = BINARY[op - len(UNARY)]
            a = pool[rng.integers(len(pool))]
            b = pool[rng.integers(len(pool))]
            if kind == gr.DIV:
                # denominator bounded away from zero: b^2 + 0.5
                b = g.add(g.square(b), g.const(0.5))
            pool.append(g.build(kind, (a, b)))
    return pool[-1]


def finite_diff_check(g, out, var_ids, point, rel_tol=1e-5, step=1e-5):
    """Central finite differences against graph gradients at one point.

    Returns the worst relative error seen (0.0 when all gradients are
    negligible against the absolute floor)."""
    grads = g.grad(out, var_ids)
    binds = dict(zip(var_ids, point))
    worst = 0.0
    for k, v in enumerate(var_ids):
        analytic = g.evaluate(grads[k], binds)
        up = dict(binds)
        up[v] = binds[v] + step
        dn = dict(binds)
        dn[v] = binds[v] - step
        numeric = (g.evaluate(out, up) - g.evaluate(out, dn)) / (2 * step)
        scale = max(abs(analytic), abs(numeric), 1.0)
        worst = max(worst, abs(analytic - numeric) / scale)
        assert abs(analytic - numeric) <= rel_tol * scale, (
            f"derivative mismatch wrt var {k}: graph {analytic} vs fd {numeric}")
    return worst


def tiny_potential(seed=0, in_dim=3, layers=2, width=5, scale=0.3):
    """A small random scalar network for kernel-vs-graph comparisons."""
    from potflow import nn
    spec = nn.MlpSpec(in_dim, layers, width, 1)
    store = nn.init(spec, seed)
    rng = np.random.default_rng(seed + 1000)
    store.theta[:] += rng.normal(0.0, scale, store.theta.size)
    return spec, store


def synthetic_digits(n_per_class=30, seed=0):
    """A small 28x28 ten-class image set with visually distinct classes
    (oriented bars and blobs), standing in for handwritten digits."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:28, 0:28] / 27.0
    images, labels = [], []
    for digit in range(10):
        angle = digit * np.pi / 10.0
        cx, cy = 0.35 + 0.3 * np.cos(angle), 0.35 + 0.3 * np.sin(angle)
        for _ in range(n_per_class):
            jx = cx + rng.normal(0, 0.03)
            jy = cy + rng.normal(0, 0.03)
            w = 0.05 + 0.02 * (digit % 3)
            d = (np.cos(angle) * (xx - jx) + np.sin(angle) * (yy - jy)) ** 2
            p = (np.sin(angle) * (xx - jx) - np.cos(angle) * (yy - jy)) ** 2
            img = np.exp(-d / (2 * w ** 2) - p / (2 * 0.18 ** 2))
            img += rng.uniform(0, 0.05, img.shape)
            images.append(np.clip(img, 0, 1))
            labels.append(digit)
    order = rng.permutation(len(images))
    return (np.asarray(images)[order],
            np.asarray(labels, dtype=np.uint8)[order])
