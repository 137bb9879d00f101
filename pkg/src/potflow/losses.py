"""Training objectives: sliced Wasserstein, WGAN-GP, transport penalty,
Hamilton-Jacobi residual, and flow likelihood.

Each objective exists twice.  The graph builders return differentiable
nodes and define the reference semantics (including the stop-gradient
contract on residual-point coordinates).  The numpy twins return values
plus exactly the gradients the training loop needs, and are asserted
against the graph route in the tests.  Sliced Wasserstein differentiates
through the sort with the permutation frozen at the evaluation point, so
its node is built from current values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backprop import GradBuffer, Kernel
from .generator import ContinuousPfg, PotentialTemplate
from .graph import Graph
from . import nn


@dataclass
class LossWeights:
    hj_weight: float = 1.0       # PDE residual penalty
    transport_weight: float = 0.0  # squared-displacement penalty

    def __post_init__(self):
        if self.hj_weight < 0 or self.transport_weight < 0:
            raise ValueError("loss weights must be nonnegative")


@dataclass
class Discriminator:
    spec: nn.MlpSpec
    store: nn.ParamStore
    gp_weight: float = 10.0

    def __post_init__(self):
        if self.spec.out_dim != 1:
            raise ValueError("discriminator must be scalar-valued")


@dataclass
class ResidualPointSet:
    """Space-time points where the squared HJ residual is penalized.

    Built from batch trajectories: every (i*dt, position of sample j at
    slice i), so the count is (n+1) * batch.  Values are plain arrays,
    which is the stop-gradient contract in the numpy route; the graph
    route wraps coordinate nodes in stop_gradient explicitly.
    """
    times: np.ndarray   # (n+1,)
    points: np.ndarray  # (n+1, B, d)

    def __post_init__(self):
        if len(self.times) != self.points.shape[0]:
            raise ValueError("one time stamp per trajectory slice required")

    @property
    def n_points(self) -> int:
        return self.points.shape[0] * self.points.shape[1]

    @classmethod
    def from_trajectory(cls, times: np.ndarray, traj: np.ndarray) -> "ResidualPointSet":
        return cls(np.asarray(times, dtype=np.float64), np.asarray(traj, dtype=np.float64))


def unit_directions(num: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """num unit vectors drawn uniformly on the sphere."""
    D = rng.normal(size=(num, dim))
    norms = np.linalg.norm(D, axis=1, keepdims=True)
    # a zero draw has probability zero; guard anyway
    norms[norms == 0.0] = 1.0
    return D / norms


# -- sliced Wasserstein ----------------------------------------------------------


def swg_value_and_grad(fake: np.ndarray, real: np.ndarray, num_projections: int,
                       rng: np.random.Generator):
    """Squared sliced Wasserstein estimate and its gradient w.r.t. fake.

    Per direction: project both batches, sort, mean squared difference of
    order statistics.  The gradient treats the permutation as constant.
    """
    fake = np.atleast_2d(fake)
    real = np.atleast_2d(real)
    if fake.shape != real.shape:
        raise ValueError("fake and real batches must match in shape")
    if fake.shape[0] == 0:
        raise ValueError("empty batch")
    if num_projections < 1:
        raise ValueError("need at least one projection")
    B, d = fake.shape
    D = unit_directions(num_projections, d, rng)
    PF = fake @ D.T                     # (B, P)
    PR = real @ D.T
    order = np.argsort(PF, axis=0, kind="stable")
    sF = np.take_along_axis(PF, order, axis=0)
    sR = np.sort(PR, axis=0, kind="stable")
    diff = sF - sR
    value = float(np.mean(diff * diff))
    scatter = np.empty_like(diff)
    np.put_along_axis(scatter, order, diff * (2.0 / (B * num_projections)), axis=0)
    return value, scatter @ D


def sliced_wasserstein(g: Graph, fake_nodes: list[list[int]], fake_values: np.ndarray,
                       real_values: np.ndarray, num_projections: int,
                       seed: int) -> int:
    """Graph node for the sliced Wasserstein loss, sort frozen at the
    current fake values (which must correspond to ``fake_nodes``)."""
    fake_values = np.atleast_2d(fake_values)
    real_values = np.atleast_2d(real_values)
    if len(fake_nodes) == 0 or real_values.shape[0] == 0:
        raise ValueError("empty batch")
    B, d = fake_values.shape
    rng = np.random.Generator(np.random.PCG64(seed))
    D = unit_directions(num_projections, d, rng)
    PF = fake_values @ D.T
    order = np.argsort(PF, axis=0, kind="stable")
    sR = np.sort(real_values @ D.T, axis=0, kind="stable")
    total = g.const(0.0)
    for p in range(num_projections):
        for k in range(B):
            j = order[k, p]
            proj = g.const(0.0)
            for c in range(d):
                proj = g.add(proj, g.mul(g.const(D[p, c]), fake_nodes[j][c]))
            total = g.add(total, g.square(g.sub(proj, g.const(sR[k, p]))))
    return g.div(total, g.const(float(B * num_projections)))


# -- transport penalty -----------------------------------------------------------


def transport_value_and_grad(inputs: np.ndarray, outputs: np.ndarray):
    """Mean squared displacement and its gradient w.r.t. outputs."""
    inputs = np.atleast_2d(inputs)
    outputs = np.atleast_2d(outputs)
    if inputs.shape != outputs.shape:
        raise ValueError("inputs and outputs must match in shape")
    disp = outputs - inputs
    B = inputs.shape[0]
    return float(np.mean(np.sum(disp * disp, axis=1))), (2.0 / B) * disp


def transport_penalty(g: Graph, input_nodes: list[list[int]],
                      output_nodes: list[list[int]]) -> int:
    if len(input_nodes) != len(output_nodes):
        raise ValueError("batch size mismatch")
    total = g.const(0.0)
    for xin, xout in zip(input_nodes, output_nodes):
        for a, b in zip(xin, xout):
            total = g.add(total, g.square(g.sub(b, a)))
    return g.div(total, g.const(float(len(input_nodes))))


# -- Hamilton-Jacobi residual ------------------------------------------------------


def residuals_from_grads(G: np.ndarray) -> np.ndarray:
    """r = d pot/dt + 1/2 |spatial grad|^2 from full input gradients (B, d+1)."""
    return G[:, 0] + 0.5 * np.sum(G[:, 1:] * G[:, 1:], axis=1)


def hj_residual_value(gen: ContinuousPfg, pts: ResidualPointSet,
                      kernel: Kernel | None = None) -> float:
    """Mean squared residual over a point set (standalone numpy route)."""
    if pts.n_points == 0:
        raise ValueError("empty residual point set")
    ker = kernel or Kernel(gen.store)
    total = 0.0
    for i, t in enumerate(pts.times):
        X = pts.points[i]
        U = np.concatenate([np.full((X.shape[0], 1), t), X], axis=1)
        _, cache = ker.forward(U)
        G, _ = ker.input_grad(cache)
        r = residuals_from_grads(G)
        total += float(np.sum(r * r))
    return total / pts.n_points


def hj_residual(g: Graph, template: PotentialTemplate,
                pts: list[tuple[int, list[int]]]) -> int:
    """Graph node: mean squared HJ residual at the given (t, x) nodes.

    Coordinates should already be stop-gradient wrapped by the caller
    when they come from trajectories (the gradient of the loss must not
    flow into residual-point positions).
    """
    if not pts:
        raise ValueError("empty residual point set")
    total = g.const(0.0)
    for t_node, x_nodes in pts:
        gr = template.apply_grad([t_node] + list(x_nodes))
        speed2 = g.square(gr[1])
        for gk in gr[2:]:
            speed2 = g.add(speed2, g.square(gk))
        r = g.add(gr[0], g.mul(g.const(0.5), speed2))
        total = g.add(total, g.square(r))
    return g.div(total, g.const(float(len(pts))))


# -- WGAN with gradient penalty ----------------------------------------------------

_GP_NORM_FLOOR = 1e-24  # inside the sqrt; keeps the penalty differentiable at 0


def wgan_gen_value_and_seed(disc: Discriminator, fake: np.ndarray,
                            kernel: Kernel | None = None):
    """Generator loss -mean D(fake) and its gradient w.r.t. fake samples."""
    ker = kernel or Kernel(disc.store)
    fake = np.atleast_2d(fake)
    B = fake.shape[0]
    out, cache = ker.forward(fake)
    G, _ = ker.input_grad(cache)
    return float(-np.mean(out)), -G / B


def wgan_disc_value_and_grad(disc: Discriminator, fake: np.ndarray,
                             real: np.ndarray, rng: np.random.Generator,
                             kernel: Kernel | None = None):
    """Discriminator loss and its parameter gradient.

    mean D(fake) - mean D(real) + gp * mean (|grad D(xhat)| - 1)^2 with
    xhat on the segment between paired real and fake samples; xhat is a
    constant w.r.t. everything upstream (stop-gradient contract).
    """
    ker = kernel or Kernel(disc.store)
    fake = np.atleast_2d(fake)
    real = np.atleast_2d(real)
    if fake.shape != real.shape:
        raise ValueError("fake and real batches must match in shape")
    B = fake.shape[0]
    eps = rng.uniform(size=(B, 1))
    xhat = eps * real + (1.0 - eps) * fake
    gbuf = GradBuffer(disc.spec)
    out_f, cache_f = ker.forward(fake)
    out_r, cache_r = ker.forward(real)
    ker.vjp_output(np.full((B, 1), 1.0 / B), cache_f, gbuf)
    ker.vjp_output(np.full((B, 1), -1.0 / B), cache_r, gbuf)
    _, cache_h = ker.forward(xhat)
    Gh, gcache_h = ker.input_grad(cache_h)
    norm = np.sqrt(np.sum(Gh * Gh, axis=1) + _GP_NORM_FLOOR)
    gp_val = disc.gp_weight * float(np.mean((norm - 1.0) ** 2))
    C = (2.0 * disc.gp_weight / B) * ((1.0 - 1.0 / norm)[:, None] * Gh)
    ker.vjp_input_grad(C, cache_h, gcache_h, gbuf, need_ubar=False)
    value = float(np.mean(out_f) - np.mean(out_r)) + gp_val
    return value, gbuf.flat


def wgan_gp_losses(g: Graph, disc_template: PotentialTemplate,
                   fake_nodes: list[list[int]], fake_values: np.ndarray,
                   real_values: np.ndarray, gp_weight: float,
                   seed: int) -> tuple[int, int]:
    """Graph nodes (generator loss, discriminator loss).

    Interpolates are built from current fake values and wrapped in
    stop_gradient, so the discriminator loss never backpropagates into
    the generator.
    """
    fake_values = np.atleast_2d(fake_values)
    real_values = np.atleast_2d(real_values)
    if fake_values.shape != real_values.shape:
        raise ValueError("fake and real batches must match in shape")
    B, d = fake_values.shape
    rng = np.random.Generator(np.random.PCG64(seed))
    eps = rng.uniform(size=B)
    # generator loss: -mean D(fake), gradient flows into fake nodes
    acc_f = g.const(0.0)
    for j in range(B):
        acc_f = g.add(acc_f, disc_template.apply(list(fake_nodes[j])))
    mean_f = g.div(acc_f, g.const(float(B)))
    gen_loss = g.neg(mean_f)
    # discriminator loss: fake contributions re-enter through stop_gradient
    acc_fs = g.const(0.0)
    acc_r = g.const(0.0)
    acc_gp = g.const(0.0)
    for j in range(B):
        sg_fake = [g.stop_gradient(fn) for fn in fake_nodes[j]]
        acc_fs = g.add(acc_fs, disc_template.apply(sg_fake))
        acc_r = g.add(acc_r, disc_template.apply(
            [g.const(v) for v in real_values[j]]))
        xhat = [g.stop_gradient(
                    g.add(g.mul(g.const(eps[j]), g.const(real_values[j][c])),
                          g.mul(g.const(1.0 - eps[j]), fake_nodes[j][c])))
                for c in range(d)]
        gr = disc_template.apply_grad(xhat)
        s = g.square(gr[0])
        for gk in gr[1:]:
            s = g.add(s, g.square(gk))
        norm = g.sqrt(g.add(s, g.const(_GP_NORM_FLOOR)))
        acc_gp = g.add(acc_gp, g.square(g.sub(norm, g.const(1.0))))
    disc_loss = g.add(
        g.div(g.sub(acc_fs, acc_r), g.const(float(B))),
        g.mul(g.const(gp_weight), g.div(acc_gp, g.const(float(B)))))
    return gen_loss, disc_loss


# -- flow likelihood ----------------------------------------------------------------


def cnf_nll_value(gen: ContinuousPfg, real: np.ndarray, log_density,
                  hj_weight: float, kernel: Kernel | None = None):
    """Negative log likelihood of real samples under the pushforward, plus
    the weighted HJ residual over the recovered trajectories.

    ``log_density`` maps (B, d) inputs to per-sample (possibly
    unnormalized) log densities of the source distribution.  Returns
    (nll, residual, total).
    """
    from .generator import inverse_map_batch, log_density_forward_batch
    ker = kernel or Kernel(gen.store)
    real = np.atleast_2d(real)
    X, _ = inverse_map_batch(gen, real, kernel=ker)
    logp0 = np.asarray(log_density(X), dtype=np.float64)
    _, logp, traj, _ = log_density_forward_batch(gen, X, logp0, kernel=ker)
    nll = float(-np.mean(logp))
    times = np.arange(gen.n + 1) * gen.dt
    pts = ResidualPointSet.from_trajectory(times, traj)
    hj = hj_residual_value(gen, pts, kernel=ker)
    return nll, hj, nll + hj_weight * hj


def flow_log_density_nodes(g: Graph, template: PotentialTemplate,
                           y_nodes: list[int], logp_builder, n: int, dt: float):
    """Graph route for the likelihood of one sample.

    Builds the inverse Euler chain from the y nodes, then the forward
    chain carrying log density via the spatial Hessian trace.  Returns
    (logp node, x nodes, trajectory node levels).  ``logp_builder(g,
    x_nodes)`` must express the source log density in-graph.
    """
    d = len(y_nodes)
    T = n * dt
    dt_c = g.const(dt)
    # second spatial derivatives of the potential template, built once
    hdiag = [g.grad(template.grad_ids[1 + k], [template.input_ids[1 + k]])[0]
             for k in range(d)]
    pos = list(y_nodes)
    for k in range(n):
        at = [g.const(T - k * dt)] + pos
        gr = template.apply_grad(at)
        pos = [g.sub(pos[c], g.mul(dt_c, gr[1 + c])) for c in range(d)]
    x_nodes = pos
    logp = logp_builder(g, x_nodes)
    pos = list(x_nodes)
    levels = [list(pos)]
    for i in range(n):
        at = [g.const(i * dt)] + pos
        gr = template.apply_grad(at)
        (tr,) = g.substitute([hdiag[0]], dict(zip(template.input_ids, at)))
        for k in range(1, d):
            (h,) = g.substitute([hdiag[k]], dict(zip(template.input_ids, at)))
            tr = g.add(tr, h)
        logp = g.sub(logp, g.mul(dt_c, tr))
        pos = [g.add(pos[c], g.mul(dt_c, gr[1 + c])) for c in range(d)]
        levels.append(list(pos))
    return logp, x_nodes, levels
