"""The three generator constructions and their flow machinery.

* Discrete potential flow: a network represents the potential at time
  zero; later potentials come from the explicit Euler recursion
  ``pot[i+1] = pot[i] - dt/2 * |grad pot[i]|^2``, which bakes the
  optimality condition into the map but stacks gradients of gradients.
  This one runs on the scalar graph engine, the only route that supports
  the required nesting depth.

* Continuous potential flow: a network takes (t, x) directly; the map is
  forward Euler on ``dx/dt = grad_x pot(t, x)``.  Optimality is *not*
  built in; the training losses penalize the Hamilton-Jacobi residual.
  Runs on the vectorized kernels, with a graph twin for verification.

* Vanilla: a plain network from inputs to outputs.

All integrations are first-order forward Euler with dt = T/n.  Every step
checks for non-finite values and raises :class:`DivergenceError` naming
the step, rather than letting NaNs propagate silently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backprop import Kernel
from .graph import Graph
from . import nn


class DivergenceError(RuntimeError):
    """A flow integration produced non-finite values."""

    def __init__(self, step: int, what: str = "flow step"):
        super().__init__(f"non-finite values in {what} at step {step}")
        self.step = step


@dataclass
class Trajectory:
    """Time-stamped positions of one sample: points[i] = position at i*dt."""
    times: np.ndarray   # (n+1,)
    points: np.ndarray  # (n+1, d)


@dataclass
class DiscretePfg:
    spec: nn.MlpSpec          # d -> 1 potential at time zero
    store: nn.ParamStore
    n: int = 4
    dt: float = 0.25

    def __post_init__(self):
        if self.spec.out_dim != 1:
            raise ValueError("discrete potential network must be scalar-valued")

    @property
    def dim(self) -> int:
        return self.spec.in_dim

    @property
    def total_time(self) -> float:
        return self.n * self.dt


@dataclass
class ContinuousPfg:
    spec: nn.MlpSpec          # (t, x): d+1 -> 1
    store: nn.ParamStore
    n: int = 100
    dt: float = 0.01

    def __post_init__(self):
        if self.spec.out_dim != 1:
            raise ValueError("continuous potential network must be scalar-valued")

    @property
    def dim(self) -> int:
        return self.spec.in_dim - 1

    @property
    def total_time(self) -> float:
        return self.n * self.dt


@dataclass
class VanillaGenerator:
    spec: nn.MlpSpec          # d -> d
    store: nn.ParamStore

    @property
    def dim(self) -> int:
        return self.spec.in_dim


# -- continuous flow, vectorized route ------------------------------------------


class SliceRecord:
    """Per-time-slice state kept for the backward passes."""
    __slots__ = ("t", "cache", "gcache", "G", "trace", "jets")

    def __init__(self, t, cache, gcache, G, trace=None, jets=None):
        self.t = t
        self.cache = cache
        self.gcache = gcache
        self.G = G          # (B, d+1) input gradient: column 0 is d/dt
        self.trace = trace  # (B,) spatial Hessian trace, when requested
        self.jets = jets


def _slice(ker: Kernel, t: float, pos: np.ndarray, step: int,
           with_trace: bool = False, what: str = "flow step") -> SliceRecord:
    B = pos.shape[0]
    U = np.empty((B, pos.shape[1] + 1))
    U[:, 0] = t
    U[:, 1:] = pos
    _, cache = ker.forward(U)
    G, gcache = ker.input_grad(cache)
    if not np.all(np.isfinite(G)):
        raise DivergenceError(step, what)
    rec = SliceRecord(t, cache, gcache, G)
    if with_trace:
        rec.trace, rec.jets = ker.hess_trace(cache, gcache,
                                             dims=list(range(1, pos.shape[1] + 1)))
    return rec


def continuous_forward_batch(gen: ContinuousPfg, X: np.ndarray,
                             keep: bool = False, with_trace: bool = False,
                             kernel: Kernel | None = None):
    """Map a batch through the flow.

    Returns ``(Y, traj, records)`` where traj has shape (n+1, B, d) and
    ``records`` (only when ``keep``) holds one :class:`SliceRecord` per
    time slice i = 0..n; the extra slice at t = T supplies the final
    residual point of each trajectory.
    """
    ker = kernel or Kernel(gen.store)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    B, d = X.shape
    traj = np.empty((gen.n + 1, B, d))
    traj[0] = X
    pos = X
    records = [] if keep else None
    for i in range(gen.n):
        rec = _slice(ker, i * gen.dt, pos, i, with_trace=with_trace)
        pos = pos + gen.dt * rec.G[:, 1:]
        if not np.all(np.isfinite(pos)):
            raise DivergenceError(i)
        traj[i + 1] = pos
        if keep:
            records.append(rec)
    if keep:
        records.append(_slice(ker, gen.total_time, pos, gen.n,
                              with_trace=with_trace))
    return pos, traj, records


def inverse_map_batch(gen: ContinuousPfg, Y: np.ndarray, keep: bool = False,
                      kernel: Kernel | None = None):
    """Integrate dU/ds = -v(T - s, U) from U(0) = y over the same n steps."""
    ker = kernel or Kernel(gen.store)
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    pos = Y
    records = [] if keep else None
    for k in range(gen.n):
        t = gen.total_time - k * gen.dt
        rec = _slice(ker, t, pos, k, what="inverse flow step")
        pos = pos - gen.dt * rec.G[:, 1:]
        if not np.all(np.isfinite(pos)):
            raise DivergenceError(k, "inverse flow step")
        if keep:
            records.append(rec)
    return pos, records


def log_density_forward_batch(gen: ContinuousPfg, X: np.ndarray,
                              logp0: np.ndarray, keep: bool = False,
                              kernel: Kernel | None = None):
    """Propagate positions and log-density together.

    d log p / dt along a trajectory equals minus the spatial Laplacian of
    the potential, evaluated by exact Hessian trace.  Euler-discretized on
    the same grid as the map.
    """
    ker = kernel or Kernel(gen.store)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    logp = np.array(logp0, dtype=np.float64, copy=True).reshape(X.shape[0])
    B, d = X.shape
    traj = np.empty((gen.n + 1, B, d))
    traj[0] = X
    pos = X
    records = [] if keep else None
    for i in range(gen.n):
        rec = _slice(ker, i * gen.dt, pos, i, with_trace=True)
        pos = pos + gen.dt * rec.G[:, 1:]
        logp = logp - gen.dt * rec.trace
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(logp))):
            raise DivergenceError(i, "log-density step")
        traj[i + 1] = pos
        if keep:
            records.append(rec)
    if keep:
        records.append(_slice(ker, gen.total_time, pos, gen.n, with_trace=True))
    return pos, logp, traj, records


# -- generic Euler flows over arbitrary velocity fields --------------------------
#
# The oracle tests drive these with analytic potentials (for which the map
# is known in closed form); they share the exact stepping semantics of the
# network-backed loops above.


def flow_forward(velocity, X, n: int, dt: float):
    """velocity(t, X) -> (B, d); returns (Y, traj)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    traj = np.empty((n + 1,) + X.shape)
    traj[0] = X
    pos = X
    for i in range(n):
        pos = pos + dt * velocity(i * dt, pos)
        if not np.all(np.isfinite(pos)):
            raise DivergenceError(i)
        traj[i + 1] = pos
    return pos, traj


def flow_inverse(velocity, Y, n: int, dt: float):
    """Integrate dU/ds = -velocity(T - s, U) from each y."""
    pos = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    T = n * dt
    for k in range(n):
        pos = pos - dt * velocity(T - k * dt, pos)
        if not np.all(np.isfinite(pos)):
            raise DivergenceError(k, "inverse flow step")
    return pos


def flow_log_density(velocity, laplacian, X, logp0, n: int, dt: float):
    """Euler on positions and on d log p / dt = -laplacian(t, x)."""
    pos = np.atleast_2d(np.asarray(X, dtype=np.float64))
    logp = np.array(logp0, dtype=np.float64, copy=True).reshape(pos.shape[0])
    for i in range(n):
        t = i * dt
        lap = laplacian(t, pos)
        pos, logp = pos + dt * velocity(t, pos), logp - dt * lap
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(logp))):
            raise DivergenceError(i, "log-density step")
    return pos, logp


# -- per-sample wrappers (the batched routes do the work) -----------------------


def _times(gen) -> np.ndarray:
    return np.arange(gen.n + 1) * gen.dt


def continuous_forward(gen: ContinuousPfg, x: np.ndarray) -> tuple[np.ndarray, Trajectory]:
    y, traj, _ = continuous_forward_batch(gen, np.asarray(x)[None, :])
    return y[0], Trajectory(_times(gen), traj[:, 0, :])


def inverse_map(gen: ContinuousPfg, y: np.ndarray) -> np.ndarray:
    x, _ = inverse_map_batch(gen, np.asarray(y)[None, :])
    return x[0]


def log_density_forward(gen: ContinuousPfg, x: np.ndarray,
                        logp: float) -> tuple[np.ndarray, float]:
    y, lp, _, _ = log_density_forward_batch(gen, np.asarray(x)[None, :],
                                            np.array([logp]))
    return y[0], float(lp[0])


def vanilla_forward_batch(gen: VanillaGenerator, X: np.ndarray,
                          keep: bool = False, kernel: Kernel | None = None):
    ker = kernel or Kernel(gen.store)
    Y, cache = ker.forward(np.atleast_2d(np.asarray(X, dtype=np.float64)))
    return (Y, cache) if keep else (Y, None)


def vanilla_forward(gen: VanillaGenerator, x: np.ndarray) -> np.ndarray:
    Y, _ = vanilla_forward_batch(gen, np.asarray(x)[None, :])
    return Y[0]


# -- graph route -----------------------------------------------------------------


class PotentialTemplate:
    """A potential network built once as graph nodes, with its first
    derivatives, over one set of input leaves.  ``apply``/``apply_grad``
    substitute those leaves with arbitrary expression nodes."""

    def __init__(self, g: Graph, spec: nn.MlpSpec, store: nn.ParamStore):
        self.g = g
        self.spec = spec
        self.theta_ids = nn.register_params(g, store)
        self.input_ids = [g.var() for _ in range(spec.in_dim)]
        (self.phi,) = nn.forward(spec, self.theta_ids, g, self.input_ids)
        self.grad_ids = g.grad(self.phi, self.input_ids)

    def bindings(self, store: nn.ParamStore) -> dict[int, float]:
        return nn.param_bindings(self.theta_ids, store)

    def apply(self, at: list[int]) -> int:
        (out,) = self.g.substitute([self.phi], dict(zip(self.input_ids, at)))
        return out

    def apply_grad(self, at: list[int]) -> list[int]:
        return self.g.substitute(self.grad_ids, dict(zip(self.input_ids, at)))


def unroll_discrete_potentials(g: Graph, phi0: int, x_ids: list[int],
                               n: int, dt: float):
    """Potential expressions at each time level from an initial-condition
    expression: pot[i+1] = pot[i] - dt/2 * |grad pot[i]|^2, velocities are
    the gradients.  Returns (pots, vels); works for any phi0 expression."""
    pots = [phi0]
    vels = []
    half_dt = g.const(0.5 * dt)
    for i in range(n):
        v = g.grad(pots[i], x_ids)
        vels.append(v)
        speed2 = g.square(v[0])
        for vk in v[1:]:
            speed2 = g.add(speed2, g.square(vk))
        pots.append(g.sub(pots[i], g.mul(half_dt, speed2)))
    return pots, vels


def discrete_trajectory_ids(g: Graph, vels: list[list[int]], x_ids: list[int],
                            n: int, dt: float) -> list[list[int]]:
    """Euler positions as expressions, substituting each time level's
    velocity at the running position."""
    dt_c = g.const(dt)
    d = len(x_ids)
    pos = list(x_ids)
    traj_ids = [list(pos)]
    for i in range(n):
        v_here = g.substitute(vels[i], dict(zip(x_ids, pos)))
        pos = [g.add(pos[k], g.mul(dt_c, v_here[k])) for k in range(d)]
        traj_ids.append(list(pos))
    return traj_ids


class DiscreteProgram:
    """Graph program for the discrete generator.

    Node ids for every trajectory level are kept so evaluation can name
    the first diverging step; positions are also exposed for loss
    construction.
    """

    def __init__(self, gen: DiscretePfg, dedup: bool = True):
        self.gen = gen
        g = Graph(dedup=dedup)
        self.g = g
        self.theta_ids = nn.register_params(g, gen.store)
        self.x_ids = [g.var() for _ in range(gen.dim)]
        (phi0,) = nn.forward(gen.spec, self.theta_ids, g, self.x_ids)
        self.pots, self.vels = unroll_discrete_potentials(g, phi0, self.x_ids,
                                                          gen.n, gen.dt)
        self.traj_ids = discrete_trajectory_ids(g, self.vels, self.x_ids,
                                                gen.n, gen.dt)
        self.y_ids = list(self.traj_ids[-1])

    def bindings(self, X: np.ndarray) -> dict:
        return _program_bindings(self, X)

    def run(self, X: np.ndarray):
        return _run_program(self, X, "discrete flow step")


def _program_bindings(prog, X: np.ndarray) -> dict:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    b = nn.param_bindings(prog.theta_ids, prog.gen.store)
    for k, xid in enumerate(prog.x_ids):
        b[xid] = X[:, k]
    return b


def _run_program(prog, X: np.ndarray, what: str):
    """Evaluate a trajectory program at a batch; returns (Y, traj)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    flat = [nid for level in prog.traj_ids for nid in level]
    vals = prog.g.evaluate(flat, prog.bindings(X))
    d = prog.gen.dim
    n = prog.gen.n
    traj = np.empty((n + 1, X.shape[0], d))
    for i in range(n + 1):
        level = vals[i * d:(i + 1) * d]
        for k in range(d):
            v = level[k]
            traj[i, :, k] = v if np.ndim(v) else np.full(X.shape[0], v)
        if not np.all(np.isfinite(traj[i])):
            raise DivergenceError(i, what)
    return traj[-1], traj


def discrete_forward(gen: DiscretePfg, x: np.ndarray,
                     program: DiscreteProgram | None = None):
    """Spec route: one sample in, (y, trajectory) out."""
    prog = program or DiscreteProgram(gen)
    y, traj = prog.run(np.asarray(x)[None, :])
    return y[0], Trajectory(_times(gen), traj[:, 0, :])


class ContinuousProgram:
    """Graph twin of the vectorized continuous flow (verification route).

    Builds the unrolled Euler map over x leaves; exposes trajectory node
    ids per level.  Sized for small n and small nets.
    """

    def __init__(self, gen: ContinuousPfg, dedup: bool = True):
        self.gen = gen
        g = Graph(dedup=dedup)
        self.g = g
        self.template = PotentialTemplate(g, gen.spec, gen.store)
        self.theta_ids = self.template.theta_ids
        d = gen.dim
        self.x_ids = [g.var() for _ in range(d)]
        dt_c = g.const(gen.dt)
        pos = list(self.x_ids)
        self.traj_ids = [list(pos)]
        for i in range(gen.n):
            at = [g.const(i * gen.dt)] + pos
            gr = self.template.apply_grad(at)
            pos = [g.add(pos[k], g.mul(dt_c, gr[1 + k])) for k in range(d)]
            self.traj_ids.append(list(pos))
        self.y_ids = list(self.traj_ids[-1])

    def bindings(self, X: np.ndarray) -> dict:
        return _program_bindings(self, X)

    def run(self, X: np.ndarray):
        return _run_program(self, X, "flow step")
