"""Training loops binding generators, losses, and problems.

One step samples batches, pushes the source batch through the generator
(recording the trajectory), assembles the configured loss, accumulates the
parameter gradient, and applies Adam.  The default backend uses the
closed-form kernels; ``grad_backend="graph"`` runs the same mathematics
through the scalar graph engine (mandatory for the discrete generator,
and the verification route for the others).

Divergence policy: any non-finite value aborts the run, the last written
checkpoint is retained, and the report carries the failing step.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import losses, nn, problems
from .backprop import GradBuffer, Kernel
from .generator import (ContinuousPfg, ContinuousProgram, DiscretePfg,
                        DiscreteProgram, DivergenceError, VanillaGenerator,
                        continuous_forward_batch, inverse_map_batch,
                        log_density_forward_batch, vanilla_forward_batch)
from .graph import EvaluationError
from .losses import (Discriminator, ResidualPointSet, residuals_from_grads,
                     swg_value_and_grad, transport_value_and_grad,
                     wgan_disc_value_and_grad, wgan_gen_value_and_seed)
from .problems import RunReport, map_error, problem_by_name

GENERATORS = ("vanilla", "discrete-pfg", "continuous-pfg")
LOSSES = ("swg", "wgan-gp", "cnf")
BACKENDS = ("fast", "graph")


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


@dataclass
class RunConfig:
    problem: str = "gaussian"
    generator: str = "continuous-pfg"
    loss: str = "swg"
    lambda_hj: float = 1.0
    alpha: float = 0.0
    n_steps: int = 100
    total_time: float = 1.0
    hidden_layers: int = 5
    hidden_width: int = 128
    batch_size: int = 1000
    steps: int = 100000
    lr: float = 1e-5
    beta1: float = 0.5
    beta2: float = 0.9
    adam_eps: float = 1e-8
    num_projections: int = 1000
    gp_weight: float = 10.0
    disc_hidden_layers: int = 5
    disc_hidden_width: int = 128
    disc_updates: int = 1
    train_set_size: int = 40000
    eval_samples: int = 10000
    eval_every: int = 5000
    checkpoint_every: int = 10000
    seed: int = 0
    grad_backend: str = "fast"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.generator not in GENERATORS:
            raise ConfigError(f"generator must be one of {GENERATORS}")
        if self.loss not in LOSSES:
            raise ConfigError(f"loss must be one of {LOSSES}")
        if self.grad_backend not in BACKENDS:
            raise ConfigError(f"grad_backend must be one of {BACKENDS}")
        if self.loss == "cnf" and self.generator != "continuous-pfg":
            raise ConfigError("cnf loss requires the continuous generator "
                              "(the discrete one cannot carry densities at its "
                              "coarse step size)")
        if self.lambda_hj != 0.0 and self.generator != "continuous-pfg":
            raise ConfigError("the PDE residual weight applies only to the "
                              "continuous generator")
        if self.alpha != 0.0 and self.generator != "vanilla":
            raise ConfigError("the transport penalty weight applies only to "
                              "the vanilla generator")
        if self.lambda_hj < 0 or self.alpha < 0:
            raise ConfigError("loss weights must be nonnegative")
        if self.generator == "discrete-pfg" and self.grad_backend != "graph":
            raise ConfigError("the discrete generator trains on the graph "
                              "backend (nested gradients); set grad_backend "
                              "to 'graph'")
        if self.grad_backend == "graph" and self.loss != "swg":
            raise ConfigError("the graph backend currently trains the swg "
                              "loss only")
        for name in ("n_steps", "hidden_layers", "hidden_width", "batch_size",
                     "num_projections", "train_set_size", "eval_samples",
                     "disc_hidden_layers", "disc_hidden_width", "disc_updates"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if self.total_time <= 0:
            raise ConfigError("total_time must be positive")

    @property
    def dt(self) -> float:
        return self.total_time / self.n_steps

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        valid = set(cls.field_names())
        unknown = sorted(set(d) - valid)
        if unknown:
            raise ConfigError(
                f"unknown config keys {unknown}; valid keys: {sorted(valid)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainLogRecord:
    step: int
    loss_total: float
    loss_fit: float        # gan surrogate value or nll
    loss_hj: float
    loss_transport: float
    sw_distance: float | None = None
    map_error: float | None = None
    wall_time: float = 0.0

    HEADER = ("step", "loss_total", "loss_fit", "loss_hj", "loss_transport",
              "sw_distance", "map_error", "wall_time")

    def row(self):
        return [self.step, repr(self.loss_total), repr(self.loss_fit),
                repr(self.loss_hj), repr(self.loss_transport),
                "" if self.sw_distance is None else repr(self.sw_distance),
                "" if self.map_error is None else repr(self.map_error),
                f"{self.wall_time:.3f}"]


def _streams(seed: int) -> dict[str, np.random.Generator]:
    names = ("data_mu", "data_nu", "init_gen", "init_disc", "proj", "gp", "eval")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.Generator(np.random.PCG64(c))
            for n, c in zip(names, children)}


def _child_seed(seed: int, tag: int) -> int:
    return int(np.random.SeedSequence((seed, tag)).generate_state(1)[0])


def build_generator(cfg: RunConfig, dim: int):
    if cfg.generator == "vanilla":
        spec = nn.MlpSpec(dim, cfg.hidden_layers, cfg.hidden_width, dim)
        return VanillaGenerator(spec, nn.init(spec, _child_seed(cfg.seed, 1)))
    if cfg.generator == "discrete-pfg":
        spec = nn.MlpSpec(dim, cfg.hidden_layers, cfg.hidden_width, 1)
        store = nn.init(spec, _child_seed(cfg.seed, 1))
        store.weight(store.n_layers - 1)[:] = 0.0
        return DiscretePfg(spec, store, n=cfg.n_steps, dt=cfg.dt)
    spec = nn.MlpSpec(dim + 1, cfg.hidden_layers, cfg.hidden_width, 1)
    store = nn.init(spec, _child_seed(cfg.seed, 1))
    # zero potential at start: the flow begins as the identity map, the
    # natural neutral element for a transport generator
    store.weight(store.n_layers - 1)[:] = 0.0
    return ContinuousPfg(spec, store, n=cfg.n_steps, dt=cfg.dt)


def generator_map(gen, batch_size: int = 4096):
    """A plain (B, d) -> (B, d) callable for any generator kind."""
    if callable(gen) and not isinstance(gen, (VanillaGenerator, ContinuousPfg,
                                              DiscretePfg)):
        return gen   # frozen analytic maps evaluate as-is
    if isinstance(gen, VanillaGenerator):
        ker = Kernel(gen.store)
        return lambda X: ker.forward(np.atleast_2d(X))[0]
    if isinstance(gen, ContinuousPfg):
        ker = Kernel(gen.store)

        def _map(X):
            X = np.atleast_2d(X)
            outs = [continuous_forward_batch(gen, X[i:i + batch_size],
                                             kernel=ker)[0]
                    for i in range(0, X.shape[0], batch_size)]
            return np.vstack(outs)
        return _map
    if isinstance(gen, DiscretePfg):
        prog = DiscreteProgram(gen)

        def _map(X):
            X = np.atleast_2d(X)
            outs = [prog.run(X[i:i + 1024])[0]
                    for i in range(0, X.shape[0], 1024)]
            return np.vstack(outs)
        return _map
    raise TypeError(f"unknown generator {type(gen)!r}")


# -- fast-path backward passes -----------------------------------------------------


def _residual_seed(rec, r: np.ndarray, scale: float) -> np.ndarray:
    """Seed on the full input gradient for the HJ penalty at one slice:
    d/dG of scale * sum(r^2)/2-style terms, with coordinates held fixed."""
    B = r.shape[0]
    C = np.empty_like(rec.G)
    C[:, 0] = 1.0
    C[:, 1:] = rec.G[:, 1:]
    return (scale * r)[:, None] * C


def continuous_backward(gen: ContinuousPfg, ker: Kernel, recs, gY: np.ndarray,
                        lam: float, gbuf: GradBuffer) -> float:
    """Chain rule through the unrolled Euler map plus the HJ penalty.

    ``gY`` is the loss gradient at the outputs.  Returns the HJ penalty
    value.  Residual points are the trajectory slices; their coordinates
    are constants for the backward pass (stop-gradient contract), so the
    penalty contributes parameter seeds only, while the output-loss chain
    also propagates Hessian-vector products down the trajectory.
    """
    n, dt, B = gen.n, gen.dt, gY.shape[0]
    N = (n + 1) * B
    rs = [residuals_from_grads(rec.G) for rec in recs]
    v_hj = sum(float(np.dot(r, r)) for r in rs) / N
    scale = 2.0 * lam / N
    if lam != 0.0:
        ker.vjp_input_grad(_residual_seed(recs[n], rs[n], scale),
                           recs[n].cache, recs[n].gcache, gbuf, need_ubar=False)
    delta = gY
    zeros = np.zeros((B, 1))
    for i in range(n - 1, -1, -1):
        rec = recs[i]
        Cchain = np.concatenate([zeros, dt * delta], axis=1)
        Ctotal = Cchain
        if lam != 0.0:
            Ctotal = Cchain + _residual_seed(rec, rs[i], scale)
        ker.vjp_input_grad(Ctotal, rec.cache, rec.gcache, gbuf, need_ubar=False)
        hv = ker.hvp(rec.cache, rec.gcache, Cchain)
        delta = delta + hv[:, 1:]
    return v_hj


def cnf_backward(gen: ContinuousPfg, ker: Kernel, inv_recs, fwd_recs,
                 X: np.ndarray, score: np.ndarray, lam: float,
                 gbuf: GradBuffer) -> float:
    """Backward pass of the likelihood loss.

    Forward chain carries both positions and the divergence integral; the
    inverse chain recovered X from the data.  Gradients flow through both
    chains and through the source log-density via its score; residual
    points (forward trajectory) contribute parameter seeds only.
    """
    n, dt, B = gen.n, gen.dt, X.shape[0]
    N = (n + 1) * B
    rs = [residuals_from_grads(rec.G) for rec in fwd_recs]
    v_hj = sum(float(np.dot(r, r)) for r in rs) / N
    scale = 2.0 * lam / N
    if lam != 0.0:
        ker.vjp_input_grad(_residual_seed(fwd_recs[n], rs[n], scale),
                           fwd_recs[n].cache, fwd_recs[n].gcache, gbuf,
                           need_ubar=False)
    d = X.shape[1]
    delta = np.zeros((B, d))
    zeros = np.zeros((B, 1))
    trace_seed = np.full(B, dt / B)   # d(-mean log p)/d trace_i
    for i in range(n - 1, -1, -1):
        rec = fwd_recs[i]
        Cchain = np.concatenate([zeros, dt * delta], axis=1)
        Ctotal = Cchain
        if lam != 0.0:
            Ctotal = Cchain + _residual_seed(rec, rs[i], scale)
        ker.vjp_input_grad(Ctotal, rec.cache, rec.gcache, gbuf, need_ubar=False)
        u_tr = ker.vjp_hess_trace(trace_seed, rec.cache, rec.gcache, rec.jets,
                                  gbuf, need_ubar=True)
        hv = ker.hvp(rec.cache, rec.gcache, Cchain)
        delta = delta + hv[:, 1:] + u_tr[:, 1:]
    # source density contribution at X, then back through the inverse chain
    delta = delta + (-1.0 / B) * score
    for k in range(n - 1, -1, -1):
        rec = inv_recs[k]
        C = np.concatenate([zeros, -dt * delta], axis=1)
        ker.vjp_input_grad(C, rec.cache, rec.gcache, gbuf, need_ubar=False)
        hv = ker.hvp(rec.cache, rec.gcache, C)
        delta = delta + hv[:, 1:]
    return v_hj


# -- graph-path training (discrete generator; verification route) -------------------


class GraphSwgLoop:
    """SWG training through the graph engine.

    Builds the per-sample loss expression once: a surrogate inner product
    of the outputs with bound seed leaves (the sliced Wasserstein gradient
    enters through those seeds, its sort permutation being frozen per
    step) plus, for the continuous generator, the HJ penalty on
    stop-gradient-wrapped trajectory coordinates.  Each step re-binds
    leaves with batch columns and evaluates the pre-built adjoints.
    """

    def __init__(self, gen, lam: float = 0.0):
        self.gen = gen
        self.lam = lam
        if isinstance(gen, DiscretePfg):
            prog = DiscreteProgram(gen)
            if lam != 0.0:
                raise ConfigError("PDE residual is undefined for the discrete "
                                  "generator (its regularity is built in)")
        elif isinstance(gen, ContinuousPfg):
            prog = ContinuousProgram(gen)
        else:
            raise ConfigError("graph backend supports the potential-flow "
                              "generators")
        self.prog = prog
        g = prog.g
        d = gen.dim
        self.ghat_ids = [g.var() for _ in range(d)]
        surrogate = g.const(0.0)
        for k in range(d):
            surrogate = g.add(surrogate, g.mul(self.ghat_ids[k], prog.y_ids[k]))
        self.loss_extra = g.const(0.0)
        if lam != 0.0 and isinstance(gen, ContinuousPfg):
            pts = []
            for i, level in enumerate(prog.traj_ids):
                t_node = g.const(i * gen.dt)
                pts.append((t_node, [g.stop_gradient(p) for p in level]))
            hj = losses.hj_residual(g, prog.template, pts)
            # per-sample residual share; the batch mean happens at reduction
            self.loss_extra = g.mul(g.const(lam), hj)
        total = g.add(surrogate, self.loss_extra)
        self.grad_ids = g.grad(total, prog.theta_ids)

    def step(self, X: np.ndarray, R: np.ndarray, num_projections: int,
             rng: np.random.Generator, gbuf: GradBuffer):
        prog, g = self.prog, self.prog.g
        B = X.shape[0]
        Y, _ = prog.run(X)
        v_sw, gY = swg_value_and_grad(Y, R, num_projections, rng)
        binds = prog.bindings(X)
        for k, gid in enumerate(self.ghat_ids):
            binds[gid] = gY[:, k] * B   # surrogate is averaged over the batch below
        vals = g.evaluate(list(self.grad_ids) + [self.loss_extra], binds)
        extra = vals.pop()
        flat = gbuf.flat
        for j, v in enumerate(vals):
            flat[j] += float(np.mean(v)) if np.ndim(v) else float(v)
        v_hj = float(np.mean(extra)) / self.lam if self.lam else 0.0
        return v_sw, v_hj, Y


# -- the training entry point ---------------------------------------------------------


def train(cfg: RunConfig, out_dir, problem: problems.ProblemSpec | None = None,
          log_every: int = 100) -> RunReport:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    prob = problem if problem is not None else problem_by_name(cfg.problem)
    if cfg.loss == "cnf" and (prob.log_density_mu is None or prob.score_mu is None):
        raise ConfigError(f"problem {prob.name!r} lacks a source density; "
                          "cnf training needs log density and score")
    streams = _streams(cfg.seed)
    t0 = time.perf_counter()

    X_train = prob.sample_mu(cfg.train_set_size, streams["data_mu"])
    R_train = prob.sample_nu(cfg.train_set_size, streams["data_nu"])
    gen = build_generator(cfg, prob.dim)
    state = nn.AdamState.fresh(gen.store.theta.size, lr=cfg.lr, beta1=cfg.beta1,
                               beta2=cfg.beta2, eps=cfg.adam_eps)
    disc = None
    disc_state = None
    if cfg.loss == "wgan-gp":
        dspec = nn.MlpSpec(prob.dim, cfg.disc_hidden_layers,
                           cfg.disc_hidden_width, 1)
        disc = Discriminator(dspec, nn.init(dspec, _child_seed(cfg.seed, 2)),
                             gp_weight=cfg.gp_weight)
        disc_state = nn.AdamState.fresh(disc.store.theta.size, lr=cfg.lr,
                                        beta1=cfg.beta1, beta2=cfg.beta2,
                                        eps=cfg.adam_eps)

    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2,
                                                sort_keys=True) + "\n")

    ker = Kernel(gen.store) if cfg.generator != "discrete-pfg" else None
    dker = Kernel(disc.store) if disc is not None else None
    graph_loop = (GraphSwgLoop(gen, cfg.lambda_hj)
                  if cfg.grad_backend == "graph" else None)
    gbuf = GradBuffer(gen.spec)

    log_path = out / "log.csv"
    log_f = open(log_path, "w", newline="")
    log_w = csv.writer(log_f)
    log_w.writerow(TrainLogRecord.HEADER)

    def checkpoint(tag):
        nn.save_checkpoint(gen.store, state, out / f"checkpoint_{tag}.bin")
        if disc is not None:
            nn.save_checkpoint(disc.store, disc_state,
                               out / f"disc_checkpoint_{tag}.bin")

    def draw(train_set, rng):
        idx = rng.integers(0, train_set.shape[0], size=cfg.batch_size)
        return train_set[idx]

    diverged_at = None
    divergence_msg = None
    step = 0
    try:
        for step in range(1, cfg.steps + 1):
            v_fit = v_hj = v_tp = 0.0

            if cfg.loss == "wgan-gp":
                for _ in range(cfg.disc_updates):
                    Xd = draw(X_train, streams["data_mu"])
                    Rd = draw(R_train, streams["data_nu"])
                    fake = _generator_batch(cfg, gen, ker, graph_loop, Xd)[0]
                    _, dgrad = wgan_disc_value_and_grad(
                        disc, fake, Rd, streams["gp"], kernel=dker)
                    nn.adam_step(disc.store, dgrad, disc_state)

            X = draw(X_train, streams["data_mu"])
            R = draw(R_train, streams["data_nu"])
            gbuf.flat[:] = 0.0
            if cfg.grad_backend == "graph":
                v_fit, v_hj, _ = graph_loop.step(X, R, cfg.num_projections,
                                                 streams["proj"], gbuf)
            elif cfg.generator == "vanilla":
                Y, cache = vanilla_forward_batch(gen, X, keep=True, kernel=ker)
                if cfg.loss == "swg":
                    v_fit, gY = swg_value_and_grad(Y, R, cfg.num_projections,
                                                   streams["proj"])
                else:
                    v_fit, gY = wgan_gen_value_and_seed(disc, Y, kernel=dker)
                if cfg.alpha != 0.0:
                    v_tp, gtp = transport_value_and_grad(X, Y)
                    gY = gY + cfg.alpha * gtp
                ker.vjp_output(gY, cache, gbuf)
            elif cfg.loss in ("swg", "wgan-gp"):
                Y, traj, recs = continuous_forward_batch(gen, X, keep=True,
                                                         kernel=ker)
                if cfg.loss == "swg":
                    v_fit, gY = swg_value_and_grad(Y, R, cfg.num_projections,
                                                   streams["proj"])
                else:
                    v_fit, gY = wgan_gen_value_and_seed(disc, Y, kernel=dker)
                v_hj = continuous_backward(gen, ker, recs, gY, cfg.lambda_hj,
                                           gbuf)
            else:  # cnf
                X_inv, inv_recs = inverse_map_batch(gen, R, keep=True,
                                                    kernel=ker)
                logp0 = prob.log_density_mu(X_inv)
                _, logp, _, fwd_recs = log_density_forward_batch(
                    gen, X_inv, logp0, keep=True, kernel=ker)
                v_fit = float(-np.mean(logp))
                v_hj = cnf_backward(gen, ker, inv_recs, fwd_recs, X_inv,
                                    prob.score_mu(X_inv), cfg.lambda_hj, gbuf)

            nn.adam_step(gen.store, gbuf.flat, state)

            total = v_fit + cfg.lambda_hj * v_hj + cfg.alpha * v_tp
            if not np.isfinite(total):
                raise DivergenceError(step, "loss")
            do_eval = bool(cfg.eval_every) and step % cfg.eval_every == 0
            if do_eval or step % log_every == 0 or step == cfg.steps:
                rec = TrainLogRecord(step, total, v_fit, v_hj, v_tp,
                                     wall_time=time.perf_counter() - t0)
                if do_eval:
                    quick = evaluate_generator(
                        gen, prob, min(cfg.eval_samples, 4000),
                        _child_seed(cfg.seed, 4),
                        num_projections=cfg.num_projections)
                    rec.sw_distance = quick.sw_distance
                    rec.map_error = quick.map_error
                log_w.writerow(rec.row())
                log_f.flush()
            if cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                checkpoint(f"{step:08d}")
    except (DivergenceError, nn.OptimizerError, EvaluationError) as e:
        diverged_at = getattr(e, "step", step)
        divergence_msg = str(e)
    finally:
        log_f.close()

    if diverged_at is None:
        checkpoint("final")
        report = evaluate_generator(gen, prob, cfg.eval_samples,
                                    _child_seed(cfg.seed, 3),
                                    num_projections=cfg.num_projections,
                                    nll=(cfg.loss == "cnf"),
                                    hj=(cfg.generator == "continuous-pfg"))
    else:
        # diverged parameters cannot be meaningfully evaluated
        report = RunReport(problem=prob.name, seed=cfg.seed, std_axes=None,
                           mean_norm=None, sw_distance=None)
    report.seed = cfg.seed
    report.steps_done = diverged_at - 1 if diverged_at is not None else cfg.steps
    report.diverged_at = diverged_at
    report.wall_time = time.perf_counter() - t0
    payload = {"config": cfg.to_dict(), "report": report.to_json_dict()}
    if divergence_msg:
        payload["divergence"] = divergence_msg
    (out / "report.json").write_text(json.dumps(payload, indent=2,
                                                sort_keys=True) + "\n")
    return report


def _generator_batch(cfg, gen, ker, graph_loop, X):
    if cfg.generator == "vanilla":
        return vanilla_forward_batch(gen, X, kernel=ker)
    if cfg.generator == "continuous-pfg":
        Y, _, _ = continuous_forward_batch(gen, X, kernel=ker)
        return Y, None
    Y, _ = graph_loop.prog.run(X)
    return Y, None


def evaluate_generator(gen, prob: problems.ProblemSpec, num_samples: int,
                       seed: int, num_projections: int = 1000,
                       nll: bool = False, hj: bool = False) -> RunReport:
    """All applicable metrics on fresh samples; deterministic under seed."""
    streams = _streams(seed)
    X = prob.sample_mu(num_samples, streams["data_mu"])
    R = prob.sample_nu(num_samples, streams["data_nu"])
    fwd = generator_map(gen)
    Y = fwd(X)
    sw, _ = swg_value_and_grad(Y, R, num_projections, streams["proj"])
    report = RunReport(
        problem=prob.name, seed=seed,
        std_axes=[float(s) for s in Y.std(axis=0)],
        mean_norm=float(np.mean(np.linalg.norm(Y, axis=1))),
        sw_distance=float(sw))
    if prob.analytic_map is not None:
        report.map_error = map_error(fwd, prob, num_samples,
                                     _child_seed(seed, 5))
    if hj and isinstance(gen, ContinuousPfg):
        n_hj = min(num_samples, 1000)
        _, traj, _ = continuous_forward_batch(gen, X[:n_hj])
        times = np.arange(gen.n + 1) * gen.dt
        report.hj_residual = losses.hj_residual_value(
            gen, ResidualPointSet.from_trajectory(times, traj))
    if nll and isinstance(gen, ContinuousPfg) and prob.log_density_mu is not None:
        n_nll = min(num_samples, 2000)
        nll_val, _, _ = losses.cnf_nll_value(gen, R[:n_nll],
                                             prob.log_density_mu, 0.0)
        report.nll = nll_val
    return report


def evaluate_checkpoint(checkpoint_path, cfg: RunConfig, num_samples: int,
                        seed: int,
                        problem: problems.ProblemSpec | None = None) -> RunReport:
    """Rebuild the generator from a checkpoint and evaluate it."""
    prob = problem if problem is not None else problem_by_name(cfg.problem)
    store, _ = nn.load_checkpoint(checkpoint_path)
    gen = build_generator(cfg, prob.dim)
    if store.spec != gen.spec:
        raise ConfigError(f"checkpoint spec {store.spec} does not match the "
                          f"config ({gen.spec})")
    gen.store.theta[:] = store.theta
    return evaluate_generator(gen, prob, num_samples, seed,
                              nll=(cfg.loss == "cnf"),
                              hj=(cfg.generator == "continuous-pfg"))
