"""Closed-form vectorized derivatives of the tanh MLP.

The training loops need, per network evaluation: the input gradient (the
velocity field), parameter gradients of linear functionals of that input
gradient (double backprop, for unrolled trajectories and the PDE residual),
the spatial Hessian trace (the flow's log-density divergence), and
parameter gradients of the trace (triple backprop).  All of it is written
out layer by layer in numpy; every routine is checked against the scalar
graph engine in the test suite, which is the independent route.

Notation, for L hidden layers of width w and input u of dim m:
    A[0] = u;  A[l] = tanh(A[l-1] @ Wh[l-1] + bh[l-1]);  T[l] = 1 - A[l]^2
    out  = A[L] @ Wo + bo
and for scalar output the input-gradient sweep
    P[L] = broadcast(Wo);  P[l-1] = (P[l] * T[l]) @ Wh[l-1].T;  G = P[0].
"""

from __future__ import annotations

import numpy as np

from .nn import MlpSpec, ParamStore


class FwdCache:
    __slots__ = ("A", "T")

    def __init__(self, A, T):
        self.A = A  # A[0]=input, A[1..L] activations
        self.T = T  # T[l] = 1 - A[l]^2, T[0] unused


class GradCache:
    __slots__ = ("P",)

    def __init__(self, P):
        self.P = P  # P[l] = d out / d A[l]; P[0] is the input gradient


class JetCache:
    """Per spatial tangent direction: forward and reverse jet states."""
    __slots__ = ("dims", "Adot", "Zdot", "Qdot", "Pdot")

    def __init__(self, dims, Adot, Zdot, Qdot, Pdot):
        self.dims = dims
        self.Adot = Adot
        self.Zdot = Zdot
        self.Qdot = Qdot
        self.Pdot = Pdot


class GradBuffer:
    """Flat parameter-gradient accumulator sharing the ParamStore layout."""

    def __init__(self, spec: MlpSpec):
        self._store = ParamStore(spec)

    @property
    def flat(self) -> np.ndarray:
        return self._store.theta

    def weight(self, l: int) -> np.ndarray:
        return self._store.weight(l)

    def bias(self, l: int) -> np.ndarray:
        return self._store.bias(l)


class Kernel:
    """Vectorized forward/derivative routines bound to one ParamStore.

    The weight views alias the store's flat vector, so in-place optimizer
    updates are picked up without rebuilding the kernel.
    """

    def __init__(self, store: ParamStore):
        self.store = store
        self.spec = store.spec
        self.L = self.spec.hidden_layers
        self.Wh = [store.weight(l) for l in range(self.L)]
        self.bh = [store.bias(l) for l in range(self.L)]
        self.Wo = store.weight(self.L)
        self.bo = store.bias(self.L)

    # -- forward ----------------------------------------------------------

    def forward(self, U: np.ndarray) -> tuple[np.ndarray, FwdCache]:
        """Outputs (B, out_dim) plus activation cache."""
        A = [np.asarray(U, dtype=np.float64)]
        T: list = [None]
        for l in range(self.L):
            Al = np.tanh(A[l] @ self.Wh[l] + self.bh[l])
            A.append(Al)
            T.append(1.0 - Al * Al)
        out = A[self.L] @ self.Wo + self.bo
        return out, FwdCache(A, T)

    # -- first order --------------------------------------------------------

    def input_grad(self, cache: FwdCache) -> tuple[np.ndarray, GradCache]:
        """d out / d input for scalar-output networks: (B, m)."""
        if self.spec.out_dim != 1:
            raise ValueError("input_grad requires a scalar-output network")
        A, T = cache.A, cache.T
        B = A[0].shape[0]
        P: list = [None] * (self.L + 1)
        P[self.L] = np.broadcast_to(self.Wo[:, 0], (B, self.Wo.shape[0]))
        for l in range(self.L, 0, -1):
            P[l - 1] = (P[l] * T[l]) @ self.Wh[l - 1].T
        return P[0], GradCache(P)

    def vjp_output(self, seed: np.ndarray, cache: FwdCache, gbuf: GradBuffer,
                   need_ubar: bool = False) -> np.ndarray | None:
        """Accumulate d(sum(seed * out))/d theta; optionally return d/d input."""
        A, T = cache.A, cache.T
        seed = seed.reshape(A[0].shape[0], self.spec.out_dim)
        gbuf.weight(self.L)[:] += A[self.L].T @ seed
        gbuf.bias(self.L)[:] += seed.sum(axis=0)
        Abar = seed @ self.Wo.T
        for l in range(self.L, 0, -1):
            Zbar = Abar * T[l]
            gbuf.weight(l - 1)[:] += A[l - 1].T @ Zbar
            gbuf.bias(l - 1)[:] += Zbar.sum(axis=0)
            Abar = Zbar @ self.Wh[l - 1].T
        return Abar if need_ubar else None

    # -- second order ---------------------------------------------------------

    def vjp_input_grad(self, C: np.ndarray, cache: FwdCache, gcache: GradCache,
                       gbuf: GradBuffer, need_ubar: bool = False):
        """Accumulate d(sum(C * G))/d theta; optionally return the
        Hessian-vector product d(sum(C * G))/d input."""
        return self._sweep_vjp(cache, gcache, gbuf, pbar0=C,
                               pbar_inject=None, abar_inject=None,
                               need_ubar=need_ubar)

    def _sweep_vjp(self, cache: FwdCache, gcache: GradCache, gbuf: GradBuffer,
                   pbar0, pbar_inject, abar_inject, need_ubar: bool):
        """Reverse-mode pass through (input-grad sweep, then forward pass).

        ``pbar0`` seeds the adjoint of P[0] = G; ``pbar_inject[l]`` /
        ``abar_inject[l]`` add adjoints of P[l] / A[l] accumulated by an
        outer program (the Hessian-trace jets).  None means zero.
        """
        A, T, P = cache.A, cache.T, gcache.P
        abar_acc: list = [None] * (self.L + 1)

        def _acc(lst, l, term):
            lst[l] = term if lst[l] is None else lst[l] + term

        # Up through the gradient sweep: P[l-1] = (P[l]*T[l]) @ Wh[l-1].T
        pbar = pbar0
        for l in range(1, self.L + 1):
            if pbar is not None:
                Q = P[l] * T[l]
                qbar = pbar @ self.Wh[l - 1]
                gbuf.weight(l - 1)[:] += pbar.T @ Q
                _acc(abar_acc, l, qbar * P[l] * (-2.0 * A[l]))
                pbar = qbar * T[l]
            if pbar_inject is not None and pbar_inject[l] is not None:
                pbar = pbar_inject[l] if pbar is None else pbar + pbar_inject[l]
        if pbar is not None:
            # top of sweep: P[L] is Wo broadcast over the batch
            gbuf.weight(self.L)[:, 0] += pbar.sum(axis=0)
        # Down through the forward pass with accumulated activation adjoints.
        if abar_inject is not None:
            for l in range(1, self.L + 1):
                if abar_inject[l] is not None:
                    _acc(abar_acc, l, abar_inject[l])
        Abar = abar_acc[self.L]
        for l in range(self.L, 0, -1):
            if Abar is None:
                Zbar = None
            else:
                Zbar = Abar * T[l]
                gbuf.weight(l - 1)[:] += A[l - 1].T @ Zbar
                gbuf.bias(l - 1)[:] += Zbar.sum(axis=0)
            Abar = None if Zbar is None else Zbar @ self.Wh[l - 1].T
            if l - 1 >= 1 and abar_acc[l - 1] is not None:
                Abar = abar_acc[l - 1] if Abar is None else Abar + abar_acc[l - 1]
        if not need_ubar:
            return None
        if Abar is None:
            return np.zeros_like(A[0])
        return Abar

    def hvp(self, cache: FwdCache, gcache: GradCache,
            tangent: np.ndarray) -> np.ndarray:
        """Hessian-vector product d/d input of sum(tangent * G), by
        forward-over-reverse jets.  Cheaper than :meth:`vjp_input_grad`
        when parameter gradients are not needed."""
        if self.L == 0:
            return np.zeros_like(np.asarray(tangent))
        A, T, P = cache.A, cache.T, gcache.P
        Adot: list = [None] * (self.L + 1)
        zd = tangent @ self.Wh[0]
        Adot[1] = T[1] * zd
        for l in range(2, self.L + 1):
            Adot[l] = T[l] * (Adot[l - 1] @ self.Wh[l - 1])
        pd = None
        for l in range(self.L, 0, -1):
            qd = P[l] * (-2.0 * A[l] * Adot[l])
            if pd is not None:
                qd = qd + pd * T[l]
            pd = qd @ self.Wh[l - 1].T
        return pd

    # -- Hessian trace and its vjp ---------------------------------------------

    def hess_trace(self, cache: FwdCache, gcache: GradCache,
                   dims: list[int]) -> tuple[np.ndarray, JetCache]:
        """Sum of d^2 out / d u_k^2 over ``dims`` (forward-over-reverse jets)."""
        A, T, P = cache.A, cache.T, gcache.P
        B = A[0].shape[0]
        tr = np.zeros(B)
        Adot_all, Zdot_all, Qdot_all, Pdot_all = [], [], [], []
        if self.L == 0:   # affine map: zero curvature
            return tr, JetCache(list(dims), [], [], [], [])
        for k in dims:
            Adot: list = [None] * (self.L + 1)
            Zdot: list = [None] * (self.L + 1)
            Zdot[1] = np.broadcast_to(self.Wh[0][k], (B, self.Wh[0].shape[1]))
            Adot[1] = T[1] * Zdot[1]
            for l in range(2, self.L + 1):
                Zdot[l] = Adot[l - 1] @ self.Wh[l - 1]
                Adot[l] = T[l] * Zdot[l]
            Qdot: list = [None] * (self.L + 1)
            Pdot: list = [None] * (self.L + 1)
            Pdot[self.L] = None  # jet of the constant Wo broadcast is zero
            pd = None
            for l in range(self.L, 0, -1):
                qd = P[l] * (-2.0 * A[l] * Adot[l])
                if pd is not None:
                    qd = qd + pd * T[l]
                Qdot[l] = qd
                pd = qd @ self.Wh[l - 1].T
                Pdot[l - 1] = pd
            tr += Pdot[0][:, k]
            Adot_all.append(Adot)
            Zdot_all.append(Zdot)
            Qdot_all.append(Qdot)
            Pdot_all.append(Pdot)
        return tr, JetCache(list(dims), Adot_all, Zdot_all, Qdot_all, Pdot_all)

    def vjp_hess_trace(self, cbar: np.ndarray, cache: FwdCache, gcache: GradCache,
                       jets: JetCache, gbuf: GradBuffer,
                       need_ubar: bool = False):
        """Accumulate d(sum(cbar * trace))/d theta; optionally return
        d(sum(cbar * trace))/d input (third-order spatial terms)."""
        A, T, P = cache.A, cache.T, gcache.P
        B = A[0].shape[0]
        m = A[0].shape[1]
        if self.L == 0:
            return np.zeros((B, m)) if need_ubar else None
        pbar_acc: list = [None] * (self.L + 1)
        abar_acc: list = [None] * (self.L + 1)

        def _acc(lst, l, term):
            lst[l] = term if lst[l] is None else lst[l] + term

        for j, k in enumerate(jets.dims):
            Adot, Zdot = jets.Adot[j], jets.Zdot[j]
            Qdot, Pdot = jets.Qdot[j], jets.Pdot[j]
            adot_bar: list = [None] * (self.L + 1)
            # seed: d tr / d Pdot[0][:, k] = cbar
            pdot_bar = np.zeros((B, m))
            pdot_bar[:, k] = cbar
            # reverse of the jet sweep (runs upward, mirroring _sweep_vjp)
            for l in range(1, self.L + 1):
                qdot_bar = pdot_bar @ self.Wh[l - 1]
                gbuf.weight(l - 1)[:] += pdot_bar.T @ Qdot[l]
                _acc(pbar_acc, l, qdot_bar * (-2.0 * A[l] * Adot[l]))
                term = P[l] * (-2.0 * Adot[l])
                if Pdot[l] is not None:
                    term = term + Pdot[l] * (-2.0 * A[l])
                _acc(abar_acc, l, qdot_bar * term)
                _acc(adot_bar, l, qdot_bar * (P[l] * (-2.0 * A[l])))
                if Pdot[l] is None:
                    break  # Pdot above this level is constant zero
                pdot_bar = qdot_bar * T[l]
            # reverse of the forward jet: Adot[l] = T[l] * Zdot[l]
            for l in range(self.L, 0, -1):
                if adot_bar[l] is None:
                    continue
                zdot_bar = adot_bar[l] * T[l]
                _acc(abar_acc, l, adot_bar[l] * Zdot[l] * (-2.0 * A[l]))
                if l >= 2:
                    _acc(adot_bar, l - 1, zdot_bar @ self.Wh[l - 1].T)
                    gbuf.weight(l - 1)[:] += Adot[l - 1].T @ zdot_bar
                else:
                    # Zdot[1] is row k of Wh[0] broadcast over the batch
                    gbuf.weight(0)[k, :] += zdot_bar.sum(axis=0)
        # adjoints on P[l] and A[l] flow through the base sweeps once;
        # the sweep is linear in the injected seeds, so tangents share it
        return self._sweep_vjp(cache, gcache, gbuf, pbar0=None,
                               pbar_inject=pbar_acc, abar_inject=abar_acc,
                               need_ubar=need_ubar)
