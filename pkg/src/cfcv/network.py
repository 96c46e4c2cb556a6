"""Plain-numpy network underlying the counterfactual regressor.

A shared representation trunk feeds two outcome heads, one per treatment arm.
Hidden layers use ELU activations with inverted dropout; heads end in a
linear unit.  Both the forward pass and the exact backward pass are written
out explicitly, which keeps the whole loss differentiable by hand and lets
tests compare analytic gradients against finite differences.

The training loss combines a per-unit weighted factual risk with a transport
distance between the two arms' representations.  The transport plan is
treated as constant during backpropagation (envelope gradient); callers can
also pass a fixed plan to make the loss a deterministic function of the
parameters.
"""

from __future__ import annotations

import numpy as np

from .sinkhorn import sinkhorn_plan, squared_distances

__all__ = ["CfrNetwork", "Adam", "elu", "elu_grad"]


def elu(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0.0, z, np.expm1(z))


def elu_grad(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0.0, 1.0, np.exp(np.minimum(z, 0.0)))


def _init_layer(rng, n_in: int, n_out: int):
    W = rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_in, n_out))
    b = np.zeros(n_out)
    return [W, b]


def _hidden_forward(layers, H, dropout: float, rng):
    """Run ELU(+dropout) layers, returning output and per-layer caches."""
    caches = []
    keep = 1.0 - dropout
    for W, b in layers:
        Z = H @ W + b
        A = elu(Z)
        mask = None
        if dropout > 0.0:
            mask = (rng.random(A.shape) < keep) / keep
            A = A * mask
        caches.append((H, Z, mask))
        H = A
    return H, caches


def _hidden_backward(layers, caches, dH, grads_out):
    """Backprop through a hidden stack; fills grads_out, returns input grad."""
    for (W, _b), (H_in, Z, mask) in zip(reversed(layers), reversed(caches)):
        if mask is not None:
            dH = dH * mask
        dZ = dH * elu_grad(Z)
        grads_out.append([H_in.T @ dZ, dZ.sum(axis=0)])
        dH = dZ @ W.T
    grads_out.reverse()
    return dH


class CfrNetwork:
    """Representation trunk plus two per-arm regression heads.

    Parameters
    ----------
    n_features : int
    rep_layers, rep_dim : trunk depth and width.
    head_layers, head_dim : hidden depth and width of each head (a final
        linear output layer is added on top).
    seed : int
        Seeds the weight initialization.
    """

    def __init__(
        self,
        n_features: int,
        rep_layers: int = 2,
        rep_dim: int = 20,
        head_layers: int = 2,
        head_dim: int = 20,
        seed: int = 0,
    ):
        rng = np.random.default_rng(seed)
        self.n_features = n_features
        self.rep = []
        n_in = n_features
        for _ in range(rep_layers):
            self.rep.append(_init_layer(rng, n_in, rep_dim))
            n_in = rep_dim
        self.heads = []
        for _ in range(2):
            hidden = []
            h_in = n_in
            for _ in range(head_layers):
                hidden.append(_init_layer(rng, h_in, head_dim))
                h_in = head_dim
            out = _init_layer(rng, h_in, 1)
            self.heads.append((hidden, out))

    # -- parameter plumbing ------------------------------------------------

    def param_list(self):
        """All parameter arrays in a fixed canonical order."""
        params = []
        for W, b in self.rep:
            params.extend((W, b))
        for hidden, out in self.heads:
            for W, b in hidden:
                params.extend((W, b))
            params.extend(out)
        return params

    def flat_params(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.param_list()])

    def set_flat_params(self, vec: np.ndarray) -> None:
        offset = 0
        for p in self.param_list():
            p[...] = vec[offset:offset + p.size].reshape(p.shape)
            offset += p.size
        if offset != vec.size:
            raise ValueError(f"parameter vector has {vec.size} entries, expected {offset}")

    def snapshot(self):
        return [p.copy() for p in self.param_list()]

    def restore(self, snap) -> None:
        for p, s in zip(self.param_list(), snap):
            p[...] = s

    # -- forward -----------------------------------------------------------

    def representation(self, X: np.ndarray) -> np.ndarray:
        H, _ = _hidden_forward(self.rep, X, 0.0, None)
        return H

    def predict_heads(self, X: np.ndarray):
        """Deterministic (f0, f1) predictions for every row."""
        R = self.representation(X)
        outs = []
        for hidden, (W_out, b_out) in self.heads:
            H, _ = _hidden_forward(hidden, R, 0.0, None)
            outs.append((H @ W_out + b_out).ravel())
        return outs[0], outs[1]

    def predict_factual(self, X: np.ndarray, t: np.ndarray) -> np.ndarray:
        f0, f1 = self.predict_heads(X)
        return np.where(t == 1, f1, f0)

    # -- loss and gradients ------------------------------------------------

    def loss_and_grads(
        self,
        X: np.ndarray,
        t: np.ndarray,
        y: np.ndarray,
        w_prime: np.ndarray,
        alpha: float,
        sinkhorn_reg: float = 0.1,
        sinkhorn_iters: int = 100,
        plan: np.ndarray | None = None,
        dropout: float = 0.0,
        rng: np.random.Generator | None = None,
    ):
        """Weighted factual risk + alpha * transport distance, with gradients.

        The risk is ``mean_i w_prime_i (f_{t_i}(x_i) - y_i)^2`` over the given
        rows.  The transport term compares treated and control representation
        clouds; it is skipped (contributes zero) when either arm is absent or
        ``alpha == 0``.  Passing ``plan`` freezes the transport plan, making
        the whole loss an exact deterministic function of the parameters.

        Returns ``(loss, risk, ipm, grads)`` where grads aligns with
        :meth:`param_list`.
        """
        n = X.shape[0]
        if dropout > 0.0 and rng is None:
            raise ValueError("dropout > 0 requires an rng for the masks")
        idx1 = np.flatnonzero(t == 1)
        idx0 = np.flatnonzero(t == 0)

        R, rep_caches = _hidden_forward(self.rep, X, dropout, rng)
        head_states = []
        yhat = np.empty(n)
        for arm, idx in ((0, idx0), (1, idx1)):
            hidden, (W_out, b_out) = self.heads[arm]
            H, caches = _hidden_forward(hidden, R[idx], dropout, rng)
            yhat[idx] = (H @ W_out + b_out).ravel()
            head_states.append((H, caches))

        resid = yhat - y
        risk = float(np.sum(w_prime * resid * resid) / n)

        use_ipm = alpha > 0.0 and idx1.size > 0 and idx0.size > 0
        ipm = 0.0
        P = None
        if use_ipm:
            R1, R0 = R[idx1], R[idx0]
            if plan is None:
                P = sinkhorn_plan(
                    R1, R0, reg=sinkhorn_reg, n_iters=sinkhorn_iters
                ).plan
            else:
                P = plan
            ipm = float(np.sum(P * squared_distances(R1, R0)))

        loss = risk + alpha * ipm

        # Backward pass.
        dyhat = (2.0 / n) * w_prime * resid
        dR = np.zeros_like(R)
        head_grads = []
        for arm, idx in ((0, idx0), (1, idx1)):
            hidden, (W_out, b_out) = self.heads[arm]
            H, caches = head_states[arm]
            dZ_out = dyhat[idx][:, None]
            g_out = [H.T @ dZ_out, dZ_out.sum(axis=0)]
            dH = dZ_out @ W_out.T
            g_hidden = []
            dR_arm = _hidden_backward(hidden, caches, dH, g_hidden)
            dR[idx] += dR_arm
            head_grads.append((g_hidden, g_out))

        if use_ipm:
            R1, R0 = R[idx1], R[idx0]
            row = P.sum(axis=1)
            col = P.sum(axis=0)
            dR[idx1] += alpha * 2.0 * (row[:, None] * R1 - P @ R0)
            dR[idx0] += alpha * 2.0 * (col[:, None] * R0 - P.T @ R1)

        g_rep = []
        _hidden_backward(self.rep, rep_caches, dR, g_rep)

        grads = []
        for dW, db in g_rep:
            grads.extend((dW, db))
        for g_hidden, g_out in head_grads:
            for dW, db in g_hidden:
                grads.extend((dW, db))
            grads.extend(g_out)
        return loss, risk, ipm, grads


class Adam:
    """Adam updates over a list of parameter arrays (in-place)."""

    def __init__(self, params, learning_rate: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        correction1 = 1.0 - b1 ** self.t
        correction2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            m_hat = m / correction1
            v_hat = v / correction2
            p -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)
