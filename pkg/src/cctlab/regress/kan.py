"""Kolmogorov-Arnold network with B-spline edge activations.

Every edge (i -> o) carries phi(x) = w_b * silu(x) + sum_k c_k B_k(x), where
B_k are degree-``k`` B-splines on a uniform grid of ``G`` intervals covering
the observed range of that edge's input (extended by ``k`` knots on each
side). Each node adds a bias. Training is full-batch L-BFGS on the mean
squared error plus a small ridge term, with the spline grids refreshed from
the current activations between stages.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import minimize

from .base import NotFittedError, Regressor, TrainingError, register


def uniform_knots(lo: np.ndarray, hi: np.ndarray, grid_size: int, degree: int) -> np.ndarray:
    """Knot rows of shape (m, grid_size + 2*degree + 1) spanning [lo, hi]."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    h = (hi - lo) / grid_size
    steps = np.arange(-degree, grid_size + degree + 1)
    return lo[:, None] + h[:, None] * steps[None, :]


def bspline_basis(x: np.ndarray, knots: np.ndarray, degree: int, deriv: bool = False):
    """Cox-de Boor recursion, vectorized over samples and inputs.

    x: (n, m); knots: (m, K). Returns B of shape (n, m, K - degree - 1) and,
    with ``deriv``, dB/dx of the same shape (uniform knots assumed).
    """
    t = knots[None, :, :]
    xe = x[:, :, None]
    B = ((xe >= t[..., :-1]) & (xe < t[..., 1:])).astype(float)
    lower = None
    for d in range(1, degree + 1):
        if d == degree:
            lower = B
        left = (xe - t[..., :-(d + 1)]) / (t[..., d:-1] - t[..., :-(d + 1)])
        right = (t[..., d + 1:] - xe) / (t[..., d + 1:] - t[..., 1:-d])
        B = left * B[..., :-1] + right * B[..., 1:]
    if not deriv:
        return B
    if degree == 0:
        return B, np.zeros_like(B)
    h = (knots[:, 1] - knots[:, 0])[None, :, None]
    return B, (lower[..., :-1] - lower[..., 1:]) / h


def silu(x):
    return x / (1.0 + np.exp(-x))


def silu_prime(x):
    s = 1.0 / (1.0 + np.exp(-x))
    return s * (1.0 + x * (1.0 - s))


class KANObjective:
    """Parameter layout and loss/gradient for fixed knot grids.

    Loss = 0.5 * mean(err^2) + 0.5 * ridge * |theta|^2.
    """

    def __init__(self, widths, grid_size: int, degree: int, ridge: float):
        self.widths = tuple(widths)
        self.G = grid_size
        self.k = degree
        self.nb = grid_size + degree
        self.ridge = ridge
        self.shapes = []
        for a, b in zip(self.widths[:-1], self.widths[1:]):
            self.shapes.append({"coef": (b, a, self.nb), "base": (b, a), "bias": (b,)})
        self.size = sum(int(np.prod(s)) for layer in self.shapes for s in layer.values())
        self.knots: list[np.ndarray] = []

    def unpack(self, theta):
        out, pos = [], 0
        for layer in self.shapes:
            views = {}
            for name, shape in layer.items():
                n = int(np.prod(shape))
                views[name] = theta[pos:pos + n].reshape(shape)
                pos += n
            out.append(views)
        return out

    def forward(self, theta, X, keep: bool = False):
        a = X
        cache = []
        for P, knots in zip(self.unpack(theta), self.knots):
            B, dB = bspline_basis(a, knots, self.k, deriv=True) if keep else \
                (bspline_basis(a, knots, self.k), None)
            z = silu(a) @ P["base"].T + np.einsum("nik,oik->no", B, P["coef"]) + P["bias"]
            if keep:
                cache.append((a, B, dB))
            a = z
        return (a[:, 0], cache) if keep else a[:, 0]

    def __call__(self, theta, X, y):
        out, cache = self.forward(theta, X, keep=True)
        err = out - y
        n = len(y)
        loss = 0.5 * float(err @ err) / n + 0.5 * self.ridge * float(theta @ theta)
        grad = self.ridge * theta.copy()
        grads = self.unpack(grad)
        params = self.unpack(theta)
        g = err[:, None] / n
        for l in range(len(cache) - 1, -1, -1):
            a, B, dB = cache[l]
            P, gP = params[l], grads[l]
            gP["coef"] += np.einsum("no,nik->oik", g, B)
            gP["base"] += g.T @ silu(a)
            gP["bias"] += g.sum(axis=0)
            if l:
                g = (g @ P["base"]) * silu_prime(a) + np.einsum("no,oik,nik->ni", g, P["coef"], dB)
        return loss, grad

    def edge_splines(self, theta, l: int, a: np.ndarray) -> np.ndarray:
        """Spline part of every edge of layer l at inputs a: shape (n, out, in)."""
        B = bspline_basis(a, self.knots[l], self.k)
        return np.einsum("nik,oik->noi", B, self.unpack(theta)[l]["coef"])

    def refresh_grids(self, theta, X, margin: float = 0.05) -> None:
        """Re-fit knot grids to the current activation ranges and project the
        existing spline functions onto them by least squares."""
        a = X
        params = self.unpack(theta)
        for l in range(len(self.shapes)):
            lo, hi = a.min(axis=0), a.max(axis=0)
            pad = np.maximum(margin * (hi - lo), 1e-3)
            new = uniform_knots(lo - pad, hi + pad, self.G, self.k)
            if self.knots[l] is not None:
                old_vals = self.edge_splines(theta, l, a)
                Bn = bspline_basis(a, new, self.k)
                coef = params[l]["coef"]
                for i in range(a.shape[1]):
                    A = Bn[:, i, :]
                    reg = 1e-8 * np.eye(self.nb)
                    coef[:, i, :] = np.linalg.solve(A.T @ A + reg, A.T @ old_vals[:, :, i]).T
            self.knots[l] = new
            a = silu(a) @ params[l]["base"].T + np.einsum(
                "nik,oik->no", bspline_basis(a, new, self.k), params[l]["coef"]) + params[l]["bias"]


@register
class KANRegressor(Regressor):
    kind = "kan"
    defaults = {"hidden": (3, 2), "grid_size": 4, "degree": 3, "ridge": 1e-5,
                "stages": 4, "iters_per_stage": 250, "seed": 0}
    standardize_y = True

    def _make_objective(self, n_in: int) -> KANObjective:
        p = self.params
        return KANObjective((n_in, *p["hidden"], 1), p["grid_size"], p["degree"], p["ridge"])

    def _fit(self, Xs, ys):
        p = self.params
        rng = np.random.default_rng(p["seed"])
        obj = self._make_objective(Xs.shape[1])
        theta = np.zeros(obj.size)
        for P, (a, b) in zip(obj.unpack(theta), zip(obj.widths[:-1], obj.widths[1:])):
            P["base"][...] = rng.uniform(-1, 1, (b, a)) / np.sqrt(a)
            P["coef"][...] = rng.normal(0.0, 0.1 / np.sqrt(a), P["coef"].shape)
        obj.knots = [None] * len(obj.shapes)
        obj.refresh_grids(theta, Xs)

        for stage in range(p["stages"]):
            res = minimize(obj, theta, args=(Xs, ys), jac=True, method="L-BFGS-B",
                           options={"maxiter": p["iters_per_stage"]})
            if not np.isfinite(res.fun):
                raise TrainingError("kan loss became non-finite")
            theta = res.x
            if stage < p["stages"] - 1:
                obj.refresh_grids(theta, Xs)
        self.objective = obj
        self.theta = theta

    def _predict(self, Xs):
        return self.objective.forward(self.theta, Xs)

    @property
    def n_params(self) -> int:
        if not self.fitted:
            raise NotFittedError("parameter count needs the input width")
        return int(self.theta.size)

    def _state(self):
        out = {"theta": self.theta}
        for l, kn in enumerate(self.objective.knots):
            out[f"knots{l}"] = kn
        return out

    def _load_state(self, state):
        self.objective = self._make_objective(self.n_features)
        self.objective.knots = [state[f"knots{l}"] for l in range(len(self.objective.shapes))]
        self.theta = state["theta"]
