"""Fully connected ReLU network trained with Adam."""

from __future__ import annotations

import numpy as np

from .base import NotFittedError, Regressor, TrainingError, register


def layer_shapes(n_in: int, hidden) -> list[tuple[int, int]]:
    sizes = [n_in, *hidden, 1]
    return list(zip(sizes[:-1], sizes[1:]))


def count_params(n_in: int, hidden) -> int:
    return sum(a * b + b for a, b in layer_shapes(n_in, hidden))


class MLPObjective:
    """Loss 0.5*mean(err^2) + 0.5*alpha*sum(W^2)/n over one batch of n rows,
    with gradients by backpropagation. Biases are not penalized."""

    def __init__(self, n_in: int, hidden, alpha: float):
        self.shapes = layer_shapes(n_in, hidden)
        self.alpha = alpha
        self.size = sum(a * b + b for a, b in self.shapes)

    def unpack(self, theta: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        out, pos = [], 0
        for a, b in self.shapes:
            W = theta[pos:pos + a * b].reshape(a, b)
            pos += a * b
            out.append((W, theta[pos:pos + b]))
            pos += b
        return out

    def init(self, rng: np.random.Generator) -> np.ndarray:
        theta = np.zeros(self.size)
        for (W, b), (a, _) in zip(self.unpack(theta), self.shapes):
            # He-uniform for ReLU; unpack returns views, so this writes theta
            bound = np.sqrt(6.0 / a)
            W[...] = rng.uniform(-bound, bound, W.shape)
        return theta

    def forward(self, theta, X) -> np.ndarray:
        a = X
        layers = self.unpack(theta)
        for W, b in layers[:-1]:
            a = np.maximum(a @ W + b, 0.0)
        W, b = layers[-1]
        return (a @ W + b)[:, 0]

    def __call__(self, theta, X, y) -> tuple[float, np.ndarray]:
        layers = self.unpack(theta)
        acts = [X]
        for W, b in layers[:-1]:
            acts.append(np.maximum(acts[-1] @ W + b, 0.0))
        W, b = layers[-1]
        err = (acts[-1] @ W + b)[:, 0] - y
        n = len(y)
        penalty = sum(float((W * W).sum()) for W, _ in layers)
        loss = 0.5 * float(err @ err) / n + 0.5 * self.alpha * penalty / n

        grad = np.empty_like(theta)
        grads = self.unpack(grad)
        delta = err[:, None] / n
        for l in range(len(layers) - 1, -1, -1):
            W, _ = layers[l]
            gW, gb = grads[l]
            gW[...] = acts[l].T @ delta + self.alpha * W / n
            gb[...] = delta.sum(axis=0)
            if l:
                delta = (delta @ W.T) * (acts[l] > 0)
        return loss, grad


class Adam:
    def __init__(self, size: int, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> None:
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        mhat = self.m / (1 - self.b1 ** self.t)
        vhat = self.v / (1 - self.b2 ** self.t)
        theta -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


@register
class MLPRegressor(Regressor):
    """Multilayer perceptron on standardized inputs and targets.

    Training holds out ``validation_fraction`` of the rows, runs mini-batch
    Adam, and stops once the validation error has not improved by more than
    ``tol`` for ``patience`` epochs; the best validation weights are kept.
    """

    kind = "mlp"
    defaults = {"hidden": (15, 15, 15, 15, 15), "alpha": 0.01, "learning_rate": 1e-3,
                "batch_size": 32, "max_epochs": 1000, "patience": 40,
                "validation_fraction": 0.1, "tol": 1e-6, "seed": 0}
    standardize_y = True

    def _fit(self, Xs, ys):
        p = self.params
        rng = np.random.default_rng(p["seed"])
        self.objective = MLPObjective(Xs.shape[1], tuple(p["hidden"]), p["alpha"])
        theta = self.objective.init(rng)

        n = len(ys)
        n_val = int(round(p["validation_fraction"] * n))
        if n_val < 2 or n - n_val < 2:
            n_val = 0
        perm = rng.permutation(n)
        val, train = perm[:n_val], perm[n_val:]
        Xv, yv = (Xs[val], ys[val]) if n_val else (Xs[train], ys[train])

        opt = Adam(theta.size, p["learning_rate"])
        best, best_theta, stale = np.inf, theta.copy(), 0
        self.history = []
        for _ in range(p["max_epochs"]):
            order = rng.permutation(train)
            for s in range(0, len(order), p["batch_size"]):
                rows = order[s:s + p["batch_size"]]
                loss, grad = self.objective(theta, Xs[rows], ys[rows])
                if not np.isfinite(loss):
                    raise TrainingError("mlp loss became non-finite")
                opt.step(theta, grad)
            score = float(np.mean((self.objective.forward(theta, Xv) - yv) ** 2))
            self.history.append(score)
            if score < best - p["tol"]:
                best, best_theta, stale = score, theta.copy(), 0
            else:
                stale += 1
                if stale >= p["patience"]:
                    break
        self.theta = best_theta

    def _predict(self, Xs):
        return self.objective.forward(self.theta, Xs)

    @property
    def n_params(self) -> int:
        if self.fitted:
            return int(self.theta.size)
        raise NotFittedError("parameter count needs the input width; use count_params")

    def _state(self):
        return {"theta": self.theta}

    def _load_state(self, state):
        self.theta = state["theta"]
        self.objective = MLPObjective(self.n_features, tuple(self.params["hidden"]),
                                      self.params["alpha"])
