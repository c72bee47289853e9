"""Input-convex spread/quench surrogates.

Two estimators share one network layout:

* :class:`SpreadPredictor` maps a burning map to next-step burn probabilities.
* :class:`QuenchPredictor` additionally takes a per-cell quench fraction ``q``
  and predicts the next-step burn cost.  The cost head is convex in ``q`` for
  any fixed map, which is what lets the planner bound it with supporting
  hyperplanes.

Layout (``y`` = flattened map plus its mean, ``q`` = quench plus its mean)::

    z1   = relu(U0 y + V0 q + b0)
    z2   = relu(U1 y + W1 z1 + V1 q + b1)      W1 >= 0
    logit = Uo y + Wo z2 + Vo q + bo            (per cell, unconstrained)
    cost  = scale * relu(uc.y + wc.z2 + vc.q + bc)   wc >= 0

``W1`` and ``wc`` are projected onto the nonnegative orthant after every
optimizer step.  The decision weights feeding the cost (``V0``, ``V1`` and
``vc``) are projected onto the nonpositive orthant, so the cost is also
nonincreasing in ``q``: quenching a cell never raises the predicted cost.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_grid, check_is_fitted, check_same_shape
from .firegrid import FireMap, TrainingPair

MAGIC = b"ICNN1"
KIND_CODES = {"S": 0.0, "SQ": 1.0}

_PARAM_ORDER = ("U0", "V0", "b0", "U1", "W1", "V1", "b1", "Uo", "Wo", "Vo", "bo", "uc", "wc", "vc", "bc")
NONNEG = ("W1", "wc")
NONPOS = ("V0", "V1", "vc")


def _augment(flat: np.ndarray) -> np.ndarray:
    """Append the per-sample mean as a pooled feature."""
    return np.concatenate([flat, flat.mean(axis=1, keepdims=True)], axis=1)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class IcnnModel:
    """Weights and forward/backward math of the partially input-convex network."""

    kind: str
    shape: tuple
    params: dict
    cost_scale: float = 1.0
    threshold: float = 0.5

    @property
    def n_cells(self) -> int:
        return int(self.shape[0] * self.shape[1])

    @property
    def hidden(self) -> int:
        return int(self.params["b0"].shape[0])

    @property
    def has_decision(self) -> bool:
        return self.kind == "SQ"

    @classmethod
    def init(cls, kind: str, shape, hidden: int, rng: np.random.Generator) -> "IcnnModel":
        n = int(shape[0] * shape[1])
        d = n + 1
        p = {
            "U0": rng.normal(0.0, 1.0 / np.sqrt(d), (hidden, d)),
            "b0": np.zeros(hidden),
            "U1": rng.normal(0.0, 0.5 / np.sqrt(d), (hidden, d)),
            "W1": np.abs(rng.normal(0.0, 1.0 / np.sqrt(hidden), (hidden, hidden))),
            "b1": np.zeros(hidden),
            # start from persistence: a burning cell keeps burning
            "Uo": np.hstack([6.0 * np.eye(n), np.zeros((n, 1))]),
            "Wo": rng.normal(0.0, 0.1 / np.sqrt(hidden), (n, hidden)),
            "bo": np.full(n, -3.0),
        }
        if kind == "SQ":
            p["V0"] = -np.abs(rng.normal(0.0, 1.0 / np.sqrt(d), (hidden, d)))
            p["V1"] = -np.abs(rng.normal(0.0, 0.5 / np.sqrt(d), (hidden, d)))
            p["Vo"] = np.zeros((n, d))
            p["uc"] = np.zeros(d)
            p["wc"] = np.abs(rng.normal(0.0, 0.1 / np.sqrt(hidden), hidden))
            p["vc"] = np.zeros(d)
            p["bc"] = np.zeros(1)
        elif kind != "S":
            raise ValueError(f"unknown model kind {kind!r}")
        return cls(kind=kind, shape=tuple(int(s) for s in shape), params=p)

    # -- forward / backward -------------------------------------------------

    def _inputs(self, context, quench):
        Y = _augment(np.asarray(context, dtype=float).reshape(len(context), -1))
        Q = None
        if self.has_decision:
            if quench is None:
                quench = np.zeros_like(context, dtype=float)
            Q = _augment(np.asarray(quench, dtype=float).reshape(len(quench), -1))
        return Y, Q

    def forward(self, context, quench=None) -> dict:
        p = self.params
        Y, Q = self._inputs(context, quench)
        a1 = Y @ p["U0"].T + p["b0"]
        if Q is not None:
            a1 += Q @ p["V0"].T
        z1 = np.maximum(a1, 0.0)
        a2 = Y @ p["U1"].T + z1 @ p["W1"].T + p["b1"]
        if Q is not None:
            a2 += Q @ p["V1"].T
        z2 = np.maximum(a2, 0.0)
        logits = Y @ p["Uo"].T + z2 @ p["Wo"].T + p["bo"]
        cache = {"Y": Y, "Q": Q, "a1": a1, "z1": z1, "a2": a2, "z2": z2, "logits": logits}
        if Q is not None:
            logits += Q @ p["Vo"].T
            cache["pre"] = Y @ p["uc"] + z2 @ p["wc"] + Q @ p["vc"] + p["bc"][0]
        return cache

    def backward(self, cache: dict, dlogits, dpre=None) -> dict:
        p = self.params
        Y, Q, z1, z2 = cache["Y"], cache["Q"], cache["z1"], cache["z2"]
        g = {
            "Uo": dlogits.T @ Y,
            "Wo": dlogits.T @ z2,
            "bo": dlogits.sum(axis=0),
        }
        dz2 = dlogits @ p["Wo"]
        if Q is not None:
            g["Vo"] = dlogits.T @ Q
            if dpre is None:
                dpre = np.zeros(len(Y))
            g["uc"] = Y.T @ dpre
            g["wc"] = z2.T @ dpre
            g["vc"] = Q.T @ dpre
            g["bc"] = np.array([dpre.sum()])
            dz2 = dz2 + np.outer(dpre, p["wc"])
        da2 = dz2 * (cache["a2"] > 0)
        g["U1"] = da2.T @ Y
        g["W1"] = da2.T @ z1
        g["b1"] = da2.sum(axis=0)
        dz1 = da2 @ p["W1"]
        da1 = dz1 * (cache["a1"] > 0)
        g["U0"] = da1.T @ Y
        g["b0"] = da1.sum(axis=0)
        if Q is not None:
            g["V1"] = da2.T @ Q
            g["V0"] = da1.T @ Q
        return g

    def project(self) -> None:
        for name in NONNEG:
            if name in self.params:
                np.maximum(self.params[name], 0.0, out=self.params[name])
        for name in NONPOS:
            if name in self.params:
                np.minimum(self.params[name], 0.0, out=self.params[name])

    def min_constrained_weight(self) -> float:
        return min(float(self.params[n].min()) for n in NONNEG if n in self.params)

    # -- inference -----------------------------------------------------------

    def burn_probability(self, context, quench=None) -> np.ndarray:
        context = np.asarray(context, dtype=float)
        return _sigmoid(self.forward(context, quench)["logits"]).reshape(context.shape)

    def cost(self, context, quench) -> np.ndarray:
        if not self.has_decision:
            raise ValueError("cost head requires an SQ model")
        pre = self.forward(context, quench)["pre"]
        return self.cost_scale * np.maximum(pre, 0.0)

    def cost_and_grad(self, context, quench) -> tuple[float, np.ndarray]:
        """Cost for one map and a subgradient with respect to the quench grid."""
        if not self.has_decision:
            raise ValueError("cost head requires an SQ model")
        context = np.asarray(context, dtype=float)[None]
        quench = np.asarray(quench, dtype=float)[None]
        p = self.params
        c = self.forward(context, quench)
        pre = float(c["pre"][0])
        if pre <= 0.0:
            return 0.0, np.zeros(self.shape)
        dz2 = p["wc"].copy()
        da2 = dz2 * (c["a2"][0] > 0)
        dq = p["vc"] + da2 @ p["V1"]
        da1 = (da2 @ p["W1"]) * (c["a1"][0] > 0)
        dq = dq + da1 @ p["V0"]
        n = self.n_cells
        grad = dq[:n] + dq[n] / n
        return self.cost_scale * pre, (self.cost_scale * grad).reshape(self.shape)

    # -- checkpoint ------------------------------------------------------------

    def to_bytes(self) -> bytes:
        meta = np.array(
            [[KIND_CODES[self.kind], self.shape[0], self.shape[1], self.hidden, self.cost_scale, self.threshold]]
        )
        layers = [meta]
        for name in _PARAM_ORDER:
            if name in self.params:
                a = self.params[name]
                layers.append(a.reshape(1, -1) if a.ndim == 1 else a)
        out = [MAGIC, struct.pack("<I", len(layers))]
        for a in layers:
            out.append(struct.pack("<II", *a.shape))
            out.append(np.ascontiguousarray(a, dtype="<f8").tobytes())
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "IcnnModel":
        if data[:5] != MAGIC:
            raise ValueError("not an ICNN1 checkpoint")
        (count,) = struct.unpack_from("<I", data, 5)
        off = 9
        layers = []
        for _ in range(count):
            rows, cols = struct.unpack_from("<II", data, off)
            off += 8
            a = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=off).reshape(rows, cols)
            off += 8 * rows * cols
            layers.append(a.astype(np.float64))
        if off != len(data):
            raise ValueError("trailing bytes in checkpoint")
        meta = layers[0][0]
        kind = "SQ" if meta[0] == 1.0 else "S"
        names = [n for n in _PARAM_ORDER if kind == "SQ" or n not in ("V0", "V1", "Vo", "uc", "wc", "vc", "bc")]
        if len(names) != count - 1:
            raise ValueError("checkpoint layer count does not match model kind")
        params = {}
        for name, a in zip(names, layers[1:]):
            params[name] = a[0].copy() if name.startswith("b") or name in ("uc", "wc", "vc") else a.copy()
        return cls(kind=kind, shape=(int(meta[1]), int(meta[2])), params=params,
                   cost_scale=float(meta[4]), threshold=float(meta[5]))

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "IcnnModel":
        return cls.from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# estimators


class SpreadPredictor(BaseEstimator):
    """Next-step burn classifier (no decision input).

    ``X`` is an array of maps ``(n_samples, H, W)`` (any positive entry counts
    as burning) and ``y`` the matching 0/1 next-step maps.
    """

    _kind = "S"

    def __init__(self, hidden=64, epochs=10, batch_size=32, optimizer="adam", lr=2e-3, momentum=0.9,
                 lr_decay=0.5, decay_every=5, weight_decay=0.0, threshold=0.5, random_state=0):
        self.hidden = hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.optimizer = optimizer
        self.lr = lr
        self.momentum = momentum
        self.lr_decay = lr_decay
        self.decay_every = decay_every
        self.weight_decay = weight_decay
        self.threshold = threshold
        self.random_state = random_state

    def _check_X(self, X, n_channels=1):
        X = np.asarray(X, dtype=float)
        want = 3 if n_channels == 1 else 4
        if X.ndim == want - 1:
            X = X[None]
        if X.ndim != want or not np.all(np.isfinite(X)):
            raise ValueError(f"expected a finite {want}-d array, got shape {X.shape}")
        if getattr(self, "model_", None) is not None and X.shape[-2:] != self.model_.shape:
            raise ValueError(f"map shape {X.shape[-2:]} does not match model {self.model_.shape}")
        return X

    def _fit_arrays(self, context, quench, labels, cost):
        if len(context) == 0:
            raise ValueError("empty training set")
        rng = np.random.default_rng(self.random_state)
        shape = context.shape[1:]
        model = IcnnModel.init(self._kind, shape, self.hidden, rng)
        model.threshold = self.threshold
        if cost is not None:
            model.cost_scale = max(1.0, float(np.mean(cost)))
            target = cost / model.cost_scale
        n = context.shape[1] * context.shape[2]
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
        second = {k: np.zeros_like(v) for k, v in model.params.items()}
        step = 0
        history = []
        lr = self.lr
        for epoch in range(self.epochs):
            if epoch and self.decay_every and epoch % self.decay_every == 0:
                lr *= self.lr_decay
            order = rng.permutation(len(context))
            total = 0.0
            for start in range(0, len(order), self.batch_size):
                idx = order[start:start + self.batch_size]
                B = len(idx)
                cache = model.forward(context[idx], None if quench is None else quench[idx])
                logits = cache["logits"]
                yb = labels[idx].reshape(B, -1)
                prob = _sigmoid(logits)
                bce = np.logaddexp(0.0, logits) - yb * logits
                loss = bce.sum() / (B * n)
                dlogits = (prob - yb) / (B * n)
                dpre = None
                if cost is not None:
                    err = cache["pre"] - target[idx]
                    loss += self.cost_weight * float(err @ err) / B
                    dpre = 2.0 * self.cost_weight * err / B
                grads = model.backward(cache, dlogits, dpre)
                step += 1
                for k, gk in grads.items():
                    if self.weight_decay and gk.ndim == 2:
                        gk = gk + self.weight_decay * model.params[k]
                    v = velocity[k]
                    if self.optimizer == "sgd":
                        v *= self.momentum
                        v -= lr * gk
                        model.params[k] += v
                    else:
                        s2 = second[k]
                        v *= 0.9
                        v += 0.1 * gk
                        s2 *= 0.999
                        s2 += 0.001 * gk * gk
                        vhat = v / (1.0 - 0.9**step)
                        shat = s2 / (1.0 - 0.999**step)
                        model.params[k] -= lr * vhat / (np.sqrt(shat) + 1e-8)
                model.project()
                total += loss * B
            history.append(total / len(context))
        self.model_ = model
        self.loss_history_ = history
        self.n_features_in_ = n
        return self

    def fit(self, X, y):
        X = self._check_X(X)
        y = np.asarray(y, dtype=float)
        check_same_shape(X, y, "X and y")
        return self._fit_arrays((X > 0).astype(float), None, y, None)

    def predict_proba(self, X):
        check_is_fitted(self)
        X = self._check_X(X)
        return self.model_.burn_probability((X > 0).astype(float))

    def predict(self, X):
        return (self.predict_proba(X) >= self.threshold).astype(np.int8)


class QuenchPredictor(SpreadPredictor):
    """Next-step burn classifier and burn-cost regressor under quench.

    ``X`` has shape ``(n_samples, 2, H, W)``: channel 0 is the map, channel 1
    the per-cell quench fraction in ``[0, 1]``.
    """

    _kind = "SQ"

    def __init__(self, hidden=64, epochs=10, batch_size=32, optimizer="adam", lr=2e-3, momentum=0.9,
                 lr_decay=0.5, decay_every=5, weight_decay=0.0, threshold=0.5, cost_weight=0.1,
                 random_state=0):
        super().__init__(hidden=hidden, epochs=epochs, batch_size=batch_size,
                         optimizer=optimizer, lr=lr,
                         momentum=momentum, lr_decay=lr_decay, decay_every=decay_every,
                         weight_decay=weight_decay, threshold=threshold, random_state=random_state)
        self.cost_weight = cost_weight

    def fit(self, X, y, cost=None):
        X = self._check_X(X, n_channels=2)
        y = np.asarray(y, dtype=float)
        check_same_shape(X[:, 0], y, "X and y")
        if cost is None:
            raise ValueError("QuenchPredictor.fit needs next-step costs")
        cost = np.asarray(cost, dtype=float).reshape(-1)
        if len(cost) != len(X):
            raise ValueError("cost length does not match X")
        return self._fit_arrays((X[:, 0] > 0).astype(float), X[:, 1], y, cost)

    def predict_proba(self, X):
        check_is_fitted(self)
        X = self._check_X(X, n_channels=2)
        return self.model_.burn_probability((X[:, 0] > 0).astype(float), X[:, 1])

    def predict_cost(self, X):
        check_is_fitted(self)
        X = self._check_X(X, n_channels=2)
        return self.model_.cost((X[:, 0] > 0).astype(float), X[:, 1])


# ---------------------------------------------------------------------------
# functional API


def _as_model(model) -> IcnnModel:
    if isinstance(model, IcnnModel):
        return model
    check_is_fitted(model)
    return model.model_


def pairs_to_arrays(pairs: list[TrainingPair]):
    context = np.stack([p.context for p in pairs])
    labels = np.stack([p.after for p in pairs]).astype(float)
    return context, labels


def train_s(pairs: list[TrainingPair], hyper: dict | None = None, seed=0) -> IcnnModel:
    if not pairs:
        raise ValueError("empty training set")
    context, labels = pairs_to_arrays(pairs)
    est = SpreadPredictor(**(hyper or {}), random_state=seed)
    return est.fit(context, labels).model_


def train_sq(pairs: list[TrainingPair], hyper: dict | None = None, seed=0) -> IcnnModel:
    if not pairs:
        raise ValueError("empty training set")
    if any(p.quench is None or p.next_cost is None for p in pairs):
        raise ValueError("SQ training pairs need quench masks and next costs")
    context, labels = pairs_to_arrays(pairs)
    quench = np.stack([p.quench for p in pairs])
    cost = np.array([p.next_cost for p in pairs], dtype=float)
    est = QuenchPredictor(**(hyper or {}), random_state=seed)
    return est.fit(np.stack([context, quench], axis=1), labels, cost=cost).model_


def _map_context(model: IcnnModel, fire) -> np.ndarray:
    grid = fire.burning if isinstance(fire, FireMap) else np.asarray(fire) > 0
    if grid.shape != model.shape:
        raise ValueError(f"map shape {grid.shape} does not match model {model.shape}")
    return grid.astype(float)


def predict_s(model, fire) -> FireMap:
    """Thresholded next-step map (intensity 1 on predicted burning cells)."""
    m = _as_model(model)
    ctx = _map_context(m, fire)
    burn = m.burn_probability(ctx[None])[0] >= m.threshold
    fuel = fire.fuel if isinstance(fire, FireMap) else np.ones(m.shape, dtype=bool)
    return FireMap(fuel | burn, burn.astype(float))


def predict_sq(model, fire, x) -> tuple[FireMap, float]:
    """Next map and next burn cost under the per-cell quench fraction grid ``x``."""
    m = _as_model(model)
    ctx = _map_context(m, fire)
    q = check_grid(x, name="quench")
    if q.shape != m.shape:
        raise ValueError(f"quench shape {q.shape} does not match model {m.shape}")
    burn = m.burn_probability(ctx[None], q[None])[0] >= m.threshold
    fuel = fire.fuel if isinstance(fire, FireMap) else np.ones(m.shape, dtype=bool)
    cost = float(m.cost(ctx[None], q[None])[0])
    return FireMap(fuel | burn, burn.astype(float)), cost


def cost_subgradient(model, fire, x, instance=None):
    """Value and subgradient of the SQ cost head.

    Without ``instance``, ``x`` is a per-cell quench grid and the subgradient is
    per cell.  With ``instance``, ``x`` is the assignment tensor ``(I, J, L)``
    and the subgradient is returned in the same shape.
    """
    m = _as_model(model)
    ctx = _map_context(m, fire)
    if instance is None:
        return m.cost_and_grad(ctx, check_grid(x, name="quench"))
    x = np.asarray(x, dtype=float)
    q = instance.quench_grid(x)
    value, grad = m.cost_and_grad(ctx, q)
    per_fire = grad.reshape(-1)[instance.cell_index] / instance.demand
    return value, np.broadcast_to(per_fire[:, None, None], x.shape).copy()


@dataclass(frozen=True)
class MetricsReport:
    sensitivity: float
    specificity: float
    precision: float
    accuracy: float
    tp: int = field(default=0, compare=False)
    fn: int = field(default=0, compare=False)
    fp: int = field(default=0, compare=False)
    tn: int = field(default=0, compare=False)

    def as_dict(self) -> dict:
        return {
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "precision": self.precision,
            "accuracy": self.accuracy,
        }


def _ratio(num: int, den: int) -> float:
    return 1.0 if den == 0 else num / den


def metrics(predictions, labels) -> MetricsReport:
    pred = np.asarray(predictions) > 0
    true = np.asarray(labels) > 0
    check_same_shape(pred, true, "predictions and labels")
    tp = int(np.count_nonzero(pred & true))
    fn = int(np.count_nonzero(~pred & true))
    fp = int(np.count_nonzero(pred & ~true))
    tn = int(np.count_nonzero(~pred & ~true))
    return MetricsReport(
        sensitivity=_ratio(tp, tp + fn),
        specificity=_ratio(tn, tn + fp),
        precision=_ratio(tp, tp + fp),
        accuracy=_ratio(tp + tn, tp + tn + fp + fn),
        tp=tp, fn=fn, fp=fp, tn=tn,
    )


def evaluate(model, pairs: list[TrainingPair]) -> MetricsReport:
    """Pooled cell-level metrics of a model on held-out pairs."""
    m = _as_model(model)
    context, labels = pairs_to_arrays(pairs)
    quench = np.stack([p.quench for p in pairs]) if m.has_decision else None
    pred = m.burn_probability(context, quench) >= m.threshold
    return metrics(pred, labels)
