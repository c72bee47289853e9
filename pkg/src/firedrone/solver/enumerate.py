"""Brute-force optimum over every binary assignment, for testing the solver."""
from __future__ import annotations

import itertools
from typing import NamedTuple, Optional

import numpy as np

from ..model import Decision, Instance, Scenario, default_tau_max, time_margin
from .branch_cut import CostOracle

MAX_VARIABLES = 16


class ExactResult(NamedTuple):
    b: np.ndarray
    x: np.ndarray
    value: float
    feasible: bool


def enumerate_exact(
    instance: Instance,
    sq_model,
    scenario: Scenario,
    mode: str = "ccro",
    tau_max: Optional[float] = None,
    terminal: bool = False,
) -> ExactResult:
    """Global optimum over all ``(b, x)``; ``b`` is taken minimal for each ``x``."""
    I, J, L = instance.I, instance.J, instance.L
    if I * J * L > MAX_VARIABLES:
        raise ValueError(f"instance too large to enumerate: I*J*L = {I * J * L} > {MAX_VARIABLES}")
    if mode == "plain" and tau_max is None:
        tau_max = default_tau_max(instance, scenario)
    oracle = CostOracle(sq_model, instance)
    w1, w2, w3 = scenario.weights
    if terminal:
        w1 = 0.0

    # structural eligibility with every base open
    slots = np.argwhere(instance.eligible(np.ones(J, dtype=int)))
    n = len(slots)
    combos = np.array(list(itertools.product((0, 1), repeat=n)), dtype=np.int8).reshape(2**n, n)
    X = np.zeros((len(combos), I, J, L), dtype=np.int8)
    if n:
        X[:, slots[:, 0], slots[:, 1], slots[:, 2]] = combos

    used = 2.0 * np.einsum("nijl,ij->njl", X, instance.D)
    ok = np.all(used <= (instance.battery * instance.u)[None, None, :] + 1e-9, axis=(1, 2))
    load = X.sum(axis=(2, 3))
    if terminal:
        ok &= np.all(load == instance.demand[None, :], axis=1)
    else:
        ok &= np.all(load <= instance.demand[None, :], axis=1)
    for t in np.nonzero(ok)[0]:
        for l in range(L):
            x_l = X[t, :, :, l]
            if x_l.any() and time_margin(x_l, instance, scenario, mode, tau_max) > 1e-12:
                ok[t] = False
                break

    idx = np.nonzero(ok)[0]
    if idx.size == 0:
        return ExactResult(np.zeros(J, dtype=np.int8), np.zeros((I, J, L), dtype=np.int8), np.inf, False)
    Xf = X[idx]
    b = (Xf.sum(axis=(1, 3)) > 0).astype(np.int8)
    values = (
        w1 * oracle.values(Xf)
        + w2 * b.sum(axis=1)
        + w3 * 2.0 * np.einsum("nijl,ij->n", Xf, instance.D)
    )
    best = int(np.argmin(values))
    return ExactResult(b[best], Xf[best], float(values[best]), True)


def exact_decision(result: ExactResult) -> Decision:
    return Decision(result.x, result.b)
