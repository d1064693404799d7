"""Shared fixtures and independent oracles for the test suite.

The oracles compute expected values through elementary arithmetic only
(explicit power products, combinatorics), never through the code paths
they are meant to check.
"""

import math
import os

import numpy as np
import pytest

from gpmkit import GPMProblem, ModelContext, assemble, minimize, mom

MODELS_DIR = os.path.join(os.path.dirname(__file__), os.pardir, "models")


@pytest.fixture
def models_dir():
    return os.path.abspath(MODELS_DIR)


def model_path(name):
    return os.path.abspath(os.path.join(MODELS_DIR, name))


def camel_problem():
    """Six-hump camel back; two global minima at +-(0.0898, -0.7127)."""
    ctx = ModelContext()
    x1 = ctx.var("x1")
    x2 = ctx.var("x2")
    obj = (
        4 * x1 ** 2
        + x1 * x2
        - 4 * x2 ** 2
        - 2.1 * x1 ** 4
        + 4 * x2 ** 4
        + x1 ** 6 * (1.0 / 3.0)
    )
    return ctx, GPMProblem(minimize(mom(obj)))


def quadratic3_problem():
    """Nonconvex quadratic with known hierarchy -6, -5.69, -4.07, -4."""
    ctx = ModelContext()
    x = ctx.vars("x", 3)
    g0 = -2 * x[0] + x[1] - x[2]
    cons = [
        24 - 20 * x[0] + 9 * x[1] - 13 * x[2]
        + 4 * x[0] ** 2 - 4 * x[0] * x[1] + 4 * x[0] * x[2]
        + 2 * x[1] ** 2 - 2 * x[1] * x[2] + 2 * x[2] ** 2 >= 0,
        x[0] + x[1] + x[2] <= 4,
        3 * x[1] + x[2] <= 6,
        0 <= x[0],
        x[0] <= 2,
        0 <= x[1],
        0 <= x[2],
        x[2] <= 3,
    ]
    return ctx, GPMProblem(minimize(mom(g0)), cons)


def binom(n, k):
    return math.comb(n, k)


def raw_moment(mono, varlist, points, weights):
    """Moment of one monomial of a discrete measure, by direct powers."""
    total = 0.0
    for point, weight in zip(points, weights):
        value = 1.0
        for var, coord in zip(varlist, point):
            power = mono.exponent(var)
            if power:
                value *= float(coord) ** power
        total += float(weight) * value
    return total


def planted_moment_vector(msdp, measure, points, weights):
    """Decision vector y whose moments are those of the planted atoms."""
    y = np.zeros(msdp.index.n_vars)
    for k, (meas, mono) in enumerate(msdp.index.var_meaning):
        assert meas is measure
        y[k] = raw_moment(mono, measure.vars, points, weights)
    return y


def separated_points(rng, natoms, nvars, gap=0.5):
    """Random atoms in [-1, 1]^n with pairwise distance at least gap."""
    while True:
        points = rng.uniform(-1.0, 1.0, size=(natoms, nvars))
        ok = True
        for i in range(natoms):
            for j in range(i + 1, natoms):
                if np.linalg.norm(points[i] - points[j]) < gap:
                    ok = False
        if ok:
            return points


def planted_instance(rng, nvars, natoms):
    """A moment relaxation plus the exact moment vector of known atoms.

    The order is chosen so that the truncated basis one degree below
    already spans the atoms, which makes the moment matrix flat.
    """
    ctx = ModelContext()
    x = ctx.vars("x", nvars)
    problem = GPMProblem(minimize(mom(sum(x[i] for i in range(nvars)))))
    order = natoms if nvars == 1 else 2
    order = max(order, 1)
    msdp = assemble(problem, order)
    measure = problem.measures[0]
    points = separated_points(rng, natoms, nvars)
    weights = rng.uniform(0.5, 1.5, size=natoms)
    weights /= weights.sum()
    y = planted_moment_vector(msdp, measure, points, weights)
    return msdp, measure, points, weights, y


def match_atoms(planted_points, planted_weights, points, weights):
    """Greedy nearest matching; returns worst point and weight errors."""
    points = np.asarray(points, dtype=float)
    weights = np.asarray(weights, dtype=float)
    worst_point = 0.0
    worst_weight = 0.0
    used = set()
    for p, w in zip(planted_points, planted_weights):
        dists = np.linalg.norm(points - p, axis=1)
        for idx in used:
            dists[idx] = np.inf
        k = int(np.argmin(dists))
        used.add(k)
        worst_point = max(worst_point, float(dists[k]))
        worst_weight = max(worst_weight, abs(float(weights[k]) - float(w)))
    return worst_point, worst_weight
