"""Closed forms for the two-bus angle-only example.

Bus 1 is the reference generator with cost 1 per unit of output, bus 2 a
load ``l`` at angle ``-theta``; both voltage magnitudes are 1 and the line
admittance is ``g - jb``.  Then

    cost(theta)    = g - g cos(theta) + b sin(theta)
    balance(theta) = l + g - g cos(theta) - b sin(theta)     (= 0 when feasible)
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace

import numpy as np


class DegenerateRootError(ValueError):
    pass


@dataclass(frozen=True)
class TwoBusParams:
    g: float = 1.0
    b: float = 5.0
    l: float = 3.0
    rho: float = 100.0
    mu: float = 0.0

    def __post_init__(self):
        if self.g < 0 or not self.b > 0 or not self.rho > 0:
            raise ValueError("two-bus parameters need g >= 0, b > 0, rho > 0")

    def with_mu(self, mu: float) -> "TwoBusParams":
        return replace(self, mu=float(mu))

    @property
    def max_load(self) -> float:
        return math.hypot(self.g, self.b) - self.g


@dataclass(frozen=True)
class LandscapeSamples:
    theta: np.ndarray
    values: np.ndarray
    minima: np.ndarray


def objective(theta, params: TwoBusParams):
    return params.g - params.g * np.cos(theta) + params.b * np.sin(theta)


def balance_residual(theta, params: TwoBusParams):
    return params.l + params.g - params.g * np.cos(theta) - params.b * np.sin(theta)


def objective_slope(theta, params: TwoBusParams):
    return params.g * np.sin(theta) + params.b * np.cos(theta)


def residual_slope(theta, params: TwoBusParams):
    return params.g * np.sin(theta) - params.b * np.cos(theta)


def penalized(theta, params: TwoBusParams):
    r = balance_residual(theta, params)
    return objective(theta, params) + 0.5 * params.rho * r * r


def partial_lagrangian(theta, params: TwoBusParams):
    return objective(theta, params) + params.mu * balance_residual(theta, params)


def dual_at_root(theta_root: float, params: TwoBusParams) -> float:
    """Multiplier making ``theta_root`` stationary for the partial Lagrangian."""
    if abs(balance_residual(theta_root, params)) > 1e-8:
        raise ValueError(f"theta={theta_root!r} does not satisfy the balance equation")
    dc = residual_slope(theta_root, params)
    if abs(dc) <= 1e-10 * math.hypot(params.g, params.b):
        raise DegenerateRootError("balance derivative vanishes at a tangent root")
    return float(-objective_slope(theta_root, params) / dc)


def lagrangian_minimizer(params: TwoBusParams) -> float:
    """Global minimizer on (-pi, pi] of the partial Lagrangian.

    Up to a constant it is ``(1+mu) g (1 - cos t) + (1-mu) b sin t``, a single
    sinusoid, so its minimizer is available in closed form.
    """
    a = (1.0 + params.mu) * params.g
    c = (1.0 - params.mu) * params.b
    # minimize -a cos t + c sin t = R cos(t - phi) with phi = atan2(c, -a); min at t = phi + pi
    t = math.atan2(c, -a) + math.pi
    return t - 2 * math.pi if t > math.pi else t


def sample(fn, params: TwoBusParams, resolution: float = 1e-4) -> LandscapeSamples:
    """Sample ``fn`` on (-pi, pi] and locate interior local minima."""
    n = int(math.ceil(2 * math.pi / resolution))
    theta = -math.pi + 2 * math.pi * np.arange(1, n + 1) / n
    values = fn(theta, params)
    return LandscapeSamples(theta, values, local_minima(values))


def local_minima(values) -> np.ndarray:
    """Interior indices where the first difference changes sign from - to +."""
    d = np.diff(values)
    sign = np.sign(d)
    # carry the last nonzero sign across flat stretches
    for i in range(1, sign.size):
        if sign[i] == 0:
            sign[i] = sign[i - 1]
    idx = np.flatnonzero((sign[:-1] < 0) & (sign[1:] > 0)) + 1
    return idx


def landscape_csv(params: TwoBusParams, resolution: float = 1e-3) -> str:
    """CSV with columns theta, penalized, partial_lagrangian."""
    n = int(math.ceil(2 * math.pi / resolution))
    theta = -math.pi + 2 * math.pi * np.arange(1, n + 1) / n
    lp = penalized(theta, params)
    lm = partial_lagrangian(theta, params)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["theta", "L_rho", "L_mu"])
    for row in zip(theta, lp, lm):
        w.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def case_text(params: TwoBusParams, base_mva: float = 100.0) -> str:
    """MATPOWER text realizing the example as a full ACOPF case."""
    y2 = params.g**2 + params.b**2
    r, x = params.g / y2, params.b / y2
    big = 1e4
    return f"""function mpc = twobus
mpc.version = '2';
mpc.baseMVA = {base_mva!r};
mpc.bus = [
\t1\t3\t0\t0\t0\t0\t1\t1\t0\t1\t1\t1\t1;
\t2\t1\t{params.l * base_mva!r}\t0\t0\t0\t1\t1\t0\t1\t1\t1\t1;
];
mpc.gen = [
\t1\t0\t0\t{big!r}\t{-big!r}\t1\t{base_mva!r}\t1\t{big!r}\t0;
\t2\t0\t0\t{big!r}\t{-big!r}\t1\t{base_mva!r}\t1\t0\t0;
];
mpc.branch = [
\t1\t2\t{r!r}\t{x!r}\t0\t0\t0\t0\t0\t0\t1\t-360\t360;
];
mpc.gencost = [
\t2\t0\t0\t2\t{1.0 / base_mva!r}\t0;
\t2\t0\t0\t2\t0\t0;
];
"""
