"""Manufactured moving-Gaussian heat problems with exact solutions.

A Gaussian bump of fixed width rides an affine trajectory while a ramp
factor 1 - exp(-ramp_rate * t) switches it on from a zero initial state.
The matching source u_t - nu * Lap(u) stays separable axis by axis, which
is what the separated assembly consumes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assembly import SeparableSourceTerm
from .errors import ConfigInvalid


@dataclass(frozen=True)
class MovingGaussianProblem:
    """Product-Gaussian exact solution on [0, side_length]^dim."""

    dim: int
    diffusivity: float
    width: float
    ramp_rate: float
    centers: tuple
    speeds: tuple
    side_length: float = 1.0
    final_time: float = 1.0

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ConfigInvalid(f"dim must be 2 or 3, got {self.dim}")
        if len(self.centers) != self.dim or len(self.speeds) != self.dim:
            raise ConfigInvalid("centers and speeds must list one value per axis")
        if self.width <= 0.0 or self.ramp_rate <= 0.0 or self.diffusivity <= 0.0:
            raise ConfigInvalid("width, ramp_rate and diffusivity must be positive")
        if self.side_length <= 0.0 or self.final_time <= 0.0:
            raise ConfigInvalid("side_length and final_time must be positive")
        for a, b in zip(self.centers, self.speeds):
            for t in (0.0, self.final_time):
                if not 0.0 <= a + b * t <= self.side_length:
                    raise ConfigInvalid(
                        f"trajectory leaves the domain at t = {t}: {a + b * t}")

    def center_at(self, t: float) -> tuple:
        """Source center per axis at time t."""
        return tuple(a + b * t for a, b in zip(self.centers, self.speeds))

    def ramp(self, t: float) -> float:
        return 1.0 - np.exp(-self.ramp_rate * t)


def exact_solution(problem: MovingGaussianProblem, x, t: float):
    """Exact temperature at per-axis coordinates x (scalars or arrays)."""
    s2 = 2.0 * problem.width**2
    out = problem.ramp(t)
    for xk, mu in zip(x, problem.center_at(t)):
        out = out * np.exp(-((np.asarray(xk, dtype=float) - mu) ** 2) / s2)
    return out


def source_value(problem: MovingGaussianProblem, x, t: float):
    """Heat source matching the exact solution, u_t - nu * Lap(u)."""
    sig2 = problem.width**2
    nu = problem.diffusivity
    ramp = problem.ramp(t)
    decay = problem.ramp_rate * np.exp(-problem.ramp_rate * t)
    drift = 0.0
    quad = 0.0
    gauss = 1.0
    for xk, mu, b in zip(x, problem.center_at(t), problem.speeds):
        dx = np.asarray(xk, dtype=float) - mu
        drift = drift + dx * (b / sig2)
        quad = quad + dx**2
        gauss = gauss * np.exp(-(dx**2) / (2.0 * sig2))
    bracket = (drift - nu * quad / sig2**2 + problem.dim * nu / sig2) * ramp + decay
    return bracket * gauss


def _bell(mu: float, sig2: float):
    return lambda x: np.exp(-((x - mu) ** 2) / (2.0 * sig2))


def _bell_times_quadratic(mu: float, sig2: float, c0: float, c2: float):
    return lambda x: (c0 + c2 * (x - mu) ** 2) * np.exp(-((x - mu) ** 2) / (2.0 * sig2))


def _bell_times_linear(mu: float, sig2: float):
    return lambda x: (x - mu) * np.exp(-((x - mu) ** 2) / (2.0 * sig2))


def separable_expansion(problem: MovingGaussianProblem, t_mid: float):
    """Exact separation of the source at one time into per-axis factors.

    The constant part of the bracket rides along with axis 0's quadratic
    factor, so a d-dimensional source costs d terms plus one per moving
    axis. Terms whose weight vanishes (static axes, or the ramp at t = 0)
    are dropped.
    """
    sig2 = problem.width**2
    nu = problem.diffusivity
    mus = problem.center_at(t_mid)
    ramp = problem.ramp(t_mid)
    decay = problem.ramp_rate * np.exp(-problem.ramp_rate * t_mid)
    const = decay + problem.dim * nu * ramp / sig2
    spread = -nu * ramp / sig2**2

    plain = tuple(_bell(mu, sig2) for mu in mus)
    terms = [SeparableSourceTerm(
        1.0, (_bell_times_quadratic(mus[0], sig2, const, spread),) + plain[1:])]
    for k in range(1, problem.dim):
        if spread != 0.0:
            fns = list(plain)
            fns[k] = _bell_times_quadratic(mus[k], sig2, 0.0, 1.0)
            terms.append(SeparableSourceTerm(spread, tuple(fns)))
    for k in range(problem.dim):
        w = ramp * problem.speeds[k] / sig2
        if w != 0.0:
            fns = list(plain)
            fns[k] = _bell_times_linear(mus[k], sig2)
            terms.append(SeparableSourceTerm(w, tuple(fns)))
    return terms


def exact_expansion(problem: MovingGaussianProblem, t: float) -> SeparableSourceTerm:
    """The exact solution itself as a single separable term."""
    sig2 = problem.width**2
    fns = tuple(_bell(mu, sig2) for mu in problem.center_at(t))
    return SeparableSourceTerm(problem.ramp(t), fns)


def moving_gaussian_2d() -> MovingGaussianProblem:
    """2D benchmark: the source sweeps the diagonal of the unit square."""
    return MovingGaussianProblem(
        dim=2, diffusivity=0.05, width=0.05, ramp_rate=10.0,
        centers=(0.3, 0.3), speeds=(0.4, 0.4))


def moving_gaussian_3d() -> MovingGaussianProblem:
    """3D benchmark: a narrower source moving along the y axis only."""
    return MovingGaussianProblem(
        dim=3, diffusivity=0.05, width=0.02, ramp_rate=10.0,
        centers=(0.5, 0.3, 0.5), speeds=(0.0, 0.4, 0.0))
