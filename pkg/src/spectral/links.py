"""
Link functions for the Shift Learning Lab.

A link is the scalar target f of a single-index model. Links are selectable by
name so that experiment files and worker processes only ever exchange strings.
"""
import re
import math
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Tuple

import numpy as np
from numpy.polynomial import Polynomial
from scipy.special import expit

from ..utils.errors import PreconditionError, UnsupportedLinkError, UnsupportedOrderError

logger = logging.getLogger(__name__)

MAX_HERMITE_ORDER = 60

# Window on which polynomial links report a Lipschitz constant
LIPSCHITZ_WINDOW = (-6.0, 6.0)

_HERMITE_PATTERN = re.compile(r'^hermite:(\d+)$')
_POLY_PATTERN = re.compile(r'^poly:([-+0-9.eE,\s]+)$')


@dataclass(frozen=True)
class Nonlinearity:
    """Witness (epsilon, delta, c) of |f'(c+s) - f'(c-s)| > epsilon for s in (delta/2, delta)."""
    epsilon: float
    delta: float
    c: float

    def __post_init__(self):
        if self.epsilon <= 0 or self.delta <= 0:
            raise PreconditionError(f"nonlinearity witness needs epsilon, delta > 0, got {self.epsilon}, {self.delta}")
        if not -1.0 <= self.c <= 1.0:
            raise PreconditionError(f"nonlinearity witness center must lie in [-1, 1], got {self.c}")


@dataclass(frozen=True)
class LinkFunction:
    """
    Scalar link f with the metadata the analysis relies on.

    `breakpoints` lists the kinks of f (points where f' jumps); quadrature
    splits the real line there.
    """
    eval: Callable
    lipschitz_L: float
    label: str
    derivative: Optional[Callable] = None
    nonlinearity: Optional[Nonlinearity] = None
    breakpoints: Tuple[float, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not self.lipschitz_L > 0:
            raise PreconditionError(f"link {self.label} needs a positive Lipschitz constant, got {self.lipschitz_L}")

    def __call__(self, x):
        return self.eval(np.asarray(x, dtype=float))

    @property
    def has_derivative(self):
        return self.derivative is not None

    def grad(self, x):
        """
        Evaluate f' (the a.e. derivative for kinked links).

        Args:
            x (numpy.ndarray): Points

        Returns:
            numpy.ndarray: Derivative values
        """
        if self.derivative is None:
            raise UnsupportedLinkError(f"link {self.label} has no derivative")
        return self.derivative(np.asarray(x, dtype=float))

    def shifted(self, mu):
        """
        Build the shifted link f_mu(x) = f(x + mu).

        Args:
            mu (float): Shift

        Returns:
            LinkFunction: Shifted link
        """
        mu = float(mu)
        if mu == 0.0:
            return self
        base_eval, base_derivative = self.eval, self.derivative
        derivative = None
        if base_derivative is not None:
            derivative = lambda x: base_derivative(x + mu)
        return replace(
            self,
            eval=lambda x: base_eval(x + mu),
            derivative=derivative,
            label=f"{self.label}@{mu:+.6g}",
            breakpoints=tuple(b - mu for b in self.breakpoints),
        )


def hermite_values(k, x):
    """
    Normalized Hermite polynomial H_k at x by the three-term recurrence.

    Args:
        k (int): Order, 0 <= k <= 60
        x (float or numpy.ndarray): Points

    Returns:
        numpy.ndarray: H_k(x), unit norm in L2 of the standard Gaussian
    """
    if k < 0 or k > MAX_HERMITE_ORDER:
        raise UnsupportedOrderError(f"Hermite order {k} outside the supported range 0..{MAX_HERMITE_ORDER}")
    x = np.asarray(x, dtype=float)
    previous = np.ones_like(x)
    if k == 0:
        return previous
    current = x.copy()
    for n in range(1, k):
        previous, current = current, (x * current - math.sqrt(n) * previous) / math.sqrt(n + 1)
    return current


def hermite_link(k):
    """
    The link H_k, with derivative sqrt(k) H_{k-1}.

    Args:
        k (int): Order, 1 <= k <= 60

    Returns:
        LinkFunction: Hermite link
    """
    if k < 1 or k > MAX_HERMITE_ORDER:
        raise UnsupportedOrderError(f"hermite link order {k} outside 1..{MAX_HERMITE_ORDER}")
    root_k = math.sqrt(k)
    derivative = lambda x: root_k * hermite_values(k - 1, x)
    return LinkFunction(
        eval=lambda x: hermite_values(k, x),
        derivative=derivative,
        lipschitz_L=_window_lipschitz(derivative),
        label=f"hermite:{k}",
    )


def relu_link():
    return LinkFunction(
        eval=lambda x: np.maximum(x, 0.0),
        derivative=lambda x: (x > 0).astype(float),
        lipschitz_L=1.0,
        label="relu",
        nonlinearity=Nonlinearity(epsilon=0.5, delta=1.0, c=0.0),
        breakpoints=(0.0,),
    )


def sigmoid_link():
    def derivative(x):
        s = expit(x)
        return s * (1.0 - s)

    return LinkFunction(
        eval=expit,
        derivative=derivative,
        lipschitz_L=0.25,
        label="sigmoid",
        nonlinearity=Nonlinearity(epsilon=0.08, delta=1.0, c=1.0),
    )


def polynomial_link(coefficients, label=None):
    """
    Polynomial link in the monomial basis, f(x) = sum_i c_i x^i.

    Args:
        coefficients (sequence): c_0, c_1, ...
        label (str, optional): Identifier

    Returns:
        LinkFunction: Polynomial link
    """
    poly = Polynomial(np.asarray(coefficients, dtype=float))
    dpoly = poly.deriv()
    if label is None:
        label = "poly:" + ",".join(f"{c:g}" for c in poly.coef)
    return LinkFunction(
        eval=lambda x: poly(x),
        derivative=lambda x: dpoly(x) * np.ones_like(x),
        lipschitz_L=_window_lipschitz(dpoly),
        label=label,
    )


def parse_link(name):
    """
    Resolve a link by name.

    Accepted names are `relu`, `sigmoid`, `linear`, `hermite:k` and
    `poly:c0,c1,...`.

    Args:
        name (str): Link name

    Returns:
        LinkFunction: The link
    """
    if isinstance(name, LinkFunction):
        return name
    key = str(name).strip().lower()
    if key == 'relu':
        return relu_link()
    if key == 'sigmoid':
        return sigmoid_link()
    if key == 'linear':
        return replace(hermite_link(1), label='linear')

    match = _HERMITE_PATTERN.match(key)
    if match:
        return hermite_link(int(match.group(1)))

    match = _POLY_PATTERN.match(key)
    if match:
        try:
            coefficients = [float(c) for c in match.group(1).split(',') if c.strip()]
        except ValueError as e:
            raise UnsupportedLinkError(f"bad polynomial coefficients in {name!r}") from e
        if not coefficients:
            raise UnsupportedLinkError(f"polynomial link {name!r} has no coefficients")
        return polynomial_link(coefficients, label=key)

    raise UnsupportedLinkError(f"unknown link {name!r}; expected relu, sigmoid, linear, hermite:k or poly:c0,c1,...")


def check_lipschitz(f, grid):
    """
    Largest difference quotient of f between consecutive grid points.

    Args:
        f (LinkFunction): Link
        grid (numpy.ndarray): Increasing points

    Returns:
        float: max |f(x_{i+1}) - f(x_i)| / |x_{i+1} - x_i|
    """
    grid = np.asarray(grid, dtype=float)
    values = f(grid)
    return float(np.max(np.abs(np.diff(values)) / np.diff(grid)))


def check_derivative(f, grid, h=1e-5):
    """
    Largest gap between central differences of f and its derivative.

    Grid points within 2h of a kink are skipped.

    Args:
        f (LinkFunction): Link with a derivative
        grid (numpy.ndarray): Points
        h (float): Half step

    Returns:
        float: Maximum absolute discrepancy
    """
    grid = np.asarray(grid, dtype=float)
    if f.breakpoints:
        distance = np.min(np.abs(grid[:, None] - np.asarray(f.breakpoints)[None, :]), axis=1)
        grid = grid[distance > 2 * h]
    central = (f(grid + h) - f(grid - h)) / (2 * h)
    return float(np.max(np.abs(central - f.grad(grid))))


def check_nonlinearity(f, n_grid=101):
    """
    Verify the stored nonlinearity witness on a grid of s in (delta/2, delta).

    Args:
        f (LinkFunction): Link with derivative and witness
        n_grid (int): Number of interior grid points

    Returns:
        bool: True when |f'(c+s) - f'(c-s)| > epsilon on the whole grid
    """
    w = f.nonlinearity
    if w is None:
        return False
    s = np.linspace(w.delta / 2, w.delta, n_grid + 2)[1:-1]
    jump = np.abs(f.grad(w.c + s) - f.grad(w.c - s))
    return bool(np.all(jump > w.epsilon))


def _window_lipschitz(derivative):
    grid = np.linspace(LIPSCHITZ_WINDOW[0], LIPSCHITZ_WINDOW[1], 4001)
    bound = float(np.max(np.abs(derivative(grid))))
    # Endpoint and grid-max slack
    return max(bound * (1.0 + 1e-6), np.finfo(float).eps)
