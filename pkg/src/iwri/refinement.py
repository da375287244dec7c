"""Iterative solution refinement for small dense linear problems.

Reference implementation of right-hand-side updating: repeatedly applying
the damped pseudo-inverse to the original data plus the running sum of
residuals.  Serves as an algebraic oracle for the dual-accumulation
identities of the inversion engine.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError, SolverError

_MAX_DIM = 500


@dataclass(frozen=True)
class DenseProblem:
    """Dense system A x = b with damping beta for the pseudo-inverse."""

    A: np.ndarray
    b: np.ndarray
    beta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "A", np.asarray(self.A, dtype=complex))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=complex))
        if self.A.ndim != 2:
            raise ShapeError("A must be a matrix")
        if self.b.shape != (self.A.shape[0],):
            raise ShapeError(f"b has shape {self.b.shape}, expected ({self.A.shape[0]},)")
        if self.beta < 0:
            raise ParameterError(f"beta must be nonnegative, got {self.beta}")
        if max(self.A.shape) > _MAX_DIM:
            raise ParameterError(f"dense refinement is capped at {_MAX_DIM} unknowns")


def _apply_pseudo_inverse(problem, rhs):
    A = problem.A
    gram = A.conj().T @ A + problem.beta * np.eye(A.shape[1])
    try:
        return np.linalg.solve(gram, A.conj().T @ rhs)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"normal equations singular (beta={problem.beta}): {exc}") from exc


def pseudo_inverse_solve(problem):
    """Damped least squares: x = (A^H A + beta I)^{-1} A^H b."""
    return _apply_pseudo_inverse(problem, problem.b)


def iterative_refine(problem, k):
    """k steps of solution refinement.

    x_1 applies the pseudo-inverse to b; each later step corrects the
    current solution with the pseudo-inverse of its residual, so x_k equals
    the pseudo-inverse applied to b plus the running sum of the first k-1
    residuals.
    """
    if k < 1:
        raise ParameterError(f"need at least one refinement step, got {k}")
    x = pseudo_inverse_solve(problem)
    for _ in range(k - 1):
        x = x + _apply_pseudo_inverse(problem, problem.b - problem.A @ x)
    return x


def accumulated_rhs_solve(problem, k):
    """Equivalent one-shot form: solve against b plus the accumulated
    residuals of the first k-1 refinement iterates."""
    if k < 1:
        raise ParameterError(f"need at least one refinement step, got {k}")
    accum = np.zeros_like(problem.b)
    x = _apply_pseudo_inverse(problem, problem.b)
    for _ in range(k - 1):
        accum = accum + (problem.b - problem.A @ x)
        x = _apply_pseudo_inverse(problem, problem.b + accum)
    return x
