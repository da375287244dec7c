"""One outer cycle of wavefield-reconstruction inversion.

Each cycle alternates two linear subproblems: a closed-form wavefield
reconstruction (normal equations of the stacked data/wave-equation system)
and a linearized model estimate, with scaled dual variables accumulating
the data and source residuals between them.  Three variants share the code
path:

* ``wri``  - penalty method: both duals frozen at zero.
* ``admm`` - one full dual ascent per cycle after both primal updates.
* ``prsm`` - the source dual is updated twice per cycle with step alpha
  (after the wavefield update and after the model update), the data dual
  once.

The model subproblem is exactly linear because the PML damping does not
depend on the model; bound constraints enter through a split-Bregman
auxiliary/dual pair, one pass per outer cycle.
"""

import enum
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ParameterError, ShapeError, SolverError
from .grid import velocity_to_slowness_sq
from .helmholtz import HelmholtzOperator, build_kernel, forward_solve
from .acquisition import build_observation, build_source
from .linalg import FactorizationError, assemble_normal_matrix, factorize
from .util import axis_minor_ordering, stacked_norm


class Variant(enum.Enum):
    WRI = "wri"
    ADMM = "admm"
    PRSM = "prsm"


@dataclass(frozen=True)
class PenaltyParams:
    """Per-frequency penalty weights plus the dual-update strategy."""

    lambdas: tuple
    alpha: float = 0.5
    variant: Variant = Variant.PRSM
    inner_iterations: int = 1

    def __post_init__(self):
        object.__setattr__(self, "lambdas", tuple(float(v) for v in self.lambdas))
        if any(v <= 0 for v in self.lambdas):
            raise ParameterError("penalty weights must be positive")
        if not 0.0 < self.alpha <= 1.0:
            raise ParameterError(f"alpha must be in (0, 1], got {self.alpha}")
        if self.inner_iterations < 1:
            raise ParameterError("inner_iterations must be >= 1")
        if self.variant is Variant.ADMM and self.inner_iterations != 1:
            raise ParameterError("inner iterations are defined for the wri/prsm variants only")


@dataclass
class DualState:
    """Scaled dual variables: running sums of data and source residuals."""

    data: list    # per frequency, shape (n_receivers, n_sources)
    source: list  # per frequency, shape (n_pad, n_sources)

    @classmethod
    def zeros(cls, problem):
        shape_d = (problem.n_receivers, problem.n_sources)
        shape_b = (problem.n_pad, problem.n_sources)
        return cls(data=[np.zeros(shape_d, dtype=complex) for _ in problem.frequencies],
                   source=[np.zeros(shape_b, dtype=complex) for _ in problem.frequencies])


@dataclass
class BoxConstraintState:
    """Split-Bregman auxiliary variable (always inside the bounds) and its
    Bregman dual; gamma is frozen on first use."""

    p: np.ndarray
    q: np.ndarray
    gamma: float | None = None

    @classmethod
    def init(cls, m0, lo, hi):
        return cls(p=np.clip(m0, lo, hi), q=np.zeros_like(m0))


@dataclass
class IterationState:
    m_values: np.ndarray
    u: list
    duals: DualState
    box: BoxConstraintState
    k: int = 0
    pde_solve_count: int = 0
    assembled: list | None = None  # A(m^k) per frequency, reused across cycles


@dataclass
class CycleStats:
    """Diagnostics of one outer cycle, evaluated at (m^{k+1}, u^{k+1})."""

    data_misfit: float
    pde_misfit: float
    data_misfit_per_freq: np.ndarray
    pde_misfit_per_freq: np.ndarray
    initial_pde_misfit: float | None = None
    model_warning: bool = False


class InversionProblem:
    """Frozen per-batch setup: kernels, observation operator, sources,
    observed data, bounds, and reference fields for error tracking."""

    def __init__(self, grid, pml, scheme, dataset, *, bounds=None, m_true=None,
                 reference_wavefields=True, bounds_mode="bregman"):
        self.grid = grid
        self.scheme = scheme
        self.bounds_mode = bounds_mode
        self.geometry = dataset.geometry
        self.geometry.validate(grid)
        self.frequencies = dataset.frequencies
        self.observed = [d.copy() for d in dataset.data]
        self.noise_level = dataset.noise_level.copy()

        if pml.max_damping is None:
            if bounds is not None:
                v_ref = bounds.v_max
            elif m_true is not None:
                v_ref = float(np.max(m_true.values))
            else:
                raise ParameterError("unresolved PML config needs bounds or a true model "
                                     "to fix the damping rule")
            pml = pml.resolved(grid, v_ref)
        self.pml = pml
        self.kernels = [build_kernel(grid, 2.0 * np.pi * f, pml, scheme)
                        for f in dataset.frequencies]
        topo = self.kernels[0].topology
        self.topology = topo
        self.P = build_observation(topo, self.geometry.receivers)
        self.Pt = self.P.conjugate().T.tocsr()
        self.sources = []
        for i, _f in enumerate(dataset.frequencies):
            amp = dataset.source_scale[i]
            self.sources.append(np.column_stack(
                [build_source(topo, s, amp) for s in self.geometry.sources]))

        self.bounds = bounds
        if bounds is not None:
            self.lo, self.hi = bounds.slowness_sq_interval()
        else:
            self.lo, self.hi = -np.inf, np.inf

        gp = topo.grid_pad
        self.pad_ordering = axis_minor_ordering(gp.nz, gp.nx) if gp.nz < gp.nx else None
        self.phys_ordering = axis_minor_ordering(grid.nz, grid.nx) if grid.nz < grid.nx else None
        n_pad = topo.n_pad
        self.restriction = sp.csr_matrix(
            (np.ones(n_pad), (np.arange(n_pad), topo.phys_of_pad)),
            shape=(n_pad, grid.n))

        self.m_star = None
        self.u_star = None
        if m_true is not None:
            self.m_star = velocity_to_slowness_sq(m_true).values
            if reference_wavefields:
                self.u_star = [forward_solve(HelmholtzOperator(k, k.assemble(self.m_star)), b)
                               for k, b in zip(self.kernels, self.sources)]

    @property
    def n_receivers(self):
        return self.geometry.n_receivers

    @property
    def n_sources(self):
        return self.geometry.n_sources

    @property
    def n_pad(self):
        return self.topology.n_pad


def init_state(problem, m0_values):
    m0 = np.asarray(m0_values, dtype=float).copy()
    if m0.shape[0] != problem.grid.n:
        raise ShapeError("starting model does not match the grid")
    u0 = [np.zeros((problem.n_pad, problem.n_sources), dtype=complex)
          for _ in problem.frequencies]
    return IterationState(m_values=m0, u=u0, duals=DualState.zeros(problem),
                          box=BoxConstraintState.init(m0, problem.lo, problem.hi))


# -- primitive updates ------------------------------------------------------


def reconstruct_wavefield(factorization, P, A, lam, d_eff, b_eff):
    """Closed-form wavefield: minimizer of
    1/2 ||P u - d_eff||^2 + lam/2 ||A u - b_eff||^2."""
    rhs = P.conjugate().T @ d_eff + lam * (A.conjugate().T @ b_eff)
    return factorization.solve(rhs)


def update_data_dual(d_dual, d, Pu):
    """d' = d_dual + (d - P u): running sum of data residuals."""
    if d_dual.shape != d.shape or d.shape != Pu.shape:
        raise ShapeError("data dual update: mismatched shapes")
    return d_dual + (d - Pu)


def update_source_dual(b_dual, b, Au, alpha):
    """b' = b_dual + alpha (b - A u); alpha = 1 for the single ADMM ascent,
    alpha in (0, 1) twice per cycle for the contractive variant."""
    if not 0.0 < alpha <= 1.0:
        raise ParameterError(f"alpha must be in (0, 1], got {alpha}")
    if b_dual.shape != b.shape or b.shape != Au.shape:
        raise ShapeError("source dual update: mismatched shapes")
    return b_dual + alpha * (b - Au)


def wri_objective(A, P, u, d_eff, b_eff, lam):
    """(data term, wave-equation term) of the scaled objective, separately."""
    data = 0.5 * float(np.sum(np.abs(P @ u - d_eff) ** 2))
    pde = 0.5 * lam * float(np.sum(np.abs(A @ u - b_eff) ** 2))
    return data, pde


def wri_gradient_m(kernel, m_values, u, b_eff):
    """Gradient of 1/2 ||A(m) u - b_eff||^2 with respect to the physical
    model at fixed u (exact adjoint of the mass linearization)."""
    u = np.atleast_2d(np.asarray(u).T).T  # promote (n,) to (n, 1)
    b_eff = np.atleast_2d(np.asarray(b_eff).T).T
    A = kernel.assemble(m_values)
    r = A @ u - b_eff
    sh_r = kernel.mass_basis.conjugate().T @ r
    g_pad = np.sum(np.real(kernel.omega**2 * np.conj(u) * sh_r), axis=1)
    return np.bincount(kernel.topology.phys_of_pad, weights=g_pad,
                       minlength=kernel.grid.n)


def accumulate_model_system(kernel, restriction, u_column, y_column):
    """Contribution of one (frequency, source) pair to the model normal
    equations: (L_r^H L_r, L_r^H y) with L_r the mass linearization
    restricted to the physical cells."""
    Lr = kernel.scaled_mass(u_column) @ restriction
    return (Lr.conjugate().T @ Lr), (Lr.conjugate().T @ y_column), Lr


def estimate_model(normal, rhs, lo, hi, box, *, ordering=None, mode="bregman",
                   eps_reg=1e-12):
    """Solve the accumulated model normal equations under box bounds.

    ``bregman`` performs one split-Bregman pass (solve + clip + dual step)
    and emits the auxiliary variable, which is inside the bounds by
    construction; ``clip`` solves and projects.  A singular system is
    retried with a small diagonal shift and flagged.
    """
    normal = sp.csr_matrix(normal)
    rhs = np.asarray(rhs, dtype=float)
    n = normal.shape[0]
    diag_mean = float(np.mean(normal.diagonal().real))
    warn = False

    if mode == "bregman":
        if box.gamma is None:
            box.gamma = 0.1 * diag_mean
        system = normal + box.gamma * sp.identity(n, format="csr")
        full_rhs = rhs + box.gamma * (box.p - box.q)
    elif mode == "clip":
        system = normal
        full_rhs = rhs
    else:
        raise ParameterError(f"unknown bound mode {mode!r}")

    try:
        fact = factorize(system, ordering=ordering)
        m_raw = fact.solve(full_rhs)
    except FactorizationError:
        warn = True
        shift = eps_reg * (diag_mean if diag_mean > 0 else 1.0)
        if shift <= 0:
            shift = eps_reg
        warnings.warn("singular model normal matrix, applying diagonal shift")
        fact = factorize(system + shift * sp.identity(n, format="csr"), ordering=ordering)
        m_raw = fact.solve(full_rhs)
    m_raw = np.asarray(m_raw, dtype=float)

    if mode == "bregman":
        box.p = np.clip(m_raw + box.q, lo, hi)
        box.q = box.q + m_raw - box.p
        return box.p.copy(), warn
    return np.clip(m_raw, lo, hi), warn


# -- the outer cycle ---------------------------------------------------------


def _run_cycle(problem, state, params, n_inner):
    if len(params.lambdas) != len(problem.frequencies):
        raise ShapeError("need one penalty weight per frequency")
    variant = params.variant
    n_src = problem.n_sources
    k_before = state.k

    if state.assembled is None:
        state.assembled = [kern.assemble(state.m_values) for kern in problem.kernels]

    initial_sq = 0.0
    # wavefield refinement (+ data/source dual refinement at fixed model)
    for i, kern in enumerate(problem.kernels):
        A = state.assembled[i]
        lam = params.lambdas[i]
        d = problem.observed[i]
        b = problem.sources[i]
        try:
            fact = factorize(assemble_normal_matrix(A, problem.P, lam),
                             ordering=problem.pad_ordering)
        except FactorizationError as exc:
            raise SolverError(f"wavefield normal-matrix factorization failed: {exc}",
                              frequency=problem.frequencies[i], iteration=k_before) from exc
        At = A.conjugate().T.tocsr()
        u = state.u[i]
        for j in range(n_inner):
            rhs = problem.Pt @ (d + state.duals.data[i]) \
                + lam * (At @ (b + state.duals.source[i]))
            u = fact.solve(rhs)
            state.pde_solve_count += n_src
            residual_mid = None
            if variant is not Variant.WRI:
                state.duals.data[i] = update_data_dual(state.duals.data[i], d, problem.P @ u)
            if variant is Variant.PRSM or (k_before == 0 and j == 0):
                residual_mid = b - A @ u
            if variant is Variant.PRSM:
                state.duals.source[i] = state.duals.source[i] + params.alpha * residual_mid
            if k_before == 0 and j == 0:
                initial_sq += float(np.sum(np.abs(residual_mid) ** 2))
        state.u[i] = u

    # model refinement (+ source dual refinement at fixed wavefield)
    normal_c = None
    model_warn = False
    lrs = []
    for i, kern in enumerate(problem.kernels):
        per_source = []
        for s in range(n_src):
            Lr = kern.scaled_mass(state.u[i][:, s]) @ problem.restriction
            per_source.append(Lr)
            contrib = Lr.conjugate().T @ Lr
            normal_c = contrib if normal_c is None else normal_c + contrib
        lrs.append(per_source)
    normal = normal_c.real.tocsr()

    for j in range(n_inner):
        g = np.zeros(problem.grid.n)
        for i, kern in enumerate(problem.kernels):
            y = problem.sources[i] + state.duals.source[i] - kern.laplacian @ state.u[i]
            for s in range(n_src):
                g += np.real(lrs[i][s].conjugate().T @ y[:, s])
        try:
            m_new, warn = estimate_model(normal, g, problem.lo, problem.hi, state.box,
                                         ordering=problem.phys_ordering,
                                         mode=problem.bounds_mode)
        except FactorizationError as exc:
            raise SolverError(f"model update failed: {exc}", iteration=k_before) from exc
        model_warn = model_warn or warn
        state.m_values = m_new
        state.assembled = [kern.assemble(m_new) for kern in problem.kernels]
        if variant is Variant.PRSM:
            for i in range(len(problem.kernels)):
                residual = problem.sources[i] - state.assembled[i] @ state.u[i]
                state.duals.source[i] = state.duals.source[i] + params.alpha * residual

    # ADMM: single full dual ascent after both primal updates
    if variant is Variant.ADMM:
        for i in range(len(problem.kernels)):
            residual = problem.sources[i] - state.assembled[i] @ state.u[i]
            state.duals.source[i] = state.duals.source[i] + residual

    state.k = k_before + 1

    pde_sq = np.empty(len(problem.kernels))
    data_sq = np.empty(len(problem.kernels))
    for i in range(len(problem.kernels)):
        pde_sq[i] = float(np.sum(np.abs(problem.sources[i] - state.assembled[i] @ state.u[i]) ** 2))
        data_sq[i] = float(np.sum(np.abs(problem.P @ state.u[i] - problem.observed[i]) ** 2))
    return CycleStats(
        data_misfit=float(np.sqrt(np.sum(data_sq))),
        pde_misfit=float(np.sqrt(np.sum(pde_sq))),
        data_misfit_per_freq=np.sqrt(data_sq),
        pde_misfit_per_freq=np.sqrt(pde_sq),
        initial_pde_misfit=float(np.sqrt(initial_sq)) if k_before == 0 else None,
        model_warning=model_warn,
    )


def prsm_cycle(problem, state, params):
    """One outer cycle in the Algorithm order (single inner pass)."""
    return _run_cycle(problem, state, params, n_inner=1)


def inner_refine(problem, state, params):
    """Outer cycle with ``params.inner_iterations`` repetitions of the
    wavefield/dual phase followed by the same number of model/dual
    repetitions; n = 1 is exactly ``prsm_cycle``."""
    return _run_cycle(problem, state, params, n_inner=params.inner_iterations)


def wavefield_error(problem, state):
    """Stacked relative error against the reference wavefields, if known."""
    if problem.u_star is None:
        return None
    num = stacked_norm([u - us for u, us in zip(state.u, problem.u_star)])
    den = stacked_norm(problem.u_star)
    return num / den if den > 0 else num


def model_error(problem, state):
    if problem.m_star is None:
        return None
    den = np.sqrt(np.sum(problem.m_star**2))
    return float(np.sqrt(np.sum((state.m_values - problem.m_star) ** 2)) / den)
