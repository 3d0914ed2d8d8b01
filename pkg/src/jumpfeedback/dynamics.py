"""Deterministic propagation of the joint system-memory state.

Two interchangeable routes are provided: direct integration of the
memory-resolved master equation (one coupled block per memory value), and
exponentiation of the extended Lindbladian on the hybrid space.  Both
preserve block-diagonality, hermiticity, and total trace; they agree to the
integration tolerance and are tested against each other.
"""

from dataclasses import dataclass

import numpy as np
import scipy.integrate

from .errors import IntegrationError, PositivityError, ValidationError
from .hybrid import HybridState, extended_liouvillian
from .superops import steady_state, vec, unvec

__all__ = [
    "EvolutionResult",
    "evolve_memory_resolved",
    "evolve_extended",
    "feedback_steady_state",
    "memory_distribution_rate",
]

POSITIVITY_ABORT = 1e-6


@dataclass(frozen=True)
class EvolutionResult:
    """Time-ordered snapshots of a hybrid evolution.

    ``states[i]`` is the HybridState at ``times[i]``; ``method`` records
    which route produced it ("memory-resolved-ode" or
    "extended-exponential").
    """

    times: np.ndarray
    states: tuple
    method: str


def _check_times(times):
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or len(times) == 0:
        raise ValidationError("times must be a non-empty 1-d array")
    if np.any(np.diff(times) < 0):
        raise ValidationError("times must be non-decreasing")
    return times


def _check_blocks_positive(blocks, labels, t):
    for k, label in enumerate(labels):
        b = 0.5 * (blocks[k] + blocks[k].conj().T)
        low = np.linalg.eigvalsh(b).min()
        if low < -POSITIVITY_ABORT:
            raise PositivityError(
                f"block {label!r} reached eigenvalue {low:.3e} at t={t:.6g}; "
                "the model or integration tolerances are inconsistent"
            )


def memory_resolved_rhs(model):
    """Right-hand side of the memory-resolved feedback master equation.

    Returns a function mapping stacked blocks ``(m, d, d)`` to their time
    derivative: for each memory value k,

        d rho(k)/dt = -i[H(k), rho(k)] - (1/2){W(k), rho(k)}
                      + sum_q L_k(q) rho(q) L_k(q)^dag
                      + sum_s S(k) rho(k) S(k)^dag,

    with W(k) the total loss operator at memory k (silent channels
    included).  When the model is hamiltonian-only the gain term contracts
    the pre-summed marginal, which is algebraically identical.
    """
    m = model.n_channels
    hams = model.hamiltonians
    losses = np.stack([model.loss_operator(q) for q in range(m)])
    jumps = model.jump_ops
    silents = model.silent_ops
    ham_only = model.hamiltonian_only and len(model.silent_labels) == 0

    def rhs(blocks):
        out = np.einsum("kab,kbc->kac", -1j * hams, blocks)
        out += np.einsum("kab,kcb->kac", 1j * blocks, hams.conj())
        out -= 0.5 * (
            np.einsum("kab,kbc->kac", losses, blocks)
            + np.einsum("kab,kbc->kac", blocks, losses)
        )
        if ham_only:
            total = blocks.sum(axis=0)
            ops = jumps[:, 0]
            out += np.einsum("kab,bc,kdc->kad", ops, total, ops.conj())
        else:
            out += np.einsum("kqab,qbc,kqdc->kad", jumps, blocks, jumps.conj())
            if len(silents):
                out += np.einsum("skab,kbc,skdc->kad", silents, blocks, silents.conj())
        return out

    return rhs


def evolve_memory_resolved(model, state0, times, rtol=1e-10, atol=1e-12):
    """Integrate the memory-resolved master equation with an adaptive RK.

    Parameters
    ----------
    model : FeedbackModel
    state0 : HybridState
        State at ``times[0]``.
    times : array_like
        Non-decreasing output times.
    rtol, atol : float
        Tolerances passed to the DOP853 integrator.

    Returns
    -------
    EvolutionResult
    """
    times = _check_times(times)
    if state0.labels != model.channels:
        raise ValidationError("state labels do not match model channels")
    m, d = model.n_channels, model.dim
    rhs = memory_resolved_rhs(model)

    def f(_, y):
        return rhs(y.reshape(m, d, d)).ravel()

    y0 = state0.blocks.astype(complex).ravel()
    if times[-1] == times[0]:
        states = tuple(HybridState(state0.labels, y0.reshape(m, d, d).copy()) for _ in times)
        return EvolutionResult(times=times, states=states, method="memory-resolved-ode")
    sol = scipy.integrate.solve_ivp(
        f,
        (times[0], times[-1]),
        y0,
        t_eval=times,
        method="DOP853",
        rtol=rtol,
        atol=atol,
    )
    if not sol.success:
        raise IntegrationError(f"memory-resolved integration failed: {sol.message}")
    states = []
    for i, t in enumerate(times):
        blocks = sol.y[:, i].reshape(m, d, d)
        _check_blocks_positive(blocks, state0.labels, t)
        states.append(HybridState(state0.labels, blocks))
    return EvolutionResult(times=times, states=tuple(states), method="memory-resolved-ode")


def evolve_extended(model, state0, times, ext=None):
    """Propagate with matrix exponentials of the extended Lindbladian.

    Repeated step sizes reuse the cached propagator, so uniform grids cost
    a single exponential.  ``ext`` allows passing a prebuilt
    ExtendedGenerator to skip reassembly.
    """
    times = _check_times(times)
    if state0.labels != model.channels:
        raise ValidationError("state labels do not match model channels")
    if ext is None:
        ext = extended_liouvillian(model)
    gen = ext.generator
    v = vec(state0.to_matrix())
    propagators = {}
    states = [state0]
    for i in range(1, len(times)):
        dt = times[i] - times[i - 1]
        if dt not in propagators:
            propagators[dt] = gen.expm(dt).matrix
        v = propagators[dt] @ v
        full = unvec(v, gen.dim)
        state = HybridState.from_matrix(state0.labels, full, offblock_tol=1e-10)
        _check_blocks_positive(state.blocks, state.labels, times[i])
        states.append(state)
    return EvolutionResult(times=times, states=tuple(states), method="extended-exponential")


def feedback_steady_state(model, ext=None):
    """Unique stationary HybridState of the extended Lindbladian.

    Raises :class:`DegenerateSteadyStateError` when the kernel is not
    one-dimensional (e.g. disconnected memory sectors).
    """
    if ext is None:
        ext = extended_liouvillian(model)
    full = steady_state(ext.generator)
    state = HybridState.from_matrix(model.channels, full, offblock_tol=1e-8)
    # hermitize blocks; steady_state already normalized and checked positivity
    blocks = 0.5 * (state.blocks + state.blocks.conj().transpose(0, 2, 1))
    return HybridState(model.channels, blocks)


def memory_distribution_rate(model, state):
    """Instantaneous net rate dP(k)/dt of the memory distribution.

    Gain collects jumps of channel k fired from every other memory sector;
    loss collects jumps of any other channel fired inside sector k.  Silent
    channels and self-transitions (q = k) cancel exactly and do not
    contribute.
    """
    if state.labels != model.channels:
        raise ValidationError("state labels do not match model channels")
    m = model.n_channels
    blocks = state.blocks
    # rates[k, q] = Tr[L_k(q) rho(q) L_k(q)^dag]
    rates = np.einsum("kqab,qbc,kqac->kq", model.jump_ops, blocks, model.jump_ops.conj()).real
    np.fill_diagonal(rates, 0.0)
    return rates.sum(axis=1) - rates.sum(axis=0)
