"""Hybrid system-memory construction.

The joint state of system and jump memory is block diagonal,
rho_sm = sum_k rho(k) (x) |k><k|.  Internally the memory index is major:
the full matrix is ``(m*d, m*d)`` and block (k, q) is the contiguous
submatrix ``[k*d:(k+1)*d, q*d:(q+1)*d]``.  An extended operator built from a
system operator A acting in memory sector (k, q) is ``kron(|k><q|, A)``.

The extended generator assembled here is an ordinary Lindbladian on the
enlarged space; restricted to block-diagonal states its action reproduces
the memory-resolved feedback master equation block by block.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, PositivityError, ValidationError
from .model import FeedbackModel
from .superops import Superoperator, liouvillian

__all__ = [
    "HybridState",
    "ExtendedGenerator",
    "validate_hybrid_state",
    "embed",
    "marginals",
    "extended_hamiltonian",
    "extended_jumps",
    "extended_silent_jumps",
    "extended_liouvillian",
]

# conditional states with weight at or below this are dropped by marginals()
NEGLIGIBLE_WEIGHT = 1e-14


@dataclass(frozen=True)
class HybridState:
    """Block-diagonal joint state of system and jump memory.

    Attributes
    ----------
    labels : tuple of str
        Memory alphabet, aligned with the model's channel order.
    blocks : ndarray
        Shape ``(m, d, d)``; ``blocks[k]`` is the unnormalized conditional
        state rho(k) whose trace is the memory probability P(k).
    """

    labels: tuple
    blocks: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(str(c) for c in self.labels))
        b = np.ascontiguousarray(np.asarray(self.blocks, dtype=complex))
        if b.ndim != 3 or b.shape[1] != b.shape[2] or b.shape[0] != len(self.labels):
            raise DimensionError(f"blocks shape {b.shape} does not match labels")
        object.__setattr__(self, "blocks", b)

    @property
    def dim(self):
        return self.blocks.shape[1]

    @property
    def memory_dist(self):
        return np.einsum("kii->k", self.blocks).real

    def to_matrix(self):
        """Full ``(m*d, m*d)`` matrix with the blocks on the diagonal."""
        m, d = self.blocks.shape[0], self.dim
        full = np.zeros((m * d, m * d), dtype=complex)
        for k in range(m):
            full[k * d : (k + 1) * d, k * d : (k + 1) * d] = self.blocks[k]
        return full

    @classmethod
    def from_matrix(cls, labels, full, offblock_tol=1e-10):
        """Extract diagonal blocks from a full hybrid matrix.

        Off-diagonal memory blocks larger than ``offblock_tol`` (relative to
        the matrix scale) raise :class:`ValidationError`; pass None to skip
        the check.
        """
        labels = tuple(labels)
        full = np.asarray(full, dtype=complex)
        m = len(labels)
        if full.shape[0] % m:
            raise DimensionError(f"matrix of shape {full.shape} does not split into {m} blocks")
        d = full.shape[0] // m
        blocks = np.empty((m, d, d), dtype=complex)
        for k in range(m):
            blocks[k] = full[k * d : (k + 1) * d, k * d : (k + 1) * d]
        if offblock_tol is not None:
            resid = full.copy()
            for k in range(m):
                resid[k * d : (k + 1) * d, k * d : (k + 1) * d] = 0.0
            leak = np.abs(resid).max()
            if leak > offblock_tol * max(1.0, np.abs(full).max()):
                raise ValidationError(
                    f"matrix has off-diagonal memory blocks (max {leak:.3e})"
                )
        return cls(labels=labels, blocks=blocks)


def validate_hybrid_state(state, trace_tol=1e-10, eig_tol=1e-8):
    """Assert hermitian blocks, unit total trace, and block positivity."""
    b = state.blocks
    herm = np.abs(b - b.conj().transpose(0, 2, 1)).max()
    if herm > trace_tol * max(1.0, np.abs(b).max()):
        raise ValidationError(f"blocks are not hermitian (defect {herm:.3e})")
    total = state.memory_dist.sum()
    if abs(total - 1.0) > trace_tol:
        raise ValidationError(f"total trace {total} differs from 1 beyond {trace_tol}")
    for k, label in enumerate(state.labels):
        evals = np.linalg.eigvalsh(0.5 * (b[k] + b[k].conj().T))
        if evals.min() < -eig_tol:
            raise PositivityError(
                f"block {label!r} has eigenvalue {evals.min():.3e} below -{eig_tol}"
            )
    return state


def embed(labels, memory_dist, conditionals, trace_tol=1e-10):
    """Assemble a HybridState from P(k) and conditional states.

    Parameters
    ----------
    labels : sequence of str
        Memory alphabet.
    memory_dist : mapping or sequence
        Probabilities P(k), summing to 1 within ``trace_tol``.
    conditionals : mapping or ndarray
        Conditional density matrix per label (entries with P(k) = 0 may be
        omitted), or a single density matrix shared by all memory values.
    """
    labels = tuple(str(c) for c in labels)
    m = len(labels)
    if isinstance(memory_dist, dict):
        unknown = set(map(str, memory_dist)) - set(labels)
        if unknown:
            raise ValidationError(f"memory_dist has unknown labels {sorted(unknown)}")
        probs = np.array([float(dict(memory_dist).get(c, 0.0)) for c in labels])
    else:
        probs = np.asarray(memory_dist, dtype=float)
        if probs.shape != (m,):
            raise DimensionError(f"memory_dist shape {probs.shape}, expected ({m},)")
    if probs.min() < -trace_tol:
        raise ValidationError(f"negative memory probability {probs.min()}")
    if abs(probs.sum() - 1.0) > trace_tol:
        raise ValidationError(f"memory probabilities sum to {probs.sum()}, not 1")

    cond = {}
    if isinstance(conditionals, dict):
        cond = {str(k): np.asarray(v, dtype=complex) for k, v in conditionals.items()}
        unknown = set(cond) - set(labels)
        if unknown:
            raise ValidationError(f"conditionals keyed by unknown labels {sorted(unknown)}")
    else:
        shared = np.asarray(conditionals, dtype=complex)
        cond = {c: shared for c in labels}

    d = None
    for v in cond.values():
        d = v.shape[0]
        break
    if d is None:
        raise ValidationError("no conditional states supplied")

    blocks = np.zeros((m, d, d), dtype=complex)
    for k, label in enumerate(labels):
        if probs[k] <= 0.0:
            continue
        if label not in cond:
            raise ValidationError(f"missing conditional state for label {label!r}")
        rho = cond[label]
        if rho.shape != (d, d):
            raise DimensionError(f"conditional for {label!r} has shape {rho.shape}")
        if abs(np.trace(rho) - 1.0) > trace_tol:
            raise ValidationError(f"conditional for {label!r} is not unit trace")
        blocks[k] = probs[k] * rho
    return validate_hybrid_state(HybridState(labels=labels, blocks=blocks))


def marginals(state):
    """System marginal, memory distribution, and conditional states.

    Returns
    -------
    system : ndarray
        sum_k rho(k).
    memory_dist : ndarray
        P(k) = Tr[rho(k)].
    conditionals : dict
        label -> rho(k)/P(k); labels with P(k) <= 1e-14 are omitted.
    """
    system = state.blocks.sum(axis=0)
    probs = state.memory_dist
    conditionals = {}
    for k, label in enumerate(state.labels):
        if probs[k] > NEGLIGIBLE_WEIGHT:
            conditionals[label] = state.blocks[k] / probs[k]
    return system, probs, conditionals


def _memory_unit(m, k, q):
    e = np.zeros((m, m))
    e[k, q] = 1.0
    return e


def extended_hamiltonian(model):
    """Block-diagonal Hamiltonian sum_k |k><k| (x) H(k) on the hybrid space."""
    m, d = model.n_channels, model.dim
    full = np.zeros((m * d, m * d), dtype=complex)
    for k in range(m):
        full[k * d : (k + 1) * d, k * d : (k + 1) * d] = model.hamiltonians[k]
    return full


def extended_jumps(model):
    """All m^2 extended jump operators, k-major.

    Entry ``k * m + q`` is ``kron(|k><q|, L_k(q))``: channel k fires while
    the memory reads q and resets it to k.  Zero operators are retained so
    the indexing stays aligned with the transition table.
    """
    m, d = model.n_channels, model.dim
    ops = np.zeros((m * m, m * d, m * d), dtype=complex)
    for k in range(m):
        for q in range(m):
            ops[k * m + q] = np.kron(_memory_unit(m, k, q), model.jump_ops[k, q])
    return ops


def extended_silent_jumps(model):
    """Extended operators of the unmonitored channels, kron(|q><q|, L_s(q))."""
    m, d = model.n_channels, model.dim
    s = len(model.silent_labels)
    ops = np.zeros((s * m, m * d, m * d), dtype=complex)
    for j in range(s):
        for q in range(m):
            ops[j * m + q] = np.kron(_memory_unit(m, q, q), model.silent_ops[j, q])
    return ops


@dataclass(frozen=True)
class ExtendedGenerator:
    """Lindbladian on the hybrid space plus its building blocks.

    ``jump_ops[k * m + q]`` are the monitored extended operators (k-major);
    ``silent_ops`` collects the unmonitored ones.  ``generator`` is the full
    Lindbladian including both.
    """

    model: FeedbackModel
    hamiltonian: np.ndarray
    jump_ops: np.ndarray
    silent_ops: np.ndarray
    generator: Superoperator

    @property
    def hybrid_dim(self):
        return self.hamiltonian.shape[0]


def extended_liouvillian(model):
    """Assemble the extended generator of a feedback model.

    The result is a plain Lindbladian: commutator with the block-diagonal
    Hamiltonian plus one dissipator per extended jump operator (monitored
    and silent).  It preserves block-diagonality, and restricted to
    block-diagonal states its diagonal blocks obey the memory-resolved
    feedback master equation.
    """
    ham = extended_hamiltonian(model)
    jumps = extended_jumps(model)
    silents = extended_silent_jumps(model)
    all_ops = list(jumps) + list(silents)
    gen = liouvillian(ham, all_ops)
    return ExtendedGenerator(
        model=model,
        hamiltonian=ham,
        jump_ops=jumps,
        silent_ops=silents,
        generator=gen,
    )
