"""Full counting statistics of weighted jump transitions.

Charge is accumulated per memory transition: a jump of channel k while the
memory reads q adds the weight ``nu[k, q]``.  Channel-resolved counting
(weights independent of q) is the special case of constant rows.  All
quantities below refer to the extended generator of a feedback model; with
a trivial (no-feedback) model they reduce to standard Lindblad counting
statistics.
"""

from dataclasses import dataclass

import numpy as np
import scipy.integrate

from .dynamics import feedback_steady_state
from .errors import DimensionError, ResolventError, StencilError, ValidationError
from .superops import Superoperator, drazin, sandwich, spectral_gap, trace_vector, vec

__all__ = [
    "CountingWeights",
    "CorrelationSamples",
    "SpectrumSamples",
    "current_superop",
    "second_moment_superop",
    "average_current",
    "noise_background",
    "two_point_correlation",
    "power_spectrum",
    "steady_noise",
    "noise_by_quadrature",
    "tilted_generator",
    "tilted_cumulants",
]


@dataclass(frozen=True)
class CountingWeights:
    """Weights nu[k, q] attached to the transition (memory q -> channel k).

    Attributes
    ----------
    channels : tuple of str
        Monitored channel labels, aligned with the model.
    per_transition : ndarray
        Real ``(m, m)`` matrix; row k is the fired channel, column q the
        memory value before the jump.
    """

    channels: tuple
    per_transition: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(str(c) for c in self.channels))
        m = len(self.channels)
        w = np.ascontiguousarray(np.asarray(self.per_transition, dtype=float))
        if w.shape != (m, m):
            raise DimensionError(f"per_transition shape {w.shape}, expected ({m}, {m})")
        object.__setattr__(self, "per_transition", w)

    @property
    def channel_resolved(self):
        """True when every row is constant (weights ignore the memory)."""
        return bool(np.all(self.per_transition == self.per_transition[:, :1]))

    @property
    def per_channel(self):
        """Row weights when channel-resolved; raises otherwise."""
        if not self.channel_resolved:
            raise ValidationError("weights are transition-resolved, no per-channel form")
        return self.per_transition[:, 0].copy()

    @classmethod
    def from_channel_weights(cls, channels, weights):
        """Constant-row weights from ``{label: nu}`` or an array in channel order."""
        channels = tuple(str(c) for c in channels)
        m = len(channels)
        if isinstance(weights, dict):
            unknown = set(map(str, weights)) - set(channels)
            if unknown:
                raise ValidationError(f"weights for unknown channels {sorted(unknown)}")
            row = np.array([float(dict(weights).get(c, 0.0)) for c in channels])
        else:
            row = np.asarray(weights, dtype=float)
            if row.shape != (m,):
                raise DimensionError(f"weights shape {row.shape}, expected ({m},)")
        return cls(channels=channels, per_transition=np.tile(row[:, None], (1, m)))

    @classmethod
    def activity(cls, channels):
        """Unit weight on every channel: counts raw jump numbers."""
        return cls.from_channel_weights(channels, np.ones(len(channels)))


def _check_weights(ext, weights):
    if weights.channels != ext.model.channels:
        raise ValidationError("weights channels do not match the model")


def _weighted_jump_matrix(ext, nu):
    """sum over (k, q) of nu[k, q] * sandwich(extended jump op)."""
    m = ext.model.n_channels
    dim = ext.hybrid_dim
    mat = np.zeros((dim * dim, dim * dim), dtype=complex)
    for k in range(m):
        for q in range(m):
            w = nu[k, q]
            if w == 0.0:
                continue
            op = ext.jump_ops[k * m + q]
            if not op.any():
                continue
            mat += w * sandwich(op).matrix
    return mat


def current_superop(ext, weights):
    """Weighted jump superoperator J X = sum nu[k,q] L_kq X L_kq^dag."""
    _check_weights(ext, weights)
    return Superoperator(ext.hybrid_dim, _weighted_jump_matrix(ext, weights.per_transition))


def second_moment_superop(ext, weights):
    """Same as :func:`current_superop` with squared weights (noise background)."""
    _check_weights(ext, weights)
    return Superoperator(ext.hybrid_dim, _weighted_jump_matrix(ext, weights.per_transition**2))


def _real_scalar(z, what, tol=1e-8):
    z = complex(z)
    if abs(z.imag) > tol * max(1.0, abs(z.real)):
        raise ValidationError(f"{what} has imaginary residue {z.imag:.3e}")
    return z.real


def average_current(ext, weights, state):
    """Mean charge rate Tr[J rho] in the given hybrid state."""
    j = current_superop(ext, weights)
    return _real_scalar(np.trace(j(state.to_matrix())), "average current")


def noise_background(ext, weights, state):
    """Self-correlation background K = Tr[H2 rho], the delta weight at tau=0."""
    h2 = second_moment_superop(ext, weights)
    return _real_scalar(np.trace(h2(state.to_matrix())), "noise background")


def _resolve_stationary(ext, state):
    """Return (state, vectorized state), computing and checking stationarity."""
    if state is None:
        state = feedback_steady_state(ext.model, ext=ext)
    v = vec(state.to_matrix())
    resid = np.linalg.norm(ext.generator.matrix @ v)
    scale = max(1.0, np.abs(ext.generator.matrix).max())
    if resid > 1e-8 * scale:
        raise ValidationError(
            f"state is not stationary (||L rho|| = {resid:.3e}); "
            "the two-time formulas below assume stationarity"
        )
    return state, v


@dataclass(frozen=True)
class CorrelationSamples:
    """Smooth part of the stationary charge-current autocorrelation.

    ``values[i]`` is F(tau_i) without the singular term; ``background`` is
    the delta weight K, reported separately; ``current`` is the stationary
    mean J.
    """

    taus: np.ndarray
    values: np.ndarray
    background: float
    current: float


def two_point_correlation(ext, weights, taus, state=None):
    """Stationary autocorrelation F(tau) = K delta(tau) + smooth part.

    The smooth part is Tr[J exp(tau L) J rho_ss] - J^2, evaluated on the
    given non-negative lags.  Requires a stationary state; a non-stationary
    input raises :class:`ValidationError`.
    """
    taus = np.asarray(taus, dtype=float)
    if taus.ndim != 1 or len(taus) == 0:
        raise ValidationError("taus must be a non-empty 1-d array")
    if taus.min() < 0:
        raise ValidationError("lags must be non-negative (F is even in tau)")
    order = np.argsort(taus, kind="stable")
    state, v = _resolve_stationary(ext, state)
    jmat = current_superop(ext, weights).matrix
    t = trace_vector(ext.hybrid_dim)
    jv = jmat @ v
    current = _real_scalar(t @ jv, "average current")
    background = noise_background(ext, weights, state)
    values = np.empty(len(taus))
    y = jv
    prev = 0.0
    for idx in order:
        dt = taus[idx] - prev
        if dt > 0:
            y = ext.generator.expm(dt).matrix @ y
            prev = taus[idx]
        values[idx] = _real_scalar(t @ (jmat @ y), "correlation value") - current**2
    return CorrelationSamples(
        taus=taus, values=values, background=background, current=current
    )


@dataclass(frozen=True)
class SpectrumSamples:
    """Power spectrum samples S(omega) including the flat background K."""

    omegas: np.ndarray
    values: np.ndarray
    background: float


def power_spectrum(ext, weights, omegas, state=None):
    """Stationary noise power spectrum of the weighted counting process.

    S(omega) = K + 2 Re Tr[J (i omega - L)^{-1} Q J rho_ss] with Q the
    projector off the stationary state; at omega = 0 the resolvent is
    replaced by the Drazin inverse, so S(0) equals the zero-frequency
    noise.
    """
    omegas = np.asarray(omegas, dtype=float)
    if omegas.ndim != 1 or len(omegas) == 0:
        raise ValidationError("omegas must be a non-empty 1-d array")
    state, v = _resolve_stationary(ext, state)
    jmat = current_superop(ext, weights).matrix
    t = trace_vector(ext.hybrid_dim)
    lmat = ext.generator.matrix
    n = lmat.shape[0]
    background = noise_background(ext, weights, state)
    jv = jmat @ v
    # project off the stationary direction before the resolvent
    b = jv - v * (t @ jv)
    tj = t @ jmat
    dz = None
    values = np.empty(len(omegas))
    for i, w in enumerate(omegas):
        if w == 0.0:
            if dz is None:
                dz = drazin(ext.generator, state.to_matrix()).matrix
            values[i] = background - 2.0 * _real_scalar(
                tj @ (dz @ jv), "zero-frequency term", tol=1e-6
            )
            continue
        a = 1j * w * np.eye(n) - lmat
        try:
            x = np.linalg.solve(a, b)
        except np.linalg.LinAlgError as exc:
            raise ResolventError(f"resolvent is singular at omega={w:.6g}") from exc
        resid = np.linalg.norm(a @ x - b)
        if resid > 1e-8 * max(1.0, np.linalg.norm(b)):
            raise ResolventError(
                f"resolvent solve ill-conditioned at omega={w:.6g} (residual {resid:.3e})"
            )
        values[i] = background + 2.0 * (tj @ x).real
    return SpectrumSamples(omegas=omegas, values=values, background=background)


def steady_noise(ext, weights, state=None):
    """Zero-frequency noise D = K - 2 Tr[J L+ J rho_ss] via the Drazin inverse."""
    state, v = _resolve_stationary(ext, state)
    jmat = current_superop(ext, weights).matrix
    t = trace_vector(ext.hybrid_dim)
    dz = drazin(ext.generator, state.to_matrix()).matrix
    background = noise_background(ext, weights, state)
    d = background - 2.0 * _real_scalar(
        (t @ jmat) @ (dz @ (jmat @ v)), "zero-frequency term", tol=1e-6
    )
    if d < -1e-10:
        raise ValidationError(f"zero-frequency noise came out negative ({d:.3e})")
    return d


def noise_by_quadrature(ext, weights, state=None, t_max=None, gap_factor=40.0):
    """Verification route for the zero-frequency noise.

    Integrates the smooth correlation 2 * (Tr[J exp(tau L) J rho] - J^2)
    over [0, t_max] with adaptive quadrature and adds the background K.
    ``t_max`` defaults to ``gap_factor / spectral_gap``, far past the
    slowest decay.  Shares only the generator with :func:`steady_noise`.
    """
    state, v = _resolve_stationary(ext, state)
    if t_max is None:
        gap = spectral_gap(ext.generator)
        if gap <= 0:
            raise ValidationError("generator has no spectral gap; pass t_max explicitly")
        t_max = gap_factor / gap
    jmat = current_superop(ext, weights).matrix
    t = trace_vector(ext.hybrid_dim)
    jv = jmat @ v
    current = (t @ jv).real
    tj = t @ jmat
    # eigen-propagation keeps each integrand sample cheap
    evals, vecs = np.linalg.eig(ext.generator.matrix)
    coeff_r = np.linalg.solve(vecs, jv)
    coeff_l = tj @ vecs

    def integrand(tau):
        return ((coeff_l * np.exp(evals * tau)) @ coeff_r).real - current**2

    val, _ = scipy.integrate.quad(integrand, 0.0, t_max, limit=400)
    background = noise_background(ext, weights, state)
    return background + 2.0 * val


def tilted_generator(ext, weights, chi):
    """Counting-field generator: jump gains reweighted by exp(chi * nu[k,q])."""
    _check_weights(ext, weights)
    factors = np.exp(chi * weights.per_transition) - 1.0
    mat = ext.generator.matrix + _weighted_jump_matrix(ext, factors)
    return Superoperator(ext.hybrid_dim, mat)


def _dominant_eigenvalue(mat, min_gap, chi):
    evals = np.linalg.eigvals(mat)
    order = np.argsort(evals.real)[::-1]
    lead = evals[order[0]]
    if len(evals) > 1:
        second = evals[order[1]]
        if (lead.real - second.real) < min_gap:
            raise StencilError(
                f"dominant eigenvalue not isolated at chi={chi:.3e} "
                f"(gap {lead.real - second.real:.3e}); use a smaller chi_step"
            )
    if abs(lead.imag) > 1e-8 * max(1.0, abs(lead.real)):
        raise StencilError(
            f"dominant eigenvalue has imaginary part {lead.imag:.3e} at chi={chi:.3e}; "
            "likely an eigenvalue crossing, use a smaller chi_step"
        )
    return lead.real


def tilted_cumulants(ext, weights, chi_step=1e-4):
    """First two charge cumulant rates from the tilted generator.

    Differentiates the dominant eigenvalue of exp-tilted generators at
    chi = 0 with five-point central stencils of step ``chi_step``.  This is
    a cross-check route for :func:`average_current` and
    :func:`steady_noise`; it shares no linear-solve machinery with them.

    Returns
    -------
    (J, D) : tuple of float
        First and second scaled cumulants of the counted charge.
    """
    if chi_step <= 0:
        raise ValidationError("chi_step must be positive")
    base_evals = np.linalg.eigvals(ext.generator.matrix)
    if len(base_evals) > 1:
        order = np.argsort(base_evals.real)[::-1]
        gap0 = base_evals[order[0]].real - base_evals[order[1]].real
        min_gap = 0.5 * abs(gap0)
    else:
        min_gap = 0.0
    lam = {}
    for n in (-2, -1, 0, 1, 2):
        chi = n * chi_step
        if n == 0:
            lam[n] = _dominant_eigenvalue(ext.generator.matrix, min_gap, chi)
        else:
            lam[n] = _dominant_eigenvalue(
                tilted_generator(ext, weights, chi).matrix, min_gap, chi
            )
    h = chi_step
    current = (8.0 * (lam[1] - lam[-1]) - (lam[2] - lam[-2])) / (12.0 * h)
    noise = (-lam[2] + 16.0 * lam[1] - 30.0 * lam[0] + 16.0 * lam[-1] - lam[-2]) / (
        12.0 * h * h
    )
    return current, noise
