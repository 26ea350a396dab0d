"""Two-resonance model fits of complex S-matrix spectra.

The model is the same resolvent kernel the generator uses: 12 real
parameters, packed as

    [Re e1, Im e1, Re e2, Im e2, Re h1, Im h1, Re h2, Im h2,
     W00, W01, W10, W11]

where (e1, e2, h1, h2) describe the effective (width-carrying) matrix
directly and the four W entries are the antenna coupling block. Dissipative
channels never enter the model explicitly; their effect is already inside
the imaginary parts of the effective matrix, and a physically equivalent
dissipative block is reconstructed for the returned CouplingSet after the
fit.

The optimizer is a damped least-squares loop (Levenberg-Marquardt with
Marquardt diagonal scaling and the Nielsen lambda update) over a forward-
difference Jacobian; all 13 model evaluations of a Jacobian run as one
vectorized kernel call. The model has an exact one-parameter gauge freedom
(a common real orthogonal rotation of levels and couplings), so the
curvature matrix is singular along that direction; damping regularizes it
and the gauge is fixed after convergence, not during.

Post-fit canonicalization: gauge-fix the matrix, rotate W along, then pick
the representative with |W00| >= |W01| and W00, W11 >= 0 (column swap plus
sign flips, compensated inside H so the model output is unchanged). This
makes noiseless fits reproduce the generating parameters instead of a
random gauge copy.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    EffHamiltonian,
    eigenvalues_sorted,
    extract_tau,
    gauge_fix,
)
from .errors import (
    InsufficientSpanError,
    InvalidArgumentError,
    NonConvergenceError,
    PoleOnGridError,
    UnresolvableDoubletError,
)
from .synth import CouplingSet, _sgrid

N_PARAMS = 12
# residual value used for every row when the model hits a resolvent pole;
# large enough that the optimizer always retreats, small enough to square
POLE_SENTINEL = 1.0e6
# a start this good is accepted immediately and remaining starts are skipped
EARLY_EXIT_RMS = 1.0e-9

CHANNEL_NAMES = ("S11", "S12", "S21", "S22")


@dataclass(frozen=True)
class FitConfig:
    max_iterations: int = 200
    gradient_tolerance: float = 1e-10
    step_tolerance: float = 1e-13
    n_starts: int = 8
    damping_init: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1 or self.n_starts < 1:
            raise InvalidArgumentError("iteration and start counts must be >= 1")
        for name in ("gradient_tolerance", "step_tolerance", "damping_init"):
            if not getattr(self, name) > 0:
                raise InvalidArgumentError(f"{name} must be positive")


@dataclass
class FitResult:
    """Converged model parameters in the canonical gauge."""

    ham: EffHamiltonian
    coupling: CouplingSet
    tau: float
    residual_rms: float
    converged: bool
    covariance_proxy: np.ndarray = field(repr=False)
    iterations: int = 0

    def to_json_dict(self):
        d = self.ham.to_json_dict()
        d["W"] = [list(row) for row in self.coupling.w]
        d["tau"] = self.tau
        d["residual_rms"] = self.residual_rms
        d["converged"] = bool(self.converged)
        d["covariance_proxy"] = list(self.covariance_proxy)
        d["iterations"] = int(self.iterations)
        return d


def pack_params(ham, w_ant):
    w_ant = np.asarray(w_ant, dtype=float)
    return np.array([
        ham.e1.real, ham.e1.imag, ham.e2.real, ham.e2.imag,
        ham.h1.real, ham.h1.imag, ham.h2.real, ham.h2.imag,
        w_ant[0, 0], w_ant[0, 1], w_ant[1, 0], w_ant[1, 1],
    ])


def unpack_params(params):
    p = np.asarray(params, dtype=float)
    if p.shape != (N_PARAMS,):
        raise InvalidArgumentError(f"expected {N_PARAMS} parameters, got {p.shape}")
    ham = EffHamiltonian(complex(p[0], p[1]), complex(p[2], p[3]),
                         complex(p[4], p[5]), complex(p[6], p[7]))
    w_ant = np.array([[p[8], p[9]], [p[10], p[11]]])
    return ham, w_ant


def _channel_row_mask(mask):
    """Boolean (4,) include-flags in S11, S12, S21, S22 order."""
    if mask is None:
        return np.ones(4, dtype=bool)
    include = np.zeros(4, dtype=bool)
    for name in mask:
        label = str(name).upper()
        if label not in CHANNEL_NAMES:
            raise InvalidArgumentError(
                f"unknown channel {name!r}; expected subset of {CHANNEL_NAMES}")
        include[CHANNEL_NAMES.index(label)] = True
    if not include.any():
        raise InvalidArgumentError("channel mask excludes every entry")
    return include


def _model_entries(pmat, freqs):
    """Vectorized model for a batch of parameter rows: four (k, n) arrays."""
    col = lambda j: pmat[:, j:j + 1]
    e1 = col(0) + 1j * col(1)
    e2 = col(2) + 1j * col(3)
    h1 = col(4) + 1j * col(5)
    h2 = col(6) + 1j * col(7)
    return _sgrid(e1, e2, h1, h2, col(8), col(9), col(10), col(11), freqs)


def _residual_matrix(pmat, spec, include):
    """Stacked real residuals for a batch: shape (k, 8n).

    Per frequency the layout is [Re dS11, Im dS11, Re dS12, ..., Im dS22];
    masked channels contribute zero rows (so vector length never changes).
    """
    k = pmat.shape[0]
    n = spec.n_points
    out = np.zeros((k, n, 8))
    try:
        entries = _model_entries(pmat, spec.freqs)
    except PoleOnGridError:
        # retreat uniformly; per-row isolation is not worth the second pass
        return np.full((k, 8 * n), POLE_SENTINEL)
    data = (spec.s11, spec.s12, spec.s21, spec.s22)
    for c in range(4):
        if not include[c]:
            continue
        diff = entries[c] - data[c]
        out[:, :, 2 * c] = diff.real
        out[:, :, 2 * c + 1] = diff.imag
    return out.reshape(k, 8 * n)


def residual_vector(params, spec, mask=None):
    """Real residual vector of length 8 x gridpoints.

    At the generating parameters of a noiseless spectrum this is exactly
    zero: model and generator share one kernel. A resolvent pole on the grid
    yields the finite POLE_SENTINEL in every row instead of an exception.
    """
    p = np.asarray(params, dtype=float)
    if p.shape != (N_PARAMS,):
        raise InvalidArgumentError(f"expected {N_PARAMS} parameters, got {p.shape}")
    include = _channel_row_mask(mask)
    return _residual_matrix(p[None, :], spec, include)[0]


def _jacobian(params, spec, include, base_residual):
    """Forward-difference Jacobian, one batched kernel call for all columns."""
    steps = 1e-7 * (np.abs(params) + 1.0)
    pmat = np.repeat(params[None, :], N_PARAMS, axis=0)
    pmat[np.arange(N_PARAMS), np.arange(N_PARAMS)] += steps
    shifted = _residual_matrix(pmat, spec, include)
    return (shifted - base_residual[None, :]).T / steps[None, :]


def _levenberg_marquardt(p0, spec, include, cfg):
    """Damped least squares; cost is monotone over accepted steps."""
    p = np.array(p0, dtype=float)
    r = _residual_matrix(p[None, :], spec, include)[0]
    cost = 0.5 * float(r @ r)
    costs = [cost]
    lam = cfg.damping_init
    nu = 2.0
    converged = False
    it = 0
    jtj_diag = None
    for it in range(1, cfg.max_iterations + 1):
        jac = _jacobian(p, spec, include, r)
        jtj = jac.T @ jac
        jtj_diag = np.diag(jtj).copy()
        grad = jac.T @ r
        if np.max(np.abs(grad)) < cfg.gradient_tolerance:
            converged = True
            break
        scale = np.maximum(jtj_diag, 1e-12)
        accepted = False
        while lam < 1e14:
            try:
                step = np.linalg.solve(jtj + lam * np.diag(scale), -grad)
            except np.linalg.LinAlgError:
                lam *= nu
                nu *= 2.0
                continue
            if np.linalg.norm(step) < cfg.step_tolerance * (
                    np.linalg.norm(p) + cfg.step_tolerance):
                converged = True
                accepted = True
                break
            trial = p + step
            r_trial = _residual_matrix(trial[None, :], spec, include)[0]
            cost_trial = 0.5 * float(r_trial @ r_trial)
            predicted = 0.5 * float(step @ (lam * scale * step - grad))
            rho = (cost - cost_trial) / predicted if predicted > 0 else -1.0
            if cost_trial < cost and rho > 0:
                p, r, cost = trial, r_trial, cost_trial
                costs.append(cost)
                lam *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
                nu = 2.0
                accepted = True
                break
            lam *= nu
            nu *= 2.0
        if not accepted or converged:
            break
    rms = math.sqrt(2.0 * cost / r.size)
    return p, rms, converged, it, jtj_diag, costs


# -------------------------------------------------------------------- seeding


def _half_depth_width(q, k, baseline, step):
    """Full width of dip k at half depth, by walking the samples outward.

    Returns (width, clipped) where clipped means the walk ran off both grid
    edges without recovering: the window does not contain the resonance.
    """
    target = 0.5 * (q[k] + baseline)
    left = k
    while left > 0 and q[left] < target:
        left -= 1
    right = k
    while right < q.size - 1 and q[right] < target:
        right += 1
    clipped = (left == 0 and q[0] < target) and (
        right == q.size - 1 and q[-1] < target)
    return max(right - left, 1) * step, clipped


def seed_initializer(spec):
    """Initial parameter vector from dip picking on the reflection spectra.

    Finds the two deepest separated minima of (|S11|^2 + |S22|^2)/2, reads
    positions and half-depth widths, inverts the one-level undercoupled
    depth formula for the diagonal couplings, and seeds the off-diagonal
    structure at 10% of the level spacing.
    """
    q = 0.5 * (np.abs(spec.s11) ** 2 + np.abs(spec.s22) ** 2)
    n = q.size
    if n < 16:
        raise UnresolvableDoubletError(f"{n} samples are too few to seed from")
    step = (spec.freqs[-1] - spec.freqs[0]) / (n - 1)
    baseline = float(np.median(q))
    if baseline < 0.6:
        # a window that covers the doublet always holds off-resonant samples
        # near unit reflection; a depressed median means the resonances
        # extend past the grid edges
        raise InsufficientSpanError(
            f"median reflection {baseline:.3f} shows no off-resonant "
            f"baseline inside the window; widen the grid")
    k1 = int(np.argmin(q))
    depth1 = baseline - q[k1]
    if depth1 < 0.02:
        raise UnresolvableDoubletError(
            f"deepest dip ({depth1:.4f} below baseline) is too shallow")
    span = float(spec.freqs[-1] - spec.freqs[0])
    width1, clipped1 = _half_depth_width(q, k1, baseline, step)
    if clipped1:
        raise InsufficientSpanError(
            f"the resonance never recovers to half depth inside the "
            f"{span:.3g} MHz window; widen the grid")
    # overlapping dips inflate the walk estimate; keep the start sane
    width1 = min(width1, 0.25 * span)

    # exclude a 4-width window around the first dip, then look again
    half_window = max(int(round(2.0 * width1 / step)), 2)
    masked = q.copy()
    masked[max(0, k1 - half_window):k1 + half_window + 1] = np.inf
    k2 = int(np.argmin(masked))
    depth2 = baseline - masked[k2] if np.isfinite(masked[k2]) else -np.inf

    if depth2 >= 0.02:
        width2 = min(_half_depth_width(q, k2, baseline, step)[0], 0.25 * span)
        dips = sorted([(spec.freqs[k1], width1, k1), (spec.freqs[k2], width2, k2)])
    else:
        # merged doublet: split the single dip symmetrically
        f0, w0 = spec.freqs[k1], width1
        dips = [(f0 - w0 / 4, w0 / 2, k1), (f0 + w0 / 4, w0 / 2, k1)]

    (f_lo, w_lo, k_lo), (f_hi, w_hi, k_hi) = dips
    e1 = complex(f_lo, -0.5 * w_lo)
    e2 = complex(f_hi, -0.5 * w_hi)

    # undercoupled inversion of the one-level dip depth, per antenna channel
    def antenna_w(refl, k, gamma_tot):
        depth = float(np.clip(1.0 - abs(refl[k]) ** 2, 0.0, 1.0))
        gamma_a = 0.5 * gamma_tot * (1.0 - math.sqrt(1.0 - depth))
        return math.sqrt(max(gamma_a, 1e-6) / (2.0 * math.pi))

    w00 = antenna_w(spec.s11, k_lo, w_lo)
    w11 = antenna_w(spec.s22, k_hi, w_hi)
    w_off = 0.05 * 0.5 * (w00 + w11)
    h1 = 0.1 * abs(e1 - e2)
    return np.array([
        e1.real, e1.imag, e2.real, e2.imag,
        h1, 0.0, 0.0, 0.0,
        w00, w_off, w_off, w11,
    ])


# ----------------------------------------------------------- canonical gauge


def _conjugate_levels(ham, w_ant, kind):
    """Apply one of the discrete level symmetries, compensating in W."""
    if kind == "swap":           # sigma_x conjugation: relabel the two levels
        ham2 = EffHamiltonian(ham.e2, ham.e1, ham.h1, -ham.h2)
        w2 = w_ant[:, ::-1].copy()
    elif kind == "flip0":        # diag(-1, 1) conjugation: level-1 sign
        ham2 = EffHamiltonian(ham.e1, ham.e2, -ham.h1, -ham.h2)
        w2 = w_ant.copy()
        w2[:, 0] = -w2[:, 0]
    elif kind == "flip1":        # diag(1, -1) conjugation: level-2 sign
        ham2 = EffHamiltonian(ham.e1, ham.e2, -ham.h1, -ham.h2)
        w2 = w_ant.copy()
        w2[:, 1] = -w2[:, 1]
    else:
        raise ValueError(kind)
    return ham2, w2


def _canonicalize(ham, w_ant):
    """Gauge-fix and pick the discrete representative; S is unchanged.

    Order matters: the continuous rotation first, then |W00| >= |W01| via a
    level swap, then nonnegative diagonal couplings via column sign flips.
    A fitted h2 at numerical-noise level would hand gauge_fix a 0/0 angle,
    so such matrices are treated as already gauge-fixed.
    """
    if abs(ham.h2) < 1e-9 * max(abs(ham.h1), abs(ham.h3)):
        fixed, w = ham, np.array(w_ant, dtype=float)
    else:
        fixed, transform = gauge_fix(ham)
        o = transform.matrix.real
        w = np.asarray(w_ant, dtype=float) @ o.T
    if abs(w[0, 0]) < abs(w[0, 1]):
        fixed, w = _conjugate_levels(fixed, w, "swap")
    if w[0, 0] < 0:
        fixed, w = _conjugate_levels(fixed, w, "flip0")
    if w[1, 1] < 0:
        fixed, w = _conjugate_levels(fixed, w, "flip1")
    return fixed, w


def _reconstruct_coupling(ham, w_ant):
    """Rebuild a four-channel CouplingSet consistent with the fitted widths.

    The total width matrix pi T = -Im(H) (as a real symmetric form) minus
    the antenna contribution leaves a dissipative block; its symmetric PSD
    square root provides two fictitious channels. Slightly negative
    eigenvalues (fit noise) are clipped to zero.
    """
    t_total = np.array([
        [-ham.e1.imag / math.pi, -ham.h1.imag / math.pi],
        [-ham.h1.imag / math.pi, -ham.e2.imag / math.pi],
    ])
    t_diss = t_total - w_ant.T @ w_ant
    t_diss = 0.5 * (t_diss + t_diss.T)
    evals, vecs = np.linalg.eigh(t_diss)
    evals = np.clip(evals, 0.0, None)
    diss = vecs @ np.diag(np.sqrt(evals)) @ vecs.T
    return CouplingSet(np.vstack([w_ant, diss]))


# ------------------------------------------------------------------ main fit


def _scatter_starts(p0, n_starts, rng):
    """The seed itself plus randomized variations around it.

    Positions move additively by fractions of the level spacing, widths and
    couplings rescale log-uniformly; entries seeded at zero get a small
    additive kick so no search direction starts out frozen.
    """
    starts = [np.array(p0, dtype=float)]
    spacing = max(abs(p0[0] - p0[2]), -4.0 * p0[1], -4.0 * p0[3], 0.5)
    w_scale = 0.25 * (abs(p0[8]) + abs(p0[11]))
    for _ in range(n_starts - 1):
        q = np.array(p0, dtype=float)
        q[0] += rng.normal(0.0, 0.25 * spacing)
        q[2] += rng.normal(0.0, 0.25 * spacing)
        q[[1, 3]] *= np.exp(rng.uniform(-0.7, 0.7, size=2))
        q[4:8] += rng.normal(0.0, 0.15 * spacing, size=4)
        q[8:12] *= np.exp(rng.uniform(-0.35, 0.35, size=4))
        q[8:12] += rng.normal(0.0, 0.05 * w_scale, size=4)
        starts.append(q)
    return starts


def fit_spectrum(spec, cfg=None, init=None, mask=None):
    """Fit the two-level model to a spectrum.

    init may be a FitResult or a packed parameter vector; without it the
    dip-picking seed is used. Raises InsufficientSpanError when the grid
    does not cover 4x both seeded widths, NonConvergenceError (carrying the
    best residual) when no start converges.
    """
    cfg = cfg or FitConfig()
    include = _channel_row_mask(mask)
    if init is None:
        p0 = seed_initializer(spec)
    elif isinstance(init, FitResult):
        p0 = pack_params(init.ham, init.coupling.antenna)
    else:
        p0 = np.asarray(init, dtype=float)
        if p0.shape != (N_PARAMS,):
            raise InvalidArgumentError(
                f"init must have {N_PARAMS} entries, got {p0.shape}")

    span = float(spec.freqs[-1] - spec.freqs[0])
    widths = (-2.0 * p0[1], -2.0 * p0[3])
    if span < 4.0 * max(*widths, 0.0):
        raise InsufficientSpanError(
            f"grid span {span:.3g} MHz does not cover 4x the seeded widths "
            f"{widths[0]:.3g}, {widths[1]:.3g} MHz")

    rng = np.random.default_rng(cfg.seed)
    best = None
    for start in _scatter_starts(p0, cfg.n_starts, rng):
        p, rms, ok, iters, jtj_diag, _ = _levenberg_marquardt(
            start, spec, include, cfg)
        if best is None or (ok and not best[2]) or (
                ok == best[2] and rms < best[1]):
            best = (p, rms, ok, iters, jtj_diag)
        if best[2] and best[1] < EARLY_EXIT_RMS:
            break

    p, rms, ok, iters, jtj_diag = best
    if not ok:
        raise NonConvergenceError(
            f"no start converged within {cfg.max_iterations} iterations "
            f"(best residual rms {rms:.3e})", best_rms=rms)

    ham_raw, w_raw = unpack_params(p)
    ham, w_ant = _canonicalize(ham_raw, w_raw)
    return FitResult(
        ham=ham,
        coupling=_reconstruct_coupling(ham, w_ant),
        tau=extract_tau(ham),
        residual_rms=rms,
        converged=True,
        covariance_proxy=jtj_diag,
        iterations=iters,
    )


def fitted_eigenvalues(result):
    """Eigenvalues of the fitted matrix in reporting order."""
    return eigenvalues_sorted(result.ham)
