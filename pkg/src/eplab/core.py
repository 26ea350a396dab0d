"""Exact algebra of the 2x2 non-Hermitian effective Hamiltonian.

The central object is

    H = ((e1 + e2)/2) I + sigma . h,    h = (h1, h2, h3),  h3 = (e1 - e2)/2,

with complex entries in MHz, i.e. the dense form

    H = [[e1, h1 - i*h2], [h1 + i*h2, e2]].

Eigenvalues are tr/2 +- sqrt(D) with the radicand split into the three
basis-invariant pieces

    D = |Re h|^2 - |Im h|^2 + 2i (Re h . Im h).

D = 0 with h != 0 marks an exceptional point (EP): both eigenvalues and
eigenvectors coalesce and the matrix becomes defective (a Jordan block).

Conventions:
  * sqrt branch: principal (Re >= 0), ties broken toward Im >= 0; E1 carries
    the "+" branch. Continuity tracking around branch points lives in epscan.
  * eigenvalue shape E = f - i*Gamma/2 with Gamma >= 0 for a dissipative
    matrix; width_offset recenters the trace on the real axis.
  * basis changes are conjugations M -> U M U^dagger with either a real plane
    rotation O(phi) = [[cos, sin], [-sin, cos]] or a phase twist
    U(theta) = diag(e^{i theta}, e^{-i theta}). Both act on h as rotations and
    therefore preserve (|Re h|^2, |Im h|^2, Re h . Im h).

All types are immutable values and all operations are pure functions; they
are safe to call from any number of workers.
"""

import cmath
import math
import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import (
    DegenerateGaugeError,
    DegenerateRotationError,
    InvalidArgumentError,
    NotGaugeFixedError,
    NotOnPTCurveError,
    SingularRatioError,
)

# Default tolerances (MHz^2 scales are relative to reh2+imh2).
EPS_CROSS = 1e-6     # relative |Re h . Im h| gate for the symmetrizing step
EPS_PT = 1e-8        # absolute [MHz] target for the normal-form residual
RATIO_TOL = 1e-6     # allowed deviation of |off-diagonal ratio| from 1

SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)


def _require_finite(**values):
    for name, z in values.items():
        z = complex(z)
        if not (math.isfinite(z.real) and math.isfinite(z.imag)):
            raise InvalidArgumentError(f"{name} must be finite, got {z!r}")


@dataclass(frozen=True)
class EffHamiltonian:
    """2x2 effective Hamiltonian in Pauli-vector form.

    Only e1, e2, h1, h2 are stored; h3 = (e1 - e2)/2 is derived on access so
    the redundancy constraint can never be violated.
    """

    e1: complex
    e2: complex
    h1: complex
    h2: complex

    def __post_init__(self):
        _require_finite(e1=self.e1, e2=self.e2, h1=self.h1, h2=self.h2)

    @property
    def h3(self):
        return 0.5 * (self.e1 - self.e2)

    @property
    def h(self):
        """Pauli vector (h1, h2, h3) as a complex ndarray."""
        return np.array([self.h1, self.h2, self.h3], dtype=complex)

    @property
    def matrix(self):
        return np.array(
            [[self.e1, self.h1 - 1j * self.h2],
             [self.h1 + 1j * self.h2, self.e2]],
            dtype=complex,
        )

    def to_pauli(self):
        return self.e1, self.e2, self.h1, self.h2

    def to_json_dict(self):
        return {
            "e1": [self.e1.real, self.e1.imag],
            "e2": [self.e2.real, self.e2.imag],
            "h1": [self.h1.real, self.h1.imag],
            "h2": [self.h2.real, self.h2.imag],
        }

    @staticmethod
    def from_json_dict(d):
        return EffHamiltonian(
            e1=complex(d["e1"][0], d["e1"][1]),
            e2=complex(d["e2"][0], d["e2"][1]),
            h1=complex(d["h1"][0], d["h1"][1]),
            h2=complex(d["h2"][0], d["h2"][1]),
        )


def from_pauli(e1, e2, h1, h2):
    """Build an EffHamiltonian from its Pauli-vector components."""
    return EffHamiltonian(complex(e1), complex(e2), complex(h1), complex(h2))


def from_matrix(m):
    """Inverse of EffHamiltonian.matrix (exact for e1, e2; h to rounding)."""
    m = np.asarray(m, dtype=complex)
    if m.shape != (2, 2):
        raise InvalidArgumentError(f"expected a 2x2 matrix, got shape {m.shape}")
    h1 = 0.5 * (m[1, 0] + m[0, 1])
    h2 = -0.5j * (m[1, 0] - m[0, 1])
    return EffHamiltonian(complex(m[0, 0]), complex(m[1, 1]), complex(h1), complex(h2))


@dataclass(frozen=True)
class EigenPair:
    """Eigenvalues E_j = f_j - i*Gamma_j/2, E1 on the '+' sqrt branch."""

    E1: complex
    E2: complex

    @property
    def f1(self):
        return self.E1.real

    @property
    def f2(self):
        return self.E2.real

    @property
    def gamma1(self):
        return -2.0 * self.E1.imag

    @property
    def gamma2(self):
        return -2.0 * self.E2.imag


@dataclass(frozen=True)
class Radicand:
    """Basis-invariant decomposition of the eigenvalue radicand [MHz^2]."""

    reh2: float
    imh2: float
    cross: float

    @property
    def d(self):
        return complex(self.reh2 - self.imh2, 2.0 * self.cross)


class TransformKind(Enum):
    GAUGE_O0 = "gauge_o0"   # plane rotation fixing the off-diagonal ratio
    TAU_U = "tau_u"         # phase twist removing the ratio phase
    ROT_O = "rot_o"         # plane rotation onto the symmetric normal form


@dataclass(frozen=True)
class BasisTransform:
    """A conjugation M -> U M U^dagger.

    angle is Phi0 for GAUGE_O0, tau/2 for TAU_U and Phi for ROT_O.
    """

    kind: TransformKind
    angle: float

    @property
    def matrix(self):
        if self.kind is TransformKind.TAU_U:
            return np.array(
                [[cmath.exp(1j * self.angle), 0.0],
                 [0.0, cmath.exp(-1j * self.angle)]],
                dtype=complex,
            )
        c, s = math.cos(self.angle), math.sin(self.angle)
        return np.array([[c, s], [-s, c]], dtype=complex)

    def apply(self, ham):
        u = self.matrix
        return from_matrix(u @ ham.matrix @ u.conj().T)

    def inverse(self):
        return BasisTransform(self.kind, -self.angle)


def eigenvalues(ham):
    """Eigenvalues via the closed form tr/2 +- sqrt(D).

    The square root is principal (Re >= 0); an exactly imaginary result is
    normalized to Im >= 0 so that labeling is deterministic.
    """
    mean = 0.5 * (ham.e1 + ham.e2)
    h1, h2, h3 = ham.h1, ham.h2, ham.h3
    d = h1 * h1 + h2 * h2 + h3 * h3
    s = cmath.sqrt(d)
    if s.real == 0.0 and s.imag < 0.0:
        s = -s
    return EigenPair(mean + s, mean - s)


def eigenvalues_sorted(ham):
    """Eigenvalues in reporting order: ascending real part, then descending
    imaginary part (narrower resonance first on an exact position tie)."""
    pair = eigenvalues(ham)
    vals = sorted((pair.E1, pair.E2), key=lambda z: (z.real, -z.imag))
    return vals[0], vals[1]


def radicand(ham):
    """Split D into |Re h|^2, |Im h|^2 and Re h . Im h."""
    r1, r2, r3 = ham.h1.real, ham.h2.real, ham.h3.real
    i1, i2, i3 = ham.h1.imag, ham.h2.imag, ham.h3.imag
    return Radicand(
        reh2=r1 * r1 + r2 * r2 + r3 * r3,
        imh2=i1 * i1 + i2 * i2 + i3 * i3,
        cross=r1 * i1 + r2 * i2 + r3 * i3,
    )


def width_offset(ham, offset=None):
    """Shift H by +i*offset*I so the trace becomes real.

    offset defaults to the local (Gamma1+Gamma2)/4 of this matrix; pass a
    fixed value to apply one global shift along a whole curve. h (and hence
    the radicand) is untouched; only the eigenvalue centroid moves.
    """
    if offset is None:
        offset = -0.5 * (ham.e1.imag + ham.e2.imag)   # = (Gamma1+Gamma2)/4
    pair = eigenvalues(ham)
    tol = 1e-12 * max(1.0, abs(pair.E1), abs(pair.E2))
    if pair.E1.imag > tol or pair.E2.imag > tol:
        warnings.warn(
            "width_offset applied to a matrix with amplifying eigenvalues "
            "(positive imaginary part); dissipative convention violated",
            RuntimeWarning,
            stacklevel=2,
        )
    shift = 1j * offset
    return EffHamiltonian(ham.e1 + shift, ham.e2 + shift, ham.h1, ham.h2)


def _fold_half_pi(t):
    # fold an atan2 result into (-pi/2, pi/2]; the pi ambiguity of tan(2x)
    if t > 0.5 * math.pi:
        t -= math.pi
    elif t <= -0.5 * math.pi:
        t += math.pi
    return t


def gauge_fix(ham):
    """Rotate to the basis where the off-diagonal ratio is unimodular.

    Returns (rotated H, transform). The rotation mixes (h1, h3) and leaves
    h2 alone; the angle solves Im(h1' conj(h2)) = 0, which is equivalent to
    |h1 + i*h2| = |h1 - i*h2|.

    Raises
    ------
    DegenerateGaugeError
        If h is a complex multiple of a real vector (every angle works, so
        none is defined).
    """
    if ham.h2 == 0:
        return ham, BasisTransform(TransformKind.GAUGE_O0, 0.0)
    a = (ham.h1 * ham.h2.conjugate()).imag
    b = (ham.h3 * ham.h2.conjugate()).imag
    if a == 0.0 and b == 0.0:
        raise DegenerateGaugeError(
            "gauge angle undefined: Im(h1/h2) and Im(h3/h2) both vanish"
        )
    two_phi = _fold_half_pi(math.atan2(a, b))
    transform = BasisTransform(TransformKind.GAUGE_O0, 0.5 * two_phi)
    return transform.apply(ham), transform


def extract_tau(ham, ratio_tol=RATIO_TOL):
    """Half phase of the off-diagonal ratio, in (-pi/2, pi/2).

    The input must already be gauge fixed (ratio modulus within ratio_tol
    of 1). tau = +-pi/4 is maximal time-reversal violation; h2 = 0 gives 0.
    """
    num = ham.h1 + 1j * ham.h2
    den = ham.h1 - 1j * ham.h2
    if den == 0:
        raise SingularRatioError("off-diagonal ratio denominator h1 - i*h2 is zero")
    if ham.h2 == 0:
        return 0.0
    ratio = num / den
    if abs(abs(ratio) - 1.0) > ratio_tol:
        raise NotGaugeFixedError(
            f"|ratio| = {abs(ratio):.9g} deviates from 1 beyond {ratio_tol:g}; "
            "call gauge_fix first"
        )
    if ratio.imag == 0.0 and ratio.real < 0.0:
        raise SingularRatioError("ratio on the negative real axis: tau at the "
                                 "excluded boundary +-pi/2")
    return 0.5 * cmath.phase(ratio)


@dataclass(frozen=True)
class PTNormalForm:
    """Entries of the symmetric normal form [[A+iB, C+iD], [C-iD, A-iB]].

    residual is the largest entrywise distance of the actually transformed
    matrix from that pattern (0 means the pattern holds exactly).
    """

    a: float
    b: float
    c: float
    dpt: float
    residual: float

    @property
    def matrix(self):
        return np.array(
            [[complex(self.a, self.b), complex(self.c, self.dpt)],
             [complex(self.c, -self.dpt), complex(self.a, -self.b)]],
            dtype=complex,
        )

    @property
    def eigenvalues(self):
        """A +- sqrt(C^2 + D^2 - B^2): real or a conjugate pair."""
        s = cmath.sqrt(complex(self.c * self.c + self.dpt * self.dpt
                               - self.b * self.b, 0.0))
        if s.real == 0.0 and s.imag < 0.0:
            s = -s
        return (self.a + s, self.a - s)

    @property
    def eigenvalues_real(self):
        """True in the unbroken phase: C^2 + D^2 >= B^2."""
        return self.c * self.c + self.dpt * self.dpt >= self.b * self.b

    @property
    def phase(self):
        return "real" if self.eigenvalues_real else "complex-conjugate"


def _symmetrizing_angle(m):
    # Angle 2*Phi minimizing (Im h1')^2 + (Re h3')^2 under the (h1, h3)
    # rotation; on the curve Re h . Im h = 0 the minimum is an exact zero.
    r1, i1 = m.h1.real, m.h1.imag
    r3, i3 = m.h3.real, m.h3.imag
    alpha = i1 * i1 + r3 * r3
    beta = i3 * i3 + r1 * r1
    gam = r1 * r3 - i1 * i3
    if alpha == beta and gam == 0.0:
        return 0.0
    return 0.5 * math.atan2(-2.0 * gam, -(alpha - beta))


def to_pt_form(ham_shifted, tau, eps_cross=EPS_CROSS):
    """Transform a width-shifted, gauge-fixed H onto the symmetric pattern.

    Applies the phase twist U(tau/2) followed by a plane rotation O(Phi) and
    reads off (A, B, C, D) plus the residual deviation from the pattern.

    Parameters
    ----------
    ham_shifted : EffHamiltonian
        Output of width_offset on a gauge-fixed matrix.
    tau : float
        Value from extract_tau of the same matrix.
    eps_cross : float
        Relative tolerance on |Re h . Im h| / (|Re h|^2 + |Im h|^2).

    Returns
    -------
    (PTNormalForm, BasisTransform, BasisTransform)
        The form plus the U (angle tau/2) and O (angle Phi) transforms,
        in application order.
    """
    rad = radicand(ham_shifted)
    scale = rad.reh2 + rad.imh2
    if abs(rad.cross) > eps_cross * scale:
        raise NotOnPTCurveError(
            f"|Re h . Im h| = {abs(rad.cross):.3e} exceeds "
            f"{eps_cross:g} * (reh2+imh2) = {eps_cross * scale:.3e}"
        )

    u = BasisTransform(TransformKind.TAU_U, 0.5 * tau)
    m1 = u.apply(ham_shifted)
    two_phi = _symmetrizing_angle(m1)
    o = BasisTransform(TransformKind.ROT_O, 0.5 * two_phi)
    m2 = o.apply(m1)

    # Unreachable through the minimizing angle; kept as a contract guard.
    hscale = max(abs(m1.h1), abs(m1.h3), 1e-300)
    if (math.sin(two_phi) == 0.0 and abs(m1.h1.imag) > 1e-9 * hscale) or (
            math.cos(two_phi) == 0.0 and abs(m1.h1.real) > 1e-9 * hscale):
        raise DegenerateRotationError(
            f"rotation angle 2*Phi = {two_phi!r} inconsistent with h1 = {m1.h1!r}"
        )

    mat = m2.matrix
    apb = 0.5 * (mat[0, 0] + mat[1, 1].conjugate())   # A + iB
    cpd = 0.5 * (mat[0, 1] + mat[1, 0].conjugate())   # C + iD
    residual = 0.5 * max(
        abs(mat[0, 0] - mat[1, 1].conjugate()),
        abs(mat[0, 1] - mat[1, 0].conjugate()),
    )
    form = PTNormalForm(a=apb.real, b=apb.imag, c=cpd.real, dpt=cpd.imag,
                        residual=residual)
    return form, u, o


def pt_commutator_norm(m):
    """Max-entry norm of the antilinear commutator with sigma_x * conj.

    The antilinear map v -> sigma_x conj(v) commutes with M exactly when
    sigma_x conj(M) == M sigma_x; the norm is 0 for any matrix of the
    symmetric normal-form pattern.
    """
    m = np.asarray(m, dtype=complex)
    k = SIGMA_X @ np.conj(m) - m @ SIGMA_X
    return float(np.max(np.abs(k)))


def pt_eigenvector_alignment(m):
    """Per-eigenvector overlap |<v, sigma_x conj v>| / <v, v>.

    Equals 1 when the eigenvector is (up to phase) an eigenvector of the
    antilinear symmetry, and drops below 1 in the broken phase.
    """
    m = np.asarray(m, dtype=complex)
    _, vecs = np.linalg.eig(m)
    out = []
    for j in range(2):
        v = vecs[:, j]
        out.append(abs(np.vdot(v, SIGMA_X @ np.conj(v))) / np.vdot(v, v).real)
    return tuple(out)


def is_ep(ham, eps_d=1e-8, eps_h=1e-9):
    """EP test: |D| small relative to |Re h|^2 + |Im h|^2, with h not tiny.

    The eps_h floor excludes the scalar-matrix case h ~ 0, which is a
    diabolic degeneracy, not an EP.
    """
    rad = radicand(ham)
    scale = rad.reh2 + rad.imh2
    return bool(abs(rad.d) <= eps_d * scale and scale >= eps_h)


def defectiveness(ham):
    """Smallest singular value of the unit-column eigenvector matrix.

    1 for a normal matrix, 0 at an EP where the eigenvectors coalesce.
    """
    _, vecs = np.linalg.eig(ham.matrix)
    vecs = vecs / np.linalg.norm(vecs, axis=0, keepdims=True)
    return float(np.linalg.svd(vecs, compute_uv=False)[-1])


@dataclass(frozen=True)
class PTReport:
    """Full symmetry analysis of one Hamiltonian.

    offset is the applied imaginary shift (Gamma1+Gamma2)/4, phi0/tau/phi the
    transformation angles, form the resulting normal form, commutator_norm
    the antilinear commutator of the actually transformed matrix.
    """

    offset: float
    phi0: float
    tau: float
    phi: float
    form: PTNormalForm
    commutator_norm: float

    @property
    def phase(self):
        return self.form.phase

    def to_json_dict(self):
        return {
            "offset": self.offset,
            "phi0": self.phi0,
            "tau": self.tau,
            "phi": self.phi,
            "a": self.form.a,
            "b": self.form.b,
            "c": self.form.c,
            "dpt": self.form.dpt,
            "residual": self.form.residual,
            "commutator_norm": self.commutator_norm,
            "phase": self.phase,
        }


def pt_report(ham, eps_cross=EPS_CROSS, offset=None):
    """Run the full chain gauge_fix -> extract_tau -> width_offset -> to_pt_form.

    Returns a PTReport; raises the underlying errors if the matrix is off the
    curve or gauge-degenerate.
    """
    fixed, o0 = gauge_fix(ham)
    tau = extract_tau(fixed)
    if offset is None:
        offset = -0.5 * (fixed.e1.imag + fixed.e2.imag)
    shifted = width_offset(fixed, offset=offset)
    form, u, o = to_pt_form(shifted, tau, eps_cross=eps_cross)
    transformed = o.apply(u.apply(shifted))
    return PTReport(
        offset=float(offset),
        phi0=o0.angle,
        tau=tau,
        phi=o.angle,
        form=form,
        commutator_norm=pt_commutator_norm(transformed.matrix),
    )
