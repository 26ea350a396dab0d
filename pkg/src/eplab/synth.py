"""Forward scattering model and the planted two-parameter synthetic family.

The S-matrix of two levels coupled to open channels is

    S_ab(f) = delta_ab - 2 pi i sum_{mu nu} W_a,mu G_mu,nu(f) W_b,nu,
    G(f) = (f I - Heff)^(-1),     Heff = Hint - i pi W^T W,

with Hint Hermitian (the closed cavity), W real and frequency independent,
and the channel sum in W^T W running over antenna AND fictitious dissipative
channels. Only the two antenna channels appear in the returned S.

The resolvent is evaluated as adjugate over determinant; every consumer
(point evaluation, grid generation, fit model) funnels through the same
vectorized kernel so that identical inputs give bit-identical outputs.
Reciprocity breaking is computed in difference form,

    S_21 = S_12 - 2 pi i (W_20 W_11 - W_10 W_21) (G_01 - G_10),

which makes S_12 == S_21 hold exactly (not just to rounding) whenever the
effective matrix is complex symmetric (h2 = 0).

The synthetic family plants an exceptional point at preset coordinates
(s*, d*) in the two mechanical parameters: every matrix entry is affine in
(s - s*, d - d*), and the coefficient vectors are dyadic rationals chosen so
the radicand vanishes to the last bit at the EP. Shipped presets: "b38"
(broken time-reversal, tau != 0) and "b0" (T-invariant, h2 identically 0).

Units: frequencies and widths in MHz, couplings in sqrt(MHz), mechanical
parameters in mm.
"""

import importlib.resources
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .core import EffHamiltonian, extract_tau, gauge_fix, is_ep, radicand
from .errors import (
    DataError,
    InvalidArgumentError,
    OutOfBoundsError,
    PoleOnGridError,
)

TWO_PI = 2.0 * math.pi

# CSV column layout for spectrum files, one row per frequency
CSV_HEADER = "f_MHz,reS11,imS11,reS12,imS12,reS21,imS21,reS22,imS22"


class CouplingSet:
    """Real, frequency-independent channel couplings.

    w has one row per channel and one column per level; rows 0 and 1 are the
    antenna channels, any further rows are fictitious dissipative channels.
    """

    __slots__ = ("w",)

    def __init__(self, w):
        w = np.array(w, dtype=float)
        if w.ndim != 2 or w.shape[1] != 2:
            raise InvalidArgumentError(
                f"coupling matrix must be channels x 2, got shape {w.shape}")
        if w.shape[0] < 2:
            raise InvalidArgumentError("need at least the two antenna channels")
        if not np.all(np.isfinite(w)):
            raise InvalidArgumentError("coupling entries must be finite")
        w.flags.writeable = False
        self.w = w

    @property
    def channels(self):
        return self.w.shape[0]

    @property
    def antenna(self):
        """The 2x2 block of antenna rows."""
        return self.w[:2]

    def t_entries(self):
        """Entries (t00, t01, t11) of the symmetric channel sum W^T W."""
        t00 = float(self.w[:, 0] @ self.w[:, 0])
        t01 = float(self.w[:, 0] @ self.w[:, 1])
        t11 = float(self.w[:, 1] @ self.w[:, 1])
        return t00, t01, t11

    def __repr__(self):
        return f"CouplingSet(channels={self.channels})"


@dataclass(frozen=True)
class NoiseSpec:
    """Additive i.i.d. complex Gaussian noise, sigma per quadrature."""

    sigma: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        if not (self.sigma >= 0.0 and math.isfinite(self.sigma)):
            raise InvalidArgumentError(f"sigma must be >= 0, got {self.sigma}")


class Spectrum:
    """Complex 2x2 S-matrix samples on a uniform ascending frequency grid."""

    __slots__ = ("freqs", "s", "meta")

    def __init__(self, freqs, s, meta=None):
        freqs = np.array(freqs, dtype=float)
        s = np.array(s, dtype=complex)
        if freqs.ndim != 1 or s.shape != (freqs.size, 2, 2):
            raise InvalidArgumentError(
                f"shape mismatch: freqs {freqs.shape}, S {s.shape}")
        if freqs.size >= 2:
            steps = np.diff(freqs)
            nominal = (freqs[-1] - freqs[0]) / (freqs.size - 1)
            if nominal <= 0 or np.any(steps <= 0):
                raise InvalidArgumentError("frequency grid must be ascending")
            if np.max(np.abs(steps - nominal)) > 1e-9 * nominal:
                raise InvalidArgumentError("frequency grid must be uniform")
        freqs.flags.writeable = False
        s.flags.writeable = False
        self.freqs = freqs
        self.s = s
        self.meta = dict(meta) if meta else {}

    @property
    def n_points(self):
        return self.freqs.size

    @property
    def s11(self):
        return self.s[:, 0, 0]

    @property
    def s12(self):
        return self.s[:, 0, 1]

    @property
    def s21(self):
        return self.s[:, 1, 0]

    @property
    def s22(self):
        return self.s[:, 1, 1]

    def write_csv(self, path):
        """Write the CSV file plus the JSON metadata sidecar."""
        cols = [self.freqs]
        for a in range(2):
            for b in range(2):
                cols.append(self.s[:, a, b].real)
                cols.append(self.s[:, a, b].imag)
        lines = [CSV_HEADER]
        for row in zip(*cols):
            lines.append(",".join("%.17g" % v for v in row))
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
        sidecar = {
            "s_mm": self.meta.get("s_mm"),
            "delta_mm": self.meta.get("delta_mm"),
            "B_mT": self.meta.get("B_mT"),
            "seed": self.meta.get("seed"),
            "sigma": self.meta.get("sigma"),
            "config_hash": self.meta.get("config_hash"),
        }
        with open(_sidecar_path(path), "w") as fh:
            json.dump(sidecar, fh, indent=2)
            fh.write("\n")


def _sidecar_path(csv_path):
    root, _ = os.path.splitext(str(csv_path))
    return root + ".json"


def read_spectrum(path):
    """Load a spectrum CSV (and its sidecar, when present)."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != 9:
        raise DataError(f"{path}: expected 9 columns, got {data.shape[1]}")
    s = np.empty((data.shape[0], 2, 2), dtype=complex)
    for k, (a, b) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
        s[:, a, b] = data[:, 1 + 2 * k] + 1j * data[:, 2 + 2 * k]
    meta = {}
    sidecar = _sidecar_path(path)
    if os.path.exists(sidecar):
        with open(sidecar) as fh:
            meta = json.load(fh)
    return Spectrum(data[:, 0], s, meta)


# ------------------------------------------------------------ S-matrix kernel


def _sgrid(e1, e2, h1, h2, w00, w01, w10, w11, freqs):
    """Shared S-matrix kernel; broadcasts over freqs (and batched params).

    e1, e2, h1, h2 describe the effective (already width-carrying) matrix;
    w00..w11 are the antenna coupling entries. All may be scalars or
    broadcast-compatible arrays. Returns (s11, s12, s21, s22). Op order is
    fixed: do not reorder terms, several tests pin bit-level reproducibility
    across call paths.
    """
    m12 = h1 - 1j * h2
    m21 = h1 + 1j * h2
    a00 = freqs - e1
    a11 = freqs - e2
    det = a00 * a11 - m12 * m21
    if np.any(det == 0):
        raise PoleOnGridError("resolvent pole hit a grid frequency exactly")
    g00 = a11 / det
    g11 = a00 / det
    g01 = m12 / det
    g10 = m21 / det
    c = TWO_PI * 1j
    s11 = 1.0 - c * (w00 * w00 * g00 + w00 * w01 * g01
                     + w01 * w00 * g10 + w01 * w01 * g11)
    s12 = -c * (w00 * w10 * g00 + w00 * w11 * g01
                + w01 * w10 * g10 + w01 * w11 * g11)
    s21 = s12 - c * ((w10 * w01 - w00 * w11) * (g01 - g10))
    s22 = 1.0 - c * (w10 * w10 * g00 + w10 * w11 * g01
                     + w11 * w10 * g10 + w11 * w11 * g11)
    return s11, s12, s21, s22


def effective_hamiltonian(ham, coupling):
    """Heff = Hint - i pi W^T W, with the channel sum over all rows.

    This is the exact arithmetic smatrix_at performs internally; fits that
    parametrize Heff directly reproduce generated spectra bit-exactly when
    seeded with this value.
    """
    t00, t01, t11 = coupling.t_entries()
    return EffHamiltonian(
        ham.e1 - 1j * (math.pi * t00),
        ham.e2 - 1j * (math.pi * t11),
        ham.h1 - 1j * (math.pi * t01),
        ham.h2,
    )


def smatrix_at(ham, coupling, f):
    """Evaluate the 2x2 S-matrix at one frequency.

    ham is the Hermitian internal Hamiltonian; the dissipative shift
    -i pi W^T W is applied here, never by the caller.
    """
    if not math.isfinite(f):
        raise InvalidArgumentError(f"frequency must be finite, got {f}")
    eff = effective_hamiltonian(ham, coupling)
    wa = coupling.antenna
    s11, s12, s21, s22 = _sgrid(eff.e1, eff.e2, eff.h1, eff.h2,
                                wa[0, 0], wa[0, 1], wa[1, 0], wa[1, 1],
                                np.array([float(f)]))
    return np.array([[s11[0], s12[0]], [s21[0], s22[0]]])


def frequency_grid(f0, span, step):
    """Uniform grid centered on f0: round(span/step)+1 points."""
    if not (span > 0 and step > 0):
        raise InvalidArgumentError("span and step must be positive")
    n = int(round(span / step)) + 1
    if n > 10_000_001:
        raise InvalidArgumentError(f"grid of {n} points exceeds the 1e7 cap")
    return (f0 - 0.5 * span) + np.arange(n) * step


def synth_spectrum(ham, coupling, f0, span, step, noise=None, meta=None):
    """Sample the S-matrix on a grid, optionally adding measurement noise.

    With noise.sigma = 0 (or noise None) the result equals smatrix_at at
    every grid point bit-exactly. Identical inputs and seed give bit-identical
    spectra.
    """
    freqs = frequency_grid(f0, span, step)
    eff = effective_hamiltonian(ham, coupling)
    wa = coupling.antenna
    s11, s12, s21, s22 = _sgrid(eff.e1, eff.e2, eff.h1, eff.h2,
                                wa[0, 0], wa[0, 1], wa[1, 0], wa[1, 1],
                                freqs)
    s = np.empty((freqs.size, 2, 2), dtype=complex)
    s[:, 0, 0] = s11
    s[:, 0, 1] = s12
    s[:, 1, 0] = s21
    s[:, 1, 1] = s22
    full_meta = dict(meta) if meta else {}
    if noise is not None and noise.sigma > 0.0:
        rng = np.random.default_rng(noise.seed)
        s = s + noise.sigma * (rng.standard_normal(s.shape)
                               + 1j * rng.standard_normal(s.shape))
        full_meta.setdefault("sigma", noise.sigma)
        full_meta.setdefault("seed", noise.seed)
    else:
        full_meta.setdefault("sigma", 0.0)
        full_meta.setdefault("seed", noise.seed if noise else None)
    return Spectrum(freqs, s, full_meta)


# ----------------------------------------------------------- synthetic family


class SyntheticFamily:
    """Affine two-parameter Hamiltonian family with a planted EP.

    Hint(s, d) = fc I + sigma . g(s, d) with real
    g(s, d) = g0 + gs (s - s*) + gd (d - d*), and a constant imaginary Pauli
    vector m entering Heff = Hint - i pi W^T W = (fc - i gamma0) I
    + sigma . (g + i m). At (s*, d*): |g0| = |m|, g0 . m = 0, both exactly,
    so the radicand vanishes to the last bit.
    """

    __slots__ = ("name", "description", "b_mt", "fc", "gamma0", "s_ep",
                 "delta_ep", "bounds_s", "bounds_delta", "antenna_fraction",
                 "g0", "gs", "gd", "m", "coupling", "spectrum_defaults")

    def __init__(self, name, description, b_mt, fc, gamma0, s_ep, delta_ep,
                 bounds_s, bounds_delta, antenna_fraction,
                 g0, gs, gd, m, coupling, spectrum_defaults):
        self.name = name
        self.description = description
        self.b_mt = float(b_mt)
        self.fc = float(fc)
        self.gamma0 = float(gamma0)
        self.s_ep = float(s_ep)
        self.delta_ep = float(delta_ep)
        self.bounds_s = (float(bounds_s[0]), float(bounds_s[1]))
        self.bounds_delta = (float(bounds_delta[0]), float(bounds_delta[1]))
        self.antenna_fraction = float(antenna_fraction)
        for label, vec in (("g0", g0), ("gs", gs), ("gd", gd), ("m", m)):
            vec = np.array(vec, dtype=float)
            if vec.shape != (3,) or not np.all(np.isfinite(vec)):
                raise DataError(f"family vector {label} must be 3 finite reals")
            vec.flags.writeable = False
            setattr(self, label, vec)
        self.coupling = coupling
        self.spectrum_defaults = dict(spectrum_defaults)

    @property
    def ep_location(self):
        return (self.s_ep, self.delta_ep)

    def contains(self, s, delta):
        return (self.bounds_s[0] <= s <= self.bounds_s[1]
                and self.bounds_delta[0] <= delta <= self.bounds_delta[1])

    def _check_bounds(self, s, delta):
        if not self.contains(s, delta):
            raise OutOfBoundsError(
                f"(s, delta) = ({s}, {delta}) mm outside family bounds "
                f"s in {self.bounds_s}, delta in {self.bounds_delta}")

    def _g(self, s, delta):
        return self.g0 + self.gs * (s - self.s_ep) + self.gd * (delta - self.delta_ep)

    def h_at(self, s, delta):
        """Effective (width-carrying) Hamiltonian at one parameter point."""
        self._check_bounds(s, delta)
        g = self._g(s, delta)
        mean = complex(self.fc, -self.gamma0)
        hz = complex(g[2], self.m[2])
        return EffHamiltonian(mean + hz, mean - hz,
                              complex(g[0], self.m[0]),
                              complex(g[1], self.m[1]))

    def internal_at(self, s, delta):
        """Hermitian closed-cavity Hamiltonian (pass to smatrix_at)."""
        self._check_bounds(s, delta)
        g = self._g(s, delta)
        return EffHamiltonian(complex(self.fc + g[2]), complex(self.fc - g[2]),
                              complex(g[0]), complex(g[1]))

    def tau_profile(self, s, delta):
        """Reciprocity-violation angle of the local effective matrix."""
        fixed, _ = gauge_fix(self.h_at(s, delta))
        return extract_tau(fixed)

    def __repr__(self):
        return (f"SyntheticFamily({self.name!r}, B={self.b_mt} mT, "
                f"EP=({self.s_ep}, {self.delta_ep}) mm)")


def family_at(fam, s, delta):
    """Planted Hamiltonian and couplings at (s, delta); bounds-checked."""
    return fam.h_at(s, delta), fam.coupling


def _validate_family(fam):
    # coupling must reproduce the declared width parameters
    p = (fam.gamma0 - fam.m[2]) / math.pi
    r = (fam.gamma0 + fam.m[2]) / math.pi
    q = -fam.m[0] / math.pi
    t00, t01, t11 = fam.coupling.t_entries()
    err = max(abs(t00 - p), abs(t01 - q), abs(t11 - r))
    if err > 1e-12:
        raise DataError(f"family {fam.name!r}: W^T W deviates from the "
                        f"declared widths by {err:.3e}")
    if fam.m[1] != 0.0:
        raise DataError(f"family {fam.name!r}: m2 must be 0 (real coupling)")
    # the EP must be planted exactly
    rad = radicand(fam.h_at(fam.s_ep, fam.delta_ep))
    if rad.d != 0 or not is_ep(fam.h_at(fam.s_ep, fam.delta_ep)):
        raise DataError(f"family {fam.name!r}: radicand at the declared EP "
                        f"is {rad.d!r}, not an exact zero")
    # direct Heff must agree with the smatrix_at construction
    probe = (fam.bounds_s[0], fam.bounds_delta[1])
    direct = fam.h_at(*probe)
    built = effective_hamiltonian(fam.internal_at(*probe), fam.coupling)
    gap = max(abs(direct.e1 - built.e1), abs(direct.e2 - built.e2),
              abs(direct.h1 - built.h1), abs(direct.h2 - built.h2))
    if gap > 1e-10:
        raise DataError(f"family {fam.name!r}: affine coefficients and "
                        f"couplings disagree by {gap:.3e}")
    if not fam.contains(fam.s_ep, fam.delta_ep):
        raise DataError(f"family {fam.name!r}: EP outside declared bounds")


def load_family(source):
    """Load a family preset by name ("b38", "b0") or from a JSON file path."""
    if isinstance(source, str) and source.lower() in ("b38", "b0"):
        res = importlib.resources.files("eplab").joinpath(
            "presets", f"{source.lower()}.json")
        text = res.read_text()
    else:
        try:
            with open(source) as fh:
                text = fh.read()
        except OSError as exc:
            raise DataError(f"cannot read family preset {source!r}: {exc}")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"family preset {source!r} is not valid JSON: {exc}")
    if doc.get("schema") != "eplab.family.v1":
        raise DataError(f"family preset {source!r}: unsupported schema "
                        f"{doc.get('schema')!r}")
    try:
        fam = SyntheticFamily(
            name=doc["name"],
            description=doc.get("description", ""),
            b_mt=doc["b_mt"],
            fc=doc["fc_mhz"],
            gamma0=doc["gamma0_mhz"],
            s_ep=doc["ep"]["s_mm"],
            delta_ep=doc["ep"]["delta_mm"],
            bounds_s=doc["bounds"]["s_mm"],
            bounds_delta=doc["bounds"]["delta_mm"],
            antenna_fraction=doc["antenna_fraction"],
            g0=doc["g0"], gs=doc["gs"], gd=doc["gd"], m=doc["m"],
            coupling=CouplingSet(doc["w"]),
            spectrum_defaults=doc["spectrum"],
        )
    except (KeyError, TypeError) as exc:
        raise DataError(f"family preset {source!r}: missing field {exc}")
    _validate_family(fam)
    return fam
