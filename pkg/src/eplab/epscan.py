"""Parameter-plane analysis: scans, EP localization, contour tracing, braids.

Everything here works in the two-dimensional (s, delta) plane (both in mm).
A scan evaluates the effective matrix on a rectangular grid, either directly
from a synthetic family or by fitting one measured spectrum per grid point,
and stores per-point eigenvalues, the radicand split (reh2, imh2, cross) and
the reciprocity angle tau. On top of a scan:

  * locate_ep finds the grid cell minimizing |D| and refines it to sub-grid
    accuracy with a local quadratic model of |D|^2;
  * trace_pt_curve follows the zero contour of cross = Re h . Im h (the
    curve on which the shifted matrix has the antiunitary symmetry) with a
    predictor-corrector walker;
  * braid tracks the two eigenvalues around a closed parameter loop and
    reports whether they swap, the defining topological signature of an EP.

Scan tables serialize to CSV with columns

    s_mm, delta_mm, f1, g1, f2, g2, reh2, imh2, cross, tau, status

where (f, g) are resonance frequency and full width (E = f - i g/2) in the
deterministic reporting order, and failed points carry NaN data plus a
status reason. Curve and braid traces serialize to JSON. All files start
with a schema tag so readers can reject foreign content.
"""

import csv
import enum
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .core import (
    EffHamiltonian,
    Radicand,
    eigenvalues,
    eigenvalues_sorted,
    extract_tau,
    gauge_fix,
    radicand,
)
from .errors import (
    DataError,
    EPOutsideWindowError,
    EplabError,
    InvalidArgumentError,
    NoEPFoundError,
    NotOnPTCurveError,
    OutOfBoundsError,
    RefineLoopError,
    ScanQualityError,
)
from .fit import FitConfig, fit_spectrum
from .synth import SyntheticFamily, read_spectrum

SCAN_SCHEMA = "eplab.scan.v1"
CURVE_SCHEMA = "eplab.curve.v1"
BRAID_SCHEMA = "eplab.braid.v1"

SCAN_COLUMNS = ("s_mm", "delta_mm", "f1", "g1", "f2", "g2",
                "reh2", "imh2", "cross", "tau", "status")

# relative |cross| tolerance for accepting a contour point
EPSILON_CURVE_EXACT = 1e-9      # closed-form family evaluations
EPSILON_CURVE_FITTED = 1e-3     # per-point fits, noise limited

_MAX_TRACE_POINTS = 100_000


class Permutation(enum.Enum):
    IDENTITY = "identity"
    SWAP = "swap"


@dataclass(frozen=True)
class ParamGrid:
    """Rectangular (s, delta) grid, bounds inclusive, uniform step in mm."""

    s_min: float
    s_max: float
    delta_min: float
    delta_max: float
    step: float = 0.01

    def __post_init__(self):
        if not (self.step > 0):
            raise InvalidArgumentError(f"step must be positive, got {self.step}")
        if self.s_max < self.s_min or self.delta_max < self.delta_min:
            raise InvalidArgumentError("grid bounds must be ordered")
        if self.n_s * self.n_delta > 10_000_000:
            raise InvalidArgumentError(
                f"grid of {self.n_s} x {self.n_delta} points is too large")

    @property
    def n_s(self):
        return int(round((self.s_max - self.s_min) / self.step)) + 1

    @property
    def n_delta(self):
        return int(round((self.delta_max - self.delta_min) / self.step)) + 1

    @property
    def shape(self):
        return (self.n_s, self.n_delta)

    @property
    def s_values(self):
        return self.s_min + self.step * np.arange(self.n_s)

    @property
    def delta_values(self):
        return self.delta_min + self.step * np.arange(self.n_delta)

    def contains(self, s, delta):
        pad = 1e-9 * self.step
        return (self.s_min - pad <= s <= self.s_max + pad
                and self.delta_min - pad <= delta <= self.delta_max + pad)


class SpectrumDirectory:
    """Directory of spectrum CSV files keyed by their sidecar (s, delta).

    Every *.csv with a JSON sidecar carrying s_mm and delta_mm becomes one
    grid point. Files without usable sidecars are ignored.
    """

    def __init__(self, path):
        self.path = str(path)
        self._index = {}
        if not os.path.isdir(self.path):
            raise DataError(f"not a directory: {self.path}")
        for name in sorted(os.listdir(self.path)):
            if not name.endswith(".csv"):
                continue
            sidecar = os.path.join(self.path, os.path.splitext(name)[0] + ".json")
            if not os.path.exists(sidecar):
                continue
            try:
                with open(sidecar, encoding="utf-8") as fh:
                    meta = json.load(fh)
                key = (round(float(meta["s_mm"]), 6),
                       round(float(meta["delta_mm"]), 6))
            except (OSError, ValueError, TypeError, KeyError):
                continue
            self._index[key] = os.path.join(self.path, name)
        if not self._index:
            raise DataError(
                f"no spectrum files with (s_mm, delta_mm) sidecars in {self.path}")

    def __len__(self):
        return len(self._index)

    def lookup(self, s, delta):
        return self._index.get((round(float(s), 6), round(float(delta), 6)))

    def points(self):
        """All indexed spectra as sorted (s, delta, path) triples."""
        return [(s, d, p) for (s, d), p in sorted(self._index.items())]


@dataclass
class ScanResult:
    """Per-grid-point effective matrices and derived observables.

    Arrays are shaped (n_s, n_delta). Failed points carry NaN in every data
    array, False in ok, and a reason string. The full matrix arrays e1..h2
    are None for tables read back from CSV (which stores only observables).
    """

    grid: ParamGrid
    provenance: str                       # "family" or "fit"
    f1: np.ndarray
    g1: np.ndarray
    f2: np.ndarray
    g2: np.ndarray
    reh2: np.ndarray
    imh2: np.ndarray
    cross: np.ndarray
    tau: np.ndarray
    ok: np.ndarray
    reasons: dict = field(default_factory=dict, repr=False)
    e1: np.ndarray = None
    e2: np.ndarray = None
    h1: np.ndarray = None
    h2: np.ndarray = None
    family: SyntheticFamily = field(default=None, repr=False)

    @property
    def n_failed(self):
        return int(np.size(self.ok) - np.count_nonzero(self.ok))

    def has_matrices(self):
        return self.e1 is not None

    def ham_at_index(self, i, j):
        if not self.has_matrices() or not self.ok[i, j]:
            return None
        return EffHamiltonian(complex(self.e1[i, j]), complex(self.e2[i, j]),
                              complex(self.h1[i, j]), complex(self.h2[i, j]))

    def d_abs(self):
        """|D| per point via the eigenvalue identity D = ((E1-E2)/2)^2."""
        split = (self.f1 - 1j * self.g1 / 2.0) - (self.f2 - 1j * self.g2 / 2.0)
        out = np.abs(split / 2.0) ** 2
        out[~self.ok] = np.nan
        return out

    def write_csv(self, path, config_hash=None):
        s_vals, d_vals = self.grid.s_values, self.grid.delta_values
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(f"# schema={SCAN_SCHEMA}\n")
            if config_hash is not None:
                fh.write(f"# config_hash={config_hash}\n")
            fh.write(",".join(SCAN_COLUMNS) + "\n")
            for i, s in enumerate(s_vals):
                for j, d in enumerate(d_vals):
                    status = "ok" if self.ok[i, j] else (
                        "failed:" + self.reasons.get((i, j), "unknown"))
                    row = [s, d, self.f1[i, j], self.g1[i, j], self.f2[i, j],
                           self.g2[i, j], self.reh2[i, j], self.imh2[i, j],
                           self.cross[i, j], self.tau[i, j]]
                    fh.write(",".join("%.17g" % v for v in row)
                             + f",{status}\n")

    @staticmethod
    def read_csv(path):
        with open(path, encoding="utf-8") as fh:
            first = fh.readline().strip()
            if first != f"# schema={SCAN_SCHEMA}":
                raise DataError(f"{path} does not carry schema {SCAN_SCHEMA}")
            rows = []
            for record in csv.reader(fh):
                if not record or record[0].startswith("#"):
                    continue
                if record[0] == "s_mm":        # header row
                    continue
                if len(record) != len(SCAN_COLUMNS):
                    raise DataError(
                        f"{path}: expected {len(SCAN_COLUMNS)} columns, "
                        f"got {len(record)}")
                rows.append(record)
        if not rows:
            raise DataError(f"{path} has no data rows")

        s_vals = sorted({float(r[0]) for r in rows})
        d_vals = sorted({float(r[1]) for r in rows})
        step_candidates = np.diff(s_vals) if len(s_vals) > 1 else np.diff(d_vals)
        step = float(np.min(step_candidates)) if len(step_candidates) else 0.01
        grid = ParamGrid(s_vals[0], s_vals[-1], d_vals[0], d_vals[-1], step)
        if grid.shape != (len(s_vals), len(d_vals)) or \
                len(rows) != len(s_vals) * len(d_vals):
            raise DataError(f"{path} rows do not form a complete uniform grid")

        shape = grid.shape
        data = {name: np.full(shape, np.nan) for name in SCAN_COLUMNS[2:10]}
        ok = np.zeros(shape, dtype=bool)
        reasons = {}
        s_index = {v: i for i, v in enumerate(s_vals)}
        d_index = {v: j for j, v in enumerate(d_vals)}
        for r in rows:
            i, j = s_index[float(r[0])], d_index[float(r[1])]
            for k, name in enumerate(SCAN_COLUMNS[2:10]):
                data[name][i, j] = float(r[2 + k])
            if r[10] == "ok":
                ok[i, j] = True
            else:
                reasons[(i, j)] = r[10].split(":", 1)[-1]
        return ScanResult(grid=grid, provenance="fit", ok=ok, reasons=reasons,
                          **data)


# --------------------------------------------------------------------- scan


def _empty_arrays(shape):
    return {name: np.full(shape, np.nan) for name in
            ("f1", "g1", "f2", "g2", "reh2", "imh2", "cross", "tau")}


def _observables(ham):
    """(f1, g1, f2, g2, reh2, imh2, cross, tau) of one effective matrix."""
    pair = eigenvalues_sorted(ham)
    rad = radicand(ham)
    fixed, _ = gauge_fix(ham)
    tau = extract_tau(fixed)
    return (pair[0].real, -2.0 * pair[0].imag,
            pair[1].real, -2.0 * pair[1].imag,
            rad.reh2, rad.imh2, rad.cross, tau)


def scan(grid, source, cfg=None):
    """Evaluate the effective matrix on every grid point of the source.

    A SyntheticFamily is evaluated in closed form; a SpectrumDirectory is
    fitted point by point with cfg (FitConfig). Per-point failures are
    recorded, not fatal, unless they exceed 20% of the grid.
    """
    if isinstance(source, SyntheticFamily):
        result = _scan_family(grid, source)
    elif isinstance(source, SpectrumDirectory):
        result = _scan_directory(grid, source, cfg or FitConfig())
    else:
        raise InvalidArgumentError(
            f"source must be a SyntheticFamily or SpectrumDirectory, "
            f"got {type(source).__name__}")
    if result.n_failed > 0.2 * result.ok.size:
        raise ScanQualityError(
            f"{result.n_failed} of {result.ok.size} grid points failed")
    return result


def _scan_family(grid, fam):
    shape = grid.shape
    data = _empty_arrays(shape)
    ok = np.zeros(shape, dtype=bool)
    reasons = {}
    mats = {name: np.full(shape, np.nan, dtype=complex)
            for name in ("e1", "e2", "h1", "h2")}
    for i, s in enumerate(grid.s_values):
        for j, d in enumerate(grid.delta_values):
            if not fam.contains(s, d):
                reasons[(i, j)] = "out-of-bounds"
                continue
            try:
                ham = fam.h_at(s, d)
                values = _observables(ham)
            except EplabError as err:
                reasons[(i, j)] = type(err).__name__
                continue
            for name, v in zip(("f1", "g1", "f2", "g2",
                                "reh2", "imh2", "cross", "tau"), values):
                data[name][i, j] = v
            mats["e1"][i, j] = ham.e1
            mats["e2"][i, j] = ham.e2
            mats["h1"][i, j] = ham.h1
            mats["h2"][i, j] = ham.h2
            ok[i, j] = True
    return ScanResult(grid=grid, provenance="family", ok=ok, reasons=reasons,
                      family=fam, **data, **mats)


def _scan_directory(grid, directory, cfg):
    shape = grid.shape
    data = _empty_arrays(shape)
    ok = np.zeros(shape, dtype=bool)
    reasons = {}
    mats = {name: np.full(shape, np.nan, dtype=complex)
            for name in ("e1", "e2", "h1", "h2")}
    for i, s in enumerate(grid.s_values):
        for j, d in enumerate(grid.delta_values):
            path = directory.lookup(s, d)
            if path is None:
                reasons[(i, j)] = "missing-spectrum"
                continue
            try:
                spec = read_spectrum(path)
                res = fit_spectrum(spec, cfg)
                values = _observables(res.ham)
            except EplabError as err:
                reasons[(i, j)] = type(err).__name__
                continue
            for name, v in zip(("f1", "g1", "f2", "g2",
                                "reh2", "imh2", "cross", "tau"), values):
                data[name][i, j] = v
            mats["e1"][i, j] = res.ham.e1
            mats["e2"][i, j] = res.ham.e2
            mats["h1"][i, j] = res.ham.h1
            mats["h2"][i, j] = res.ham.h2
            ok[i, j] = True
    return ScanResult(grid=grid, provenance="fit", ok=ok, reasons=reasons,
                      **data, **mats)


# ---------------------------------------------------------- EP localization


@dataclass(frozen=True)
class EPLocation:
    """Refined EP estimate; uncertainty is one grid step by convention."""

    s: float
    delta: float
    offset_s: float            # sub-grid refinement, in units of one step
    offset_delta: float
    uncertainty: float

    def __iter__(self):
        return iter((self.s, self.delta))


def locate_ep(scan_result):
    """Locate the radicand zero on a scan: argmin |D| plus quadratic refinement.

    Raises EPOutsideWindowError when the minimum sits on the grid boundary
    and NoEPFoundError when the |D| landscape is too flat to single out a
    minimum (min above half the median).
    """
    absd = scan_result.d_abs()
    if not np.any(np.isfinite(absd)):
        raise NoEPFoundError("no valid grid points in scan")
    flat = np.where(np.isfinite(absd), absd, np.inf)
    i, j = np.unravel_index(int(np.argmin(flat)), flat.shape)
    n_s, n_d = flat.shape

    finite = absd[np.isfinite(absd)]
    median = float(np.median(finite))
    if flat[i, j] >= 0.5 * median:
        raise NoEPFoundError(
            f"|D| landscape is flat: minimum {flat[i, j]:.3g} vs median "
            f"{median:.3g}")
    if i in (0, n_s - 1) or j in (0, n_d - 1):
        raise EPOutsideWindowError(
            f"|D| minimum sits on the scan boundary at index ({i}, {j})")

    # local quadratic model of |D|^2 on the 3x3 neighborhood
    patch = flat[i - 1:i + 2, j - 1:j + 2] ** 2
    if not np.all(np.isfinite(patch)):
        off_x = off_y = 0.0
    else:
        xs, ys = np.meshgrid((-1.0, 0.0, 1.0), (-1.0, 0.0, 1.0), indexing="ij")
        a = np.column_stack([np.ones(9), xs.ravel(), ys.ravel(),
                             xs.ravel() ** 2, (xs * ys).ravel(),
                             ys.ravel() ** 2])
        coef, *_ = np.linalg.lstsq(a, patch.ravel(), rcond=None)
        _, b, c, dxx, dxy, dyy = coef
        hess = np.array([[2.0 * dxx, dxy], [dxy, 2.0 * dyy]])
        try:
            off = np.linalg.solve(hess, -np.array([b, c]))
        except np.linalg.LinAlgError:
            off = np.zeros(2)
        if np.all(np.linalg.eigvalsh(hess) > 0):
            off_x, off_y = np.clip(off, -1.0, 1.0)
        else:
            off_x = off_y = 0.0

    grid = scan_result.grid
    return EPLocation(
        s=float(grid.s_values[i] + off_x * grid.step),
        delta=float(grid.delta_values[j] + off_y * grid.step),
        offset_s=float(off_x),
        offset_delta=float(off_y),
        uncertainty=grid.step,
    )


# ------------------------------------------------------------ curve tracing


class _PlaneField(object):
    """Point evaluator behind tracing and braiding.

    Family-backed fields evaluate the effective matrix in closed form;
    scan-backed fields interpolate the stored grids bilinearly. cross_rel
    is the basis-invariant contour function cross/(reh2 + imh2).
    """

    def __init__(self, grid, family=None, scan_result=None):
        self.grid = grid
        self.family = family
        self.scan = scan_result
        if family is None and scan_result is None:
            raise InvalidArgumentError("field needs a family or a scan")

    def in_window(self, s, delta, margin=0.0):
        """Point inside the window, at least margin away from its edges."""
        slack = 1e-9 * self.grid.step - margin
        if not (self.grid.s_min - slack <= s <= self.grid.s_max + slack
                and self.grid.delta_min - slack <= delta
                <= self.grid.delta_max + slack):
            return False
        if self.family is not None:
            return (self.family.contains(s - margin, delta - margin)
                    and self.family.contains(s + margin, delta + margin))
        return True

    def _interp(self, array, s, delta):
        sv, dv = self.grid.s_values, self.grid.delta_values
        i = int(np.clip(np.searchsorted(sv, s) - 1, 0, sv.size - 2))
        j = int(np.clip(np.searchsorted(dv, delta) - 1, 0, dv.size - 2))
        fx = (s - sv[i]) / (sv[i + 1] - sv[i])
        fy = (delta - dv[j]) / (dv[j + 1] - dv[j])
        return ((1 - fx) * (1 - fy) * array[i, j]
                + fx * (1 - fy) * array[i + 1, j]
                + (1 - fx) * fy * array[i, j + 1]
                + fx * fy * array[i + 1, j + 1])

    def ham(self, s, delta):
        if self.family is not None:
            return self.family.h_at(s, delta)
        if self.scan.has_matrices():
            entries = [complex(self._interp(arr, s, delta)) for arr in
                       (self.scan.e1, self.scan.e2, self.scan.h1, self.scan.h2)]
            if all(math.isfinite(z.real) and math.isfinite(z.imag)
                   for z in entries):
                return EffHamiltonian(*entries)
        return None

    def point_data(self, s, delta):
        """(Radicand, tau, ham-or-None) at one plane point."""
        ham = self.ham(s, delta)
        if ham is not None:
            rad = radicand(ham)
            fixed, _ = gauge_fix(ham)
            return rad, extract_tau(fixed), ham
        rad = Radicand(float(self._interp(self.scan.reh2, s, delta)),
                       float(self._interp(self.scan.imh2, s, delta)),
                       float(self._interp(self.scan.cross, s, delta)))
        return rad, float(self._interp(self.scan.tau, s, delta)), None

    def cross_rel(self, s, delta):
        if self.family is not None:
            try:
                rad = radicand(self.family.h_at(s, delta))
            except OutOfBoundsError:
                return math.nan
            return rad.cross / (rad.reh2 + rad.imh2)
        num = float(self._interp(self.scan.cross, s, delta))
        den = (float(self._interp(self.scan.reh2, s, delta))
               + float(self._interp(self.scan.imh2, s, delta)))
        if not (den > 0):
            return math.nan
        return num / den

    def gradient(self, s, delta, h):
        gs = (self.cross_rel(s + h, delta) - self.cross_rel(s - h, delta)) / (2 * h)
        gd = (self.cross_rel(s, delta + h) - self.cross_rel(s, delta - h)) / (2 * h)
        return np.array([gs, gd])


def _field_for(source):
    if isinstance(source, SyntheticFamily):
        grid = ParamGrid(source.bounds_s[0], source.bounds_s[1],
                         source.bounds_delta[0], source.bounds_delta[1])
        return _PlaneField(grid, family=source)
    if isinstance(source, ScanResult):
        return _PlaneField(source.grid, family=source.family,
                           scan_result=None if source.family else source)
    raise InvalidArgumentError(
        f"source must be a SyntheticFamily or ScanResult, "
        f"got {type(source).__name__}")


@dataclass
class CurveTrace:
    """Ordered walk along the cross = 0 contour with per-point observables.

    h1_abs_sq carries |h1|^2 for the normalized presentation of the radicand
    split; it is NaN when the source provides no matrices. The matrices
    themselves ride along (when available) so symmetry analysis can rerun on
    traced points without the original source.
    """

    points: np.ndarray                   # (n, 2) of (s, delta)
    reh2: np.ndarray
    imh2: np.ndarray
    cross: np.ndarray
    tau: np.ndarray
    d: np.ndarray                        # complex radicand per point
    h1_abs_sq: np.ndarray
    crossing_index: int
    truncated: bool
    epsilon: float
    step: float
    provenance: str
    hams: list = field(default=None, repr=False)

    @property
    def n_points(self):
        return self.points.shape[0]

    def to_json_dict(self, source=None, config_hash=None):
        rows = []
        for k in range(self.n_points):
            row = {
                "s_mm": float(self.points[k, 0]),
                "delta_mm": float(self.points[k, 1]),
                "reh2": float(self.reh2[k]),
                "imh2": float(self.imh2[k]),
                "cross": float(self.cross[k]),
                "tau": float(self.tau[k]),
                "d": [float(self.d[k].real), float(self.d[k].imag)],
                "h1_abs_sq": float(self.h1_abs_sq[k]),
            }
            if math.isfinite(self.h1_abs_sq[k]) and self.h1_abs_sq[k] > 0:
                row["reh2_norm"] = float(self.reh2[k] / self.h1_abs_sq[k])
                row["imh2_norm"] = float(self.imh2[k] / self.h1_abs_sq[k])
                row["cross_norm"] = float(self.cross[k] / self.h1_abs_sq[k])
            if self.hams is not None and self.hams[k] is not None:
                row["ham"] = self.hams[k].to_json_dict()
            rows.append(row)
        out = {
            "schema": CURVE_SCHEMA,
            "crossing_index": int(self.crossing_index),
            "truncated": bool(self.truncated),
            "epsilon": self.epsilon,
            "step": self.step,
            "provenance": self.provenance,
            "points": rows,
        }
        if source is not None:
            out["source"] = source
        if config_hash is not None:
            out["config_hash"] = config_hash
        return out

    @staticmethod
    def from_json_dict(d):
        if d.get("schema") != CURVE_SCHEMA:
            raise DataError(f"expected schema {CURVE_SCHEMA}")
        rows = d["points"]
        n = len(rows)
        points = np.array([[r["s_mm"], r["delta_mm"]] for r in rows])
        hams = None
        if any("ham" in r for r in rows):
            hams = [EffHamiltonian.from_json_dict(r["ham"])
                    if "ham" in r else None for r in rows]
        return CurveTrace(
            points=points,
            reh2=np.array([r["reh2"] for r in rows]),
            imh2=np.array([r["imh2"] for r in rows]),
            cross=np.array([r["cross"] for r in rows]),
            tau=np.array([r["tau"] for r in rows]),
            d=np.array([complex(*r["d"]) for r in rows]),
            h1_abs_sq=np.array([r["h1_abs_sq"] for r in rows]),
            crossing_index=int(d["crossing_index"]),
            truncated=bool(d["truncated"]),
            epsilon=float(d["epsilon"]),
            step=float(d["step"]),
            provenance=str(d["provenance"]),
            hams=hams,
        )


def _correct_onto_contour(field, point, epsilon, fd_step):
    """Newton steps along the contour-function gradient.

    Closed-form fields are polished far below the acceptance tolerance
    (cheap, and downstream symmetry checks inherit the slack); interpolated
    fields stop at epsilon, their noise floor. Returns (point, "ok"),
    (None, "exit") when correction walks out of the window, or
    (None, "lost") when it diverges.
    """
    target = max(1e-6 * epsilon, 1e-15) if field.family is not None else epsilon
    p = np.array(point, dtype=float)
    c0 = field.cross_rel(*p)
    if not math.isfinite(c0):
        return None, "lost"
    c = c0
    for _ in range(16):
        if abs(c) <= target:
            return p, "ok"
        g = field.gradient(*p, fd_step)
        g2 = float(g @ g)
        if not math.isfinite(g2) or g2 < 1e-300:
            return None, "lost"
        p = p - (c / g2) * g
        if not field.in_window(*p, margin=fd_step):
            return None, "exit"
        c = field.cross_rel(*p)
        if not math.isfinite(c) or abs(c) > 10.0 * abs(c0) + 1e-12:
            return None, "lost"
    return (p, "ok") if abs(c) <= epsilon else (None, "lost")


def _march(field, start, direction, step, epsilon, fd_step):
    """Walk the contour one predictor-corrector step at a time."""
    points = []
    p = np.array(start, dtype=float)
    t_prev = np.array(direction, dtype=float)
    truncated = False
    while len(points) < _MAX_TRACE_POINTS:
        g = field.gradient(*p, fd_step)
        tangent = np.array([-g[1], g[0]])
        norm = float(np.hypot(*tangent))
        if not math.isfinite(norm) or norm < 1e-300:
            truncated = True
            break
        tangent /= norm
        if float(tangent @ t_prev) < 0:
            tangent = -tangent
        candidate = p + step * tangent
        if not field.in_window(*candidate, margin=fd_step):
            break                        # clean exit at the window edge
        corrected, status = _correct_onto_contour(field, candidate, epsilon,
                                                  fd_step)
        if status == "exit":
            break
        if status == "lost" or float(np.hypot(*(corrected - p))) > 2.0 * step:
            truncated = True
            break
        points.append(corrected)
        t_prev = tangent
        p = corrected
    return points, truncated


def trace_pt_curve(scan_result, start, epsilon=None, step=None):
    """Trace the zero contour of cross through the window, both directions.

    start must already satisfy |cross|/(reh2+imh2) <= epsilon. The returned
    trace is ordered along the curve, carries Radicand components and tau
    per point, and flags truncation when the corrector loses the contour.
    """
    field = _field_for(scan_result)
    grid = field.grid
    if step is None:
        step = grid.step
    if epsilon is None:
        epsilon = (EPSILON_CURVE_EXACT if field.family is not None
                   else EPSILON_CURVE_FITTED)

    s0, d0 = float(start[0]), float(start[1])
    if not field.in_window(s0, d0):
        raise OutOfBoundsError(f"start ({s0}, {d0}) outside the scan window")
    c0 = field.cross_rel(s0, d0)
    if not (abs(c0) <= epsilon):
        raise NotOnPTCurveError(
            f"start point has |cross|/(reh2+imh2) = {abs(c0):.3g} > {epsilon:.3g}")

    fd_step = 0.05 * step
    polished, status = _correct_onto_contour(field, (s0, d0), epsilon, fd_step)
    if status == "ok":
        s0, d0 = float(polished[0]), float(polished[1])
    g = field.gradient(s0, d0, fd_step)
    tangent = np.array([-g[1], g[0]])
    norm = float(np.hypot(*tangent))
    if not math.isfinite(norm) or norm < 1e-300:
        raise NotOnPTCurveError("contour direction undefined at start")
    tangent /= norm

    forward, trunc_f = _march(field, (s0, d0), tangent, step, epsilon, fd_step)
    backward, trunc_b = _march(field, (s0, d0), -tangent, step, epsilon, fd_step)
    pts = np.array(backward[::-1] + [[s0, d0]] + forward)

    n = pts.shape[0]
    reh2 = np.empty(n)
    imh2 = np.empty(n)
    cross = np.empty(n)
    tau = np.empty(n)
    dvals = np.empty(n, dtype=complex)
    h1sq = np.full(n, np.nan)
    hams = [] if (field.family is not None or field.scan.has_matrices()) else None
    for k in range(n):
        rad, tk, ham = field.point_data(*pts[k])
        reh2[k], imh2[k], cross[k], tau[k] = rad.reh2, rad.imh2, rad.cross, tk
        dvals[k] = rad.d
        if ham is not None:
            h1sq[k] = abs(ham.h1) ** 2
        if hams is not None:
            hams.append(ham)

    return CurveTrace(
        points=pts, reh2=reh2, imh2=imh2, cross=cross, tau=tau, d=dvals,
        h1_abs_sq=h1sq,
        crossing_index=int(np.argmin(np.abs(reh2 - imh2))),
        truncated=bool(trunc_f or trunc_b),
        epsilon=float(epsilon), step=float(step),
        provenance="family" if field.family is not None else "fit",
        hams=hams,
    )


# ------------------------------------------------------------------ braiding


@dataclass
class BraidTrace:
    """Eigenvalue paths around a closed loop and the resulting permutation."""

    loop: np.ndarray                     # (n, 2), first row equals last
    path1: np.ndarray                    # complex (n,)
    path2: np.ndarray
    permutation: Permutation

    @property
    def n_points(self):
        return self.loop.shape[0]

    def to_json_dict(self, config_hash=None):
        out = {
            "schema": BRAID_SCHEMA,
            "permutation": self.permutation.value,
            "loop": [[float(s), float(d)] for s, d in self.loop],
            "path1": [[z.real, z.imag] for z in self.path1],
            "path2": [[z.real, z.imag] for z in self.path2],
        }
        if config_hash is not None:
            out["config_hash"] = config_hash
        return out


def braid(loop, source):
    """Track both eigenvalues around a closed loop in the (s, delta) plane.

    The loop must repeat its first point at the end. Eigenvalues continue by
    nearest-neighbor assignment; an assignment jump of at least half the
    local gap means the discretization cannot resolve the braid and raises
    RefineLoopError.
    """
    pts = np.asarray(loop, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 4:
        raise InvalidArgumentError("loop must be an (n >= 4, 2) point list")
    if not np.allclose(pts[0], pts[-1], rtol=0.0, atol=1e-12):
        raise InvalidArgumentError("loop must be closed (first point == last)")

    field = _field_for(source)
    path1 = np.empty(pts.shape[0], dtype=complex)
    path2 = np.empty(pts.shape[0], dtype=complex)
    for k, (s, d) in enumerate(pts):
        ham = field.ham(s, d)
        if ham is None:
            raise InvalidArgumentError("braiding needs a matrix-backed source")
        pair = eigenvalues(ham)
        if k == 0:
            path1[0], path2[0] = pair.E1, pair.E2
            continue
        x, y = pair.E1, pair.E2
        a, b = path1[k - 1], path2[k - 1]
        straight = max(abs(x - a), abs(y - b))
        crossed = max(abs(y - a), abs(x - b))
        if crossed < straight:
            x, y = y, x
            straight = crossed
        gap = abs(x - y)
        if straight >= 0.5 * gap:
            raise RefineLoopError(
                f"eigenvalue jump {straight:.3g} at loop point {k} is not "
                f"below half the local gap {gap:.3g}; use a finer loop")
        path1[k], path2[k] = x, y

    swap = abs(path1[-1] - path2[0]) < abs(path1[-1] - path1[0])
    return BraidTrace(loop=pts, path1=path1, path2=path2,
                      permutation=Permutation.SWAP if swap
                      else Permutation.IDENTITY)


def braid_loop(source, center, radius, n_points=64, turns=1, max_points=4096):
    """Braid around a circle, doubling the resolution until it resolves.

    turns > 1 traverses the circle repeatedly before closing, which composes
    the permutation with itself.
    """
    if radius <= 0:
        raise InvalidArgumentError(f"radius must be positive, got {radius}")
    if turns < 1:
        raise InvalidArgumentError(f"turns must be >= 1, got {turns}")
    cs, cd = float(center[0]), float(center[1])
    n = int(n_points)
    while True:
        angles = 2.0 * math.pi * turns * np.arange(n * turns + 1) / (n * turns)
        loop = np.column_stack([cs + radius * np.cos(angles),
                                cd + radius * np.sin(angles)])
        loop[-1] = loop[0]               # close exactly despite rounding
        try:
            return braid(loop, source)
        except RefineLoopError:
            if 2 * n > max_points:
                raise
            n *= 2
