"""Plane-analysis tests: grid scans, EP localization, contour traces, braids.

The synthetic families are the oracle throughout: the radicand zero is
planted at a known (s, delta), the zero contour of cross is the exact
diagonal through it, and the reciprocity angle along that curve comes from
the same closed form the scanner must reproduce.
"""

import json
import math

import numpy as np
import pytest

from eplab import load_family, synth_spectrum
from eplab.core import eigenvalues_sorted, pt_report, radicand
from eplab.epscan import (
    BraidTrace,
    CurveTrace,
    EPLocation,
    ParamGrid,
    Permutation,
    ScanResult,
    SpectrumDirectory,
    braid,
    braid_loop,
    locate_ep,
    scan,
    trace_pt_curve,
)
from eplab.errors import (
    DataError,
    EPOutsideWindowError,
    InvalidArgumentError,
    NoEPFoundError,
    NotOnPTCurveError,
    OutOfBoundsError,
    RefineLoopError,
    ScanQualityError,
)

B38_EP = (1.72, 41.78)
B0_EP = (1.68, 41.19)


def ep_window(ep, half=0.25, step=0.01):
    return ParamGrid(ep[0] - half, ep[0] + half,
                     ep[1] - half, ep[1] + half, step)


@pytest.fixture(scope="module")
def b38():
    return load_family("b38")


@pytest.fixture(scope="module")
def b0():
    return load_family("b0")


@pytest.fixture(scope="module")
def b38_scan(b38):
    return scan(ep_window(B38_EP), b38)


@pytest.fixture(scope="module")
def b0_scan(b0):
    return scan(ep_window(B0_EP), b0)


@pytest.fixture(scope="module")
def b38_trace(b38_scan):
    return trace_pt_curve(b38_scan, B38_EP)


# ------------------------------------------------------------------- grids


def test_param_grid_geometry():
    g = ParamGrid(1.0, 1.5, 40.0, 40.2, 0.1)
    assert g.shape == (6, 3)
    assert np.allclose(g.s_values, [1.0, 1.1, 1.2, 1.3, 1.4, 1.5])
    assert np.allclose(g.delta_values, [40.0, 40.1, 40.2])
    assert g.contains(1.25, 40.15)
    assert not g.contains(0.99, 40.1)


def test_param_grid_validation():
    with pytest.raises(InvalidArgumentError):
        ParamGrid(1.0, 2.0, 40.0, 41.0, step=0.0)
    with pytest.raises(InvalidArgumentError):
        ParamGrid(2.0, 1.0, 40.0, 41.0)
    with pytest.raises(InvalidArgumentError):
        ParamGrid(0.0, 4000.0, 0.0, 4000.0, step=0.01)


# -------------------------------------------------------------------- scans


def test_family_scan_is_complete_and_exact(b38, b38_scan):
    assert b38_scan.provenance == "family"
    assert b38_scan.n_failed == 0
    assert b38_scan.ok.shape == (51, 51)

    # spot-check one grid point against a direct evaluation
    i, j = 7, 31
    s = b38_scan.grid.s_values[i]
    d = b38_scan.grid.delta_values[j]
    ham = b38.h_at(s, d)
    pair = eigenvalues_sorted(ham)
    rad = radicand(ham)
    assert b38_scan.f1[i, j] == pair[0].real
    assert b38_scan.g1[i, j] == -2.0 * pair[0].imag
    assert b38_scan.reh2[i, j] == rad.reh2
    assert b38_scan.cross[i, j] == rad.cross
    assert b38_scan.tau[i, j] == b38.tau_profile(s, d)
    assert b38_scan.ham_at_index(i, j) == ham


def test_scan_minimum_splitting_at_planted_ep(b38_scan):
    absd = b38_scan.d_abs()
    i, j = np.unravel_index(np.nanargmin(absd), absd.shape)
    assert math.isclose(b38_scan.grid.s_values[i], B38_EP[0], abs_tol=1e-12)
    assert math.isclose(b38_scan.grid.delta_values[j], B38_EP[1], abs_tol=1e-12)
    assert absd[i, j] == 0.0


def test_single_point_scan_equals_direct_evaluation(b38):
    g = ParamGrid(1.69, 1.69, 41.80, 41.80)
    sr = scan(g, b38)
    assert sr.ok.shape == (1, 1) and sr.ok[0, 0]
    pair = eigenvalues_sorted(b38.h_at(1.69, 41.80))
    assert sr.f1[0, 0] == pair[0].real
    assert sr.f2[0, 0] == pair[1].real


def test_scan_threshold_lobes_sit_on_either_side(b38):
    # real-part differences collapse left of the EP, width differences right
    sr = scan(ep_window(B38_EP, half=0.30, step=0.02), b38)
    f_diff = np.abs(sr.f1 - sr.f2)
    g_diff = np.abs(sr.g1 - sr.g2)
    s_grid = np.broadcast_to(sr.grid.s_values[:, None], f_diff.shape)
    only_f = (f_diff < 3.0) & (g_diff >= 0.35)
    only_g = (g_diff < 0.35) & (f_diff >= 3.0)
    assert only_f.sum() > 10 and only_g.sum() > 10
    assert s_grid[only_f].mean() < B38_EP[0]
    assert s_grid[only_g].mean() > B38_EP[0]


def test_scan_records_out_of_bounds_points(b38):
    # window pokes 2 of 15 columns past the family edge: reported, not fatal
    s_hi = b38.bounds_s[1]
    g = ParamGrid(s_hi - 0.12, s_hi + 0.02, 41.78, 41.78, 0.01)
    sr = scan(g, b38)
    assert sr.n_failed == 2
    assert all(r == "out-of-bounds" for r in sr.reasons.values())


def test_scan_fails_loudly_when_mostly_outside(b38):
    s_hi = b38.bounds_s[1]
    g = ParamGrid(s_hi - 0.01, s_hi + 0.03, 41.78, 41.78, 0.01)
    with pytest.raises(ScanQualityError):
        scan(g, b38)


def test_scan_rejects_unknown_source():
    with pytest.raises(InvalidArgumentError):
        scan(ep_window(B38_EP), source="b38")


def test_family_scan_is_deterministic(b38):
    g = ep_window(B38_EP, half=0.05)
    a, b = scan(g, b38), scan(g, b38)
    assert np.array_equal(a.f1, b.f1)
    assert np.array_equal(a.cross, b.cross)
    assert np.array_equal(a.tau, b.tau)


def test_scan_csv_roundtrip(tmp_path, b38_scan):
    path = tmp_path / "scan.csv"
    b38_scan.write_csv(path, config_hash="cafe0123")
    text = path.read_text().splitlines()
    assert text[0] == "# schema=eplab.scan.v1"
    assert text[1] == "# config_hash=cafe0123"

    back = ScanResult.read_csv(path)
    assert back.grid.shape == b38_scan.grid.shape
    assert back.grid.step == pytest.approx(0.01)
    assert not back.has_matrices()
    assert np.array_equal(back.ok, b38_scan.ok)
    for name in ("f1", "g1", "f2", "g2", "reh2", "imh2", "cross", "tau"):
        assert np.array_equal(getattr(back, name), getattr(b38_scan, name))


def test_scan_csv_rejects_foreign_content(tmp_path):
    bad = tmp_path / "other.csv"
    bad.write_text("s_mm,delta_mm\n1.0,2.0\n")
    with pytest.raises(DataError):
        ScanResult.read_csv(bad)


# -------------------------------------------------------- spectrum archives


def write_point(fam, directory, s, d):
    spec = synth_spectrum(fam.internal_at(s, d), fam.coupling,
                          2725.0, 40.0, 0.01,
                          meta={"s_mm": s, "delta_mm": d})
    spec.write_csv(directory / f"point_{s:.3f}_{d:.3f}.csv")


def test_spectrum_directory_indexes_sidecars(tmp_path, b38):
    write_point(b38, tmp_path, 1.69, 41.80)
    write_point(b38, tmp_path, 1.70, 41.80)
    archive = SpectrumDirectory(tmp_path)
    assert len(archive) == 2
    assert archive.lookup(1.69, 41.80) is not None
    assert archive.lookup(1.69, 41.81) is None


def test_spectrum_directory_requires_spectra(tmp_path):
    with pytest.raises(DataError):
        SpectrumDirectory(tmp_path)
    with pytest.raises(DataError):
        SpectrumDirectory(tmp_path / "missing")


def test_scan_from_fitted_spectra_matches_family(tmp_path, b38):
    grid = ParamGrid(1.69, 1.70, 41.80, 41.82, 0.01)
    points = [(s, d) for s in (1.69, 1.70)
              for d in (41.80, 41.81, 41.82)]
    for s, d in points[:-1]:             # drop one file: recorded, not fatal
        write_point(b38, tmp_path, s, d)

    sr = scan(grid, SpectrumDirectory(tmp_path))
    assert sr.provenance == "fit"
    assert sr.n_failed == 1
    assert list(sr.reasons.values()) == ["missing-spectrum"]
    assert sr.has_matrices()
    for i, s in enumerate(grid.s_values):
        for j, d in enumerate(grid.delta_values):
            if not sr.ok[i, j]:
                continue
            pair = eigenvalues_sorted(b38.h_at(s, d))
            assert abs(sr.f1[i, j] - pair[0].real) < 1e-3
            assert abs(sr.g1[i, j] + 2.0 * pair[0].imag) < 1e-3
            assert abs(sr.tau[i, j] - b38.tau_profile(s, d)) < 1e-3


# ----------------------------------------------------------- EP localization


def test_locate_ep_finds_planted_locations(b38_scan, b0_scan):
    for sr, ep in ((b38_scan, B38_EP), (b0_scan, B0_EP)):
        loc = locate_ep(sr)
        assert abs(loc.s - ep[0]) <= 0.01
        assert abs(loc.delta - ep[1]) <= 0.01
        assert loc.uncertainty == sr.grid.step
        assert abs(loc.offset_s) <= 1.0 and abs(loc.offset_delta) <= 1.0
        assert tuple(loc) == (loc.s, loc.delta)


def test_locate_ep_refines_between_grid_nodes(b38):
    # nodes straddle the planted point; refinement must beat the half step
    g = ParamGrid(B38_EP[0] - 0.045, B38_EP[0] + 0.055,
                  B38_EP[1] - 0.045, B38_EP[1] + 0.055, 0.01)
    loc = locate_ep(scan(g, b38))
    assert abs(loc.s - B38_EP[0]) < 0.005
    assert abs(loc.delta - B38_EP[1]) < 0.005


def test_locate_ep_boundary_minimum_raises(b38):
    g = ParamGrid(B38_EP[0] + 0.08, B38_EP[0] + 0.20,
                  B38_EP[1] - 0.10, B38_EP[1] + 0.10, 0.01)
    with pytest.raises(EPOutsideWindowError):
        locate_ep(scan(g, b38))


def test_locate_ep_flat_landscape_raises(b38):
    # far off-diagonal window: |D| varies gently and never dips; a shallow
    # minimum is reported as "no EP" even when it touches the boundary
    g = ParamGrid(B38_EP[0] + 0.16, B38_EP[0] + 0.24,
                  B38_EP[1] - 0.24, B38_EP[1] - 0.16, 0.01)
    with pytest.raises(NoEPFoundError):
        locate_ep(scan(g, b38))


def test_locate_ep_from_csv_scan(tmp_path, b38_scan):
    path = tmp_path / "scan.csv"
    b38_scan.write_csv(path)
    loc = locate_ep(ScanResult.read_csv(path))
    assert abs(loc.s - B38_EP[0]) <= 0.01
    assert abs(loc.delta - B38_EP[1]) <= 0.01


# ------------------------------------------------------------ curve tracing


def test_trace_follows_contour_through_window(b38_scan, b38_trace):
    tr = b38_trace
    assert not tr.truncated
    assert tr.n_points > 40
    rel = np.abs(tr.cross) / (tr.reh2 + tr.imh2)
    assert np.max(rel) <= tr.epsilon
    gaps = np.hypot(*np.diff(tr.points, axis=0).T)
    assert np.max(gaps) <= 2.0 * tr.step
    # the planted contour is the diagonal through the EP
    expected_delta = B38_EP[1] + (tr.points[:, 0] - B38_EP[0])
    assert np.max(np.abs(tr.points[:, 1] - expected_delta)) < 1e-6


def test_trace_passes_through_located_ep(b38_scan, b38_trace):
    loc = locate_ep(b38_scan)
    k = b38_trace.crossing_index
    dist = np.hypot(b38_trace.points[k, 0] - loc.s,
                    b38_trace.points[k, 1] - loc.delta)
    assert dist <= b38_scan.grid.step
    # the split sign flips exactly there
    diffs = b38_trace.reh2 - b38_trace.imh2
    assert diffs[k - 2] < 0 < diffs[k + 2]


def test_trace_split_sign_matches_side_of_ep(b38_trace):
    for k in range(b38_trace.n_points):
        ds = b38_trace.points[k, 0] - B38_EP[0]
        if abs(ds) < 0.02:
            continue
        assert np.sign(b38_trace.reh2[k] - b38_trace.imh2[k]) == np.sign(ds)


def test_trace_reproduces_planted_tau_profile(b38, b38_trace):
    planted = np.array([b38.tau_profile(s, d) for s, d in b38_trace.points])
    assert np.max(np.abs(b38_trace.tau - planted)) < 1e-6
    assert np.ptp(b38_trace.tau) > 0.5                  # clearly nonconstant
    assert np.max(np.abs(np.diff(b38_trace.tau))) < 0.2  # and smooth


def test_trace_reciprocal_family_has_zero_tau(b0, b0_scan):
    tr = trace_pt_curve(b0_scan, B0_EP)
    assert not tr.truncated
    assert np.all(tr.tau == 0.0)
    k = tr.crossing_index
    assert np.hypot(tr.points[k, 0] - B0_EP[0],
                    tr.points[k, 1] - B0_EP[1]) <= 0.01


def test_trace_symmetry_analysis_on_curve_points(b38_trace):
    # the traced matrices admit the antiunitary normal form to high accuracy
    assert b38_trace.hams is not None
    for ham in b38_trace.hams[::7]:
        rep = pt_report(ham)
        assert rep.form.residual < 1e-9
        assert rep.commutator_norm < 1e-9


def test_trace_point_set_is_start_independent(b38_scan, b38_trace):
    other = trace_pt_curve(b38_scan, (B38_EP[0] + 0.1, B38_EP[1] + 0.1))
    for p in other.points:
        dist = np.min(np.hypot(b38_trace.points[:, 0] - p[0],
                               b38_trace.points[:, 1] - p[1]))
        assert dist < b38_trace.step


def test_trace_rejects_bad_starts(b38_scan):
    with pytest.raises(NotOnPTCurveError):
        trace_pt_curve(b38_scan, (B38_EP[0] + 0.05, B38_EP[1] - 0.05))
    with pytest.raises(OutOfBoundsError):
        trace_pt_curve(b38_scan, (B38_EP[0] + 9.0, B38_EP[1]))


def test_trace_interpolated_scan_without_closed_form(b38_scan):
    # same grids, but the walker only sees the sampled tables
    tables = ScanResult(
        grid=b38_scan.grid, provenance="fit",
        f1=b38_scan.f1, g1=b38_scan.g1, f2=b38_scan.f2, g2=b38_scan.g2,
        reh2=b38_scan.reh2, imh2=b38_scan.imh2, cross=b38_scan.cross,
        tau=b38_scan.tau, ok=b38_scan.ok,
        e1=b38_scan.e1, e2=b38_scan.e2, h1=b38_scan.h1, h2=b38_scan.h2,
    )
    tr = trace_pt_curve(tables, B38_EP)
    assert tr.provenance == "fit"
    assert tr.epsilon == 1e-3
    assert tr.n_points > 40
    expected_delta = B38_EP[1] + (tr.points[:, 0] - B38_EP[0])
    assert np.max(np.abs(tr.points[:, 1] - expected_delta)) < 5e-3


def test_trace_csv_backed_scan_has_no_matrices(tmp_path, b38_scan):
    path = tmp_path / "scan.csv"
    b38_scan.write_csv(path)
    tr = trace_pt_curve(ScanResult.read_csv(path), B38_EP)
    assert tr.hams is None
    assert np.all(np.isnan(tr.h1_abs_sq))
    assert tr.n_points > 40


def test_trace_json_roundtrip(b38_trace):
    doc = b38_trace.to_json_dict(source={"family": "b38"},
                                 config_hash="beef4567")
    assert doc["schema"] == "eplab.curve.v1"
    assert doc["source"] == {"family": "b38"}
    assert doc["config_hash"] == "beef4567"
    assert "reh2_norm" in doc["points"][0]
    encoded = json.dumps(doc)

    back = CurveTrace.from_json_dict(json.loads(encoded))
    assert np.allclose(back.points, b38_trace.points)
    assert np.allclose(back.tau, b38_trace.tau)
    assert back.crossing_index == b38_trace.crossing_index
    assert back.hams is not None
    assert abs(back.hams[0].h1 - b38_trace.hams[0].h1) < 1e-15

    with pytest.raises(DataError):
        CurveTrace.from_json_dict({"schema": "something-else"})


# ------------------------------------------------------------------ braiding


def test_braid_validates_loops(b38):
    with pytest.raises(InvalidArgumentError):
        braid(np.zeros((3, 3)), b38)
    open_loop = [(1.6, 41.7), (1.8, 41.7), (1.8, 41.9), (1.6, 41.9)]
    with pytest.raises(InvalidArgumentError):
        braid(open_loop, b38)


def test_braid_swap_iff_loop_encloses_ep(b38, b0):
    for fam, ep in ((b38, B38_EP), (b0, B0_EP)):
        assert braid_loop(fam, ep, 0.1).permutation is Permutation.SWAP
        off = (ep[0] + 0.2, ep[1])
        assert braid_loop(fam, off, 0.05).permutation is Permutation.IDENTITY


def test_braid_double_loop_composes_to_identity(b38):
    assert braid_loop(b38, B38_EP, 0.1,
                      turns=2).permutation is Permutation.IDENTITY


def test_braid_homotopic_loops_agree(b38):
    rng = np.random.default_rng(7)
    for _ in range(5):
        center = (B38_EP[0] + rng.uniform(-0.02, 0.02),
                  B38_EP[1] + rng.uniform(-0.02, 0.02))
        radius = rng.uniform(0.05, 0.15)
        assert braid_loop(b38, center, radius).permutation is Permutation.SWAP
    for _ in range(5):
        angle = rng.uniform(0, 2 * math.pi)
        center = (B38_EP[0] + 0.2 * math.cos(angle),
                  B38_EP[1] + 0.2 * math.sin(angle))
        assert braid_loop(b38, center,
                          0.04).permutation is Permutation.IDENTITY


def test_braid_coarse_loop_raises_until_refined(b38):
    t = np.linspace(0.0, 2.0 * math.pi, 5)
    coarse = np.column_stack([B38_EP[0] + 0.15 * np.cos(t),
                              B38_EP[1] + 0.15 * np.sin(t)])
    coarse[-1] = coarse[0]
    with pytest.raises(RefineLoopError):
        braid(coarse, b38)
    # the adaptive wrapper succeeds from the same starting resolution
    assert braid_loop(b38, B38_EP, 0.15,
                      n_points=4).permutation is Permutation.SWAP


def test_braid_loop_through_ep_cannot_resolve(b38):
    center = (B38_EP[0] + 0.05, B38_EP[1] + 0.05)
    radius = math.hypot(0.05, 0.05)      # passes exactly through the EP
    with pytest.raises(RefineLoopError):
        braid_loop(b38, center, radius, n_points=8, max_points=64)


def test_braid_trace_serializes(b38):
    tr = braid_loop(b38, B38_EP, 0.1)
    doc = tr.to_json_dict(config_hash="0011aabb")
    assert doc["schema"] == "eplab.braid.v1"
    assert doc["permutation"] == "swap"
    assert len(doc["loop"]) == tr.n_points
    assert len(doc["path1"]) == tr.n_points
    json.dumps(doc)


def test_braid_paths_are_continuous(b38):
    tr = braid_loop(b38, B38_EP, 0.1)
    for path in (tr.path1, tr.path2):
        jumps = np.abs(np.diff(path))
        gaps = np.abs(tr.path1 - tr.path2)
        assert np.all(jumps[1:] < 0.5 * gaps[1:-1] + 1e-12)
