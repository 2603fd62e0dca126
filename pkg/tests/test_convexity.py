"""Tests for convex-region scanning and the IRR/IAR metrics."""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import ndimage

from csdml.array import exact_covariance, half_power_beamwidth, steering_matrix
from csdml.convexity import (
    ConvexRegion,
    approx_region,
    approximation_ratios,
    convexity_condition,
    convexity_map,
    criterion_half_width,
    default_scan_spec,
    exact_region,
    irr_iar,
    metrics_sweep,
    region_metrics,
    scan_region,
)
from csdml.dml import dml_objective, projector_bundle
from csdml.errors import RegionError
from csdml.models import ApproxMode, ArrayGeometry, RegionScanSpec, SourceScenario


@pytest.fixture
def ula8():
    """Half-wavelength ULA with 8 sensors."""
    return ArrayGeometry.ula(8)


@pytest.fixture
def pair():
    """Two sources at ±7.5°, 10 dB."""
    return SourceScenario.from_degrees([-7.5, 7.5], 10.0)


def _single(doa_deg=0.0):
    return SourceScenario.from_degrees([doa_deg], 10.0)


def _region(cells, k=1):
    return ConvexRegion(
        cells=frozenset(cells), counts=(2,) * k, step=(0.1,) * k, center=(0.0,) * k
    )


def _fine_spec(center_deg, half_width_deg, step_deg):
    return RegionScanSpec(
        center=[math.radians(c) for c in center_deg],
        half_width=[math.radians(half_width_deg)] * len(center_deg),
        step=[math.radians(step_deg)] * len(center_deg),
    )


class TestConvexityCondition:
    """Tests for β_i = |a(ϑ_i)ᴴa(θ_i)|²."""

    def test_one_at_truth(self, ula8, pair):
        """β = 1 when ϑ = θ."""
        condition = convexity_condition(ula8, pair.doas, pair.doas)
        assert_allclose(condition.beta, 1.0)
        assert condition.holds

    def test_bounded(self, ula8):
        """0 ≤ β ≤ 1 everywhere."""
        rng = np.random.default_rng(0)
        theta = np.sort(rng.uniform(-1.2, 1.2, 3))
        vartheta = np.sort(rng.uniform(-1.2, 1.2, 3))
        beta = convexity_condition(ula8, theta, vartheta).beta
        assert np.all((beta >= 0) & (beta <= 1 + 1e-12))

    def test_fails_far_away(self, ula8):
        """A candidate one beamwidth off breaks the condition."""
        bw = half_power_beamwidth(ula8)
        assert not convexity_condition(ula8, [0.0], [bw]).holds

    def test_criterion_half_width(self, ula8):
        """At broadside β = 0.5 is reached at BW_0.5/2."""
        assert criterion_half_width(ula8, 0.0) == pytest.approx(
            half_power_beamwidth(ula8) / 2, rel=1e-8
        )


class TestExactRegion:
    """Tests for the positive-semidefinite Hessian region."""

    def test_truth_cell_is_convex(self, ula8, pair):
        """The cell at ϑ = θ belongs to Ω_R."""
        region = exact_region(ula8, pair, default_scan_spec(ula8, pair.doas))
        assert (0, 0) in region
        assert region.k == 2
        assert region.measure == len(region.cells)

    def test_single_source_null_excluded(self, ula8):
        """K=1: the main lobe is convex, the first null is not."""
        spec = _fine_spec([0.0], 20.0, 0.5)
        region = exact_region(ula8, _single(), spec)
        assert (0,) in region
        # 14.5° sits at the first beampattern null, asin(1/4)
        assert (29,) not in region
        assert (-29,) not in region

    def test_matches_second_difference(self):
        """K=1, M=2: the sign of λ_min(H) follows a numeric second derivative."""
        geom = ArrayGeometry.ula(2)
        scenario = SourceScenario(doas=[0.2], noise_power=0.1)
        r = exact_covariance(geom, scenario)
        scan = scan_region(geom, r, _fine_spec([math.degrees(0.2)], 60.0, 2.0))
        h = 1e-4

        def f(v):
            return float(dml_objective(projector_bundle(geom, [v]), r))

        angles = scan.angles[..., 0]
        numeric = np.array([(f(v + h) - 2 * f(v) + f(v - h)) / h**2 for v in angles])
        scale = np.max(np.abs(numeric))
        assert_allclose(scan.lambda_min, numeric, atol=1e-4 * scale)
        clear = np.abs(numeric) > 1e-3 * scale
        assert np.array_equal(scan.in_exact[clear], numeric[clear] > 0)

    def test_out_of_range_cells_skipped(self, ula8):
        """Cells at or beyond ±90° are invalid and never convex."""
        spec = _fine_spec([84.5], 10.0, 1.0)
        scan = scan_region(ula8, exact_covariance(ula8, _single(84.5)), spec)
        assert int(np.count_nonzero(~scan.valid)) == 5
        assert not np.any(scan.in_exact[~scan.valid])
        assert scan.region().skipped == 5

    def test_coincident_cells_skipped(self, ula8):
        """Cells with ϑ_1 = ϑ_2 are ill-conditioned and skipped."""
        scenario = SourceScenario.from_degrees([0.0, 2.0], 10.0)
        scan = scan_region(ula8, exact_covariance(ula8, scenario), _fine_spec([0.0, 2.0], 4.0, 1.0))
        assert int(np.count_nonzero(~scan.valid)) >= 7
        assert not np.any(scan.in_exact[~scan.valid])


class TestApproxRegion:
    """Tests for the criterion and half-beamwidth regions."""

    def test_criterion_symmetric(self, ula8):
        """K=1 at broadside: the criterion interval is symmetric about θ."""
        region = approx_region(ula8, _single(), _fine_spec([0.0], 20.0, 0.5))
        offsets = sorted(cell[0] for cell in region.cells)
        assert offsets == sorted(-o for o in offsets)
        assert (0,) in region
        # BW_0.5/2 = 6.4°
        assert max(offsets) == 12

    def test_half_beamwidth_box(self, ula8, pair):
        """Default lattice: the BW_0.5/2 box has 21 cells per axis."""
        region = approx_region(ula8, pair, default_scan_spec(ula8, pair.doas), "half_beamwidth")
        assert region.measure == 21 * 21

    def test_independent_of_powers(self, ula8, pair):
        """The criterion ignores source powers and noise."""
        spec = default_scan_spec(ula8, pair.doas)
        louder = SourceScenario(doas=pair.doas, powers=[5.0, 0.2], noise_power=2.0)
        assert approx_region(ula8, pair, spec).cells == approx_region(ula8, louder, spec).cells


class TestMetrics:
    """Tests for IRR/IAR."""

    def test_identical(self):
        """Ω_A = Ω_R gives (1, 1)."""
        region = _region({(0,), (1,)})
        assert irr_iar(region, region) == (1.0, 1.0)

    def test_disjoint(self):
        """Disjoint regions give (0, 0)."""
        assert irr_iar(_region({(0,)}), _region({(1,)})) == (0.0, 0.0)

    def test_kth_root(self):
        """Ratios are K-th roots of the measure ratios."""
        exact = _region({(0, 0), (0, 1), (1, 0), (1, 1)}, k=2)
        approx = _region({(0, 0)}, k=2)
        irr, iar = irr_iar(exact, approx)
        assert irr == pytest.approx(0.5)
        assert iar == pytest.approx(1.0)

    def test_empty_region(self):
        """An empty region makes the ratios undefined."""
        with pytest.raises(RegionError):
            irr_iar(_region(set()), _region({(0,)}))
        with pytest.raises(RegionError):
            irr_iar(_region({(0,)}), _region(set()))

    def test_lattice_mismatch(self):
        """Regions from different scans cannot be compared."""
        other = ConvexRegion(cells=frozenset({(0,)}), counts=(3,), step=(0.1,), center=(0.0,))
        with pytest.raises(RegionError):
            irr_iar(_region({(0,)}), other)

    def test_region_metrics_bounded(self, ula8, pair):
        """Both modes give ratios in [0, 1]."""
        metrics = region_metrics(
            ula8, pair, default_scan_spec(ula8, pair.doas), modes=list(ApproxMode)
        )
        assert set(metrics) == set(ApproxMode)
        for irr, iar in metrics.values():
            assert 0.0 < irr <= 1.0
            assert 0.0 < iar <= 1.0


class TestStructure:
    """Numeric checks on the matrices the region analysis relies on."""

    def test_projector_minus_direction(self, ula8):
        """P⊥ − e_i e_iᴴ has M−K−1 unit and K+1 zero eigenvalues."""
        rng = np.random.default_rng(5)
        theta = np.radians([-20.0, 15.0])
        vartheta = theta + rng.uniform(-0.05, 0.05, 2)
        bundle = projector_bundle(ula8, vartheta)
        a = steering_matrix(ula8, theta)
        for i in range(2):
            e = bundle.P_perp @ a[:, i]
            e = e / np.linalg.norm(e)
            eigenvalues = np.linalg.eigvalsh(bundle.P_perp - np.outer(e, e.conj()))
            assert_allclose(eigenvalues[:3], 0.0, atol=1e-8)
            assert_allclose(eigenvalues[3:], 1.0, atol=1e-8)

    @pytest.mark.parametrize("origin", [0.0, -1.75, 2.3])
    def test_cross_term_is_real(self, origin):
        """For a ULA with exact R, diag(B†AΣAᴴP⊥D) is real whatever the origin."""
        geom = ArrayGeometry.ula(8).translated(origin)
        scenario = SourceScenario.from_degrees([-10.0, 25.0], 10.0, powers=[1.0, 3.0])
        a = steering_matrix(geom, scenario.doas)
        signal = a @ scenario.source_covariance @ a.conj().T
        rng = np.random.default_rng(8)
        for _ in range(5):
            vartheta = scenario.doas_array + rng.uniform(-0.1, 0.1, 2)
            bundle = projector_bundle(geom, vartheta)
            values = np.diag(bundle.B_pinv @ signal @ bundle.P_perp @ bundle.D)
            assert np.all(np.abs(values.imag) <= 1e-10 * np.abs(values) + 1e-13)

    def test_cross_products_nearly_diagonal(self, ula8):
        """Well separated DOAs on M=8 give a nearly diagonal BᴴA."""
        theta = np.radians([-20.0, 20.0])
        ratios = approximation_ratios(ula8, theta, theta)
        assert ratios.bha < 0.15

    def test_single_source_ratios(self, ula8):
        """With one source there are no off-diagonal terms."""
        ratios = approximation_ratios(ula8, [0.1], [0.12])
        assert (ratios.bha, ratios.dha, ratios.dhd) == (0.0, 0.0, 0.0)


class TestMapAndSweep:
    """Tests for the map and sweep drivers."""

    def test_map_rows(self, ula8, pair):
        """One row per cell with degrees, λ_min and both memberships."""
        region_map = convexity_map(ula8, pair, _fine_spec([-7.5, 7.5], 4.0, 1.0))
        rows = list(region_map.rows())
        assert region_map.header() == [
            "vartheta_1_deg",
            "vartheta_2_deg",
            "lambda_min",
            "in_exact",
            "in_approx",
        ]
        assert len(rows) == 81
        assert rows[40][:2] == pytest.approx([-7.5, 7.5])
        assert rows[40][3:] == [1, 1]

    def test_sweep_with_sample_covariance(self):
        """Per-trial rows plus one mean row per mode."""
        sweep = metrics_sweep([8], [10.0], [-7.5, 7.5], trials=2, seed=3, modes=list(ApproxMode))
        assert sweep.failures == 0
        assert len(sweep.rows) == 6
        means = sweep.means()
        assert {row.mode for row in means} == set(ApproxMode)
        for row in means:
            assert 0.0 < row.irr <= 1.0 and 0.0 < row.iar <= 1.0
            assert row.as_row()[:4] == [8, 10.0, row.mode.value, "mean"]

    def test_sweep_exact_runs_once(self):
        """With the exact R only one trial is run."""
        sweep = metrics_sweep([8], [10.0], [-7.5, 7.5], trials=5, use_sample=False)
        assert [row.trial for row in sweep.rows] == [0, "mean"]

    def test_sweep_means_by_array_size(self):
        """Measured means at ±7.5°, 10 dB: criterion mode keeps IRR near 1 and IAR grows with M."""
        sweep = metrics_sweep([8, 12], [10.0], [-7.5, 7.5], trials=10, modes=list(ApproxMode))
        means = {(row.m, row.mode): (row.irr, row.iar) for row in sweep.means()}
        assert means[8, ApproxMode.CRITERION] == pytest.approx((0.994, 0.794), abs=0.03)
        assert means[12, ApproxMode.CRITERION] == pytest.approx((1.0, 0.843), abs=0.03)
        assert means[12, ApproxMode.CRITERION][1] > means[8, ApproxMode.CRITERION][1]
        assert means[8, ApproxMode.HALF_BEAMWIDTH] == pytest.approx((0.629, 0.982), abs=0.03)
        assert means[12, ApproxMode.HALF_BEAMWIDTH] == pytest.approx((0.608, 1.0), abs=0.03)


class TestRegionShape:
    """Shape of the exact region around two well-separated sources."""

    def test_bounded_connected_around_truth(self, ula8):
        """At 0°/30°, Ω_R around θ is one bounded blob between 0.4 and 1.2 beamwidths wide."""
        scenario = SourceScenario.from_degrees([0.0, 30.0], 10.0, snapshots=200)
        spec = default_scan_spec(ula8, scenario.doas)
        scan = scan_region(ula8, exact_covariance(ula8, scenario), spec)
        center = spec.counts
        assert scan.in_exact[center]

        labels, _ = ndimage.label(scan.in_exact)
        blob = labels == labels[center]
        indices = np.argwhere(blob)
        last = np.asarray(scan.shape) - 1
        assert np.all(indices.min(axis=0) > 0)
        assert np.all(indices.max(axis=0) < last)

        bw = half_power_beamwidth(ula8)
        extent = (indices.max(axis=0) - indices.min(axis=0)) * np.asarray(spec.step)
        assert np.all(extent >= 0.4 * bw)
        assert np.all(extent <= 1.2 * bw)
