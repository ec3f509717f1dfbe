import csv
import itertools
import json
import math

import numpy as np
import pytest

from flashkde import bench, kde_flash, laplace_flash, perfmodel, silverman_bandwidth
from flashkde.bench import EstimateError, GaussianMixture

INT_PHI_SQ = 0.282094791773878  # 1 / (2 sqrt(pi)), mpmath


@pytest.fixture(scope="module")
def gmm1d():
    return bench.load_mixture("gmm1d")


@pytest.fixture
def std_normal():
    return GaussianMixture([1.0], [[0.0]], [1.0], "n01")


class TestMixture:
    def test_presets(self, gmm1d):
        np.testing.assert_array_equal(gmm1d.weights, [0.5, 0.3, 0.2])
        np.testing.assert_array_equal(gmm1d.means[:, 0], [-2.0, 0.0, 3.0])
        np.testing.assert_array_equal(gmm1d.sigmas, [0.5, 1.0, 0.7])
        m16 = bench.load_mixture("gmm16d")
        assert m16.d == 16 and len(m16.weights) == 4
        np.testing.assert_array_equal(m16.weights, [0.25] * 4)
        np.testing.assert_array_equal(m16.sigmas, [1.0] * 4)

    def test_validation(self):
        with pytest.raises(ValueError):
            GaussianMixture([0.5, 0.6], [[0.0], [1.0]], [1.0, 1.0])
        with pytest.raises(ValueError):
            GaussianMixture([1.0], [[0.0]], [0.0])
        with pytest.raises(ValueError):
            GaussianMixture([0.5, 0.5], [[0.0]], [1.0, 1.0])

    def test_digest_ignores_name(self, gmm1d):
        renamed = GaussianMixture(gmm1d.weights, gmm1d.means, gmm1d.sigmas, "other")
        assert renamed.digest() == gmm1d.digest()
        moved = GaussianMixture(gmm1d.weights, gmm1d.means + 1, gmm1d.sigmas)
        assert moved.digest() != gmm1d.digest()

    def test_roundtrip_file(self, tmp_path, gmm1d):
        p = tmp_path / "mix.json"
        p.write_text(json.dumps(gmm1d.to_dict()))
        assert bench.load_mixture(p).digest() == gmm1d.digest()
        p.write_text(json.dumps(gmm1d.to_dict() | {"version": 99}))
        with pytest.raises(ValueError, match="version"):
            bench.load_mixture(p)
        with pytest.raises(FileNotFoundError):
            bench.load_mixture("nope")


class TestSampling:
    def test_streams(self):
        a = bench.rng_stream(3, 1).standard_normal(5)
        np.testing.assert_array_equal(a, bench.rng_stream(3, 1).standard_normal(5))
        assert not np.array_equal(a, bench.rng_stream(3, 2).standard_normal(5))
        assert not np.array_equal(a, bench.rng_stream(4, 1).standard_normal(5))

    def test_deterministic(self, gmm1d):
        np.testing.assert_array_equal(bench.sample_mixture(gmm1d, 500, 11),
                                      bench.sample_mixture(gmm1d, 500, 11))

    def test_tiny_sigma_mean(self):
        mix = GaussianMixture([1.0], [[1.0, -2.0]], [1e-3])
        x = bench.sample_mixture(mix, 400, 0)
        assert np.all(np.abs(x.mean(axis=0) - [1.0, -2.0]) < 5e-3 / math.sqrt(400))

    def test_zero_weight_component(self):
        mix = GaussianMixture([1.0, 0.0], [[0.0], [100.0]], [1.0, 1.0])
        assert np.all(bench.sample_mixture(mix, 1000, 1) < 10)

    def test_bad_n(self, gmm1d):
        with pytest.raises(ValueError):
            bench.sample_mixture(gmm1d, 0, 1)


class TestPdf:
    def test_peak(self, std_normal):
        assert bench.mixture_pdf(std_normal, [[0.0]])[0] == pytest.approx(1 / math.sqrt(2 * math.pi))

    def test_far_apart(self):
        mix = GaussianMixture([0.5, 0.5], [[0.0], [100.0]], [1.0, 1.0])
        assert bench.mixture_pdf(mix, [[0.0]])[0] == pytest.approx(0.5 / math.sqrt(2 * math.pi))

    def test_integrates(self, gmm1d):
        x = np.linspace(-10, 10, 20001)
        assert abs(np.trapezoid(bench.mixture_pdf(gmm1d, x), x) - 1) < 1e-6

    def test_dimension_check(self, gmm1d):
        with pytest.raises(ValueError):
            bench.mixture_pdf(gmm1d, np.zeros((3, 2)))


class TestErrorMetrics:
    @pytest.mark.parametrize("mode", ["grid1d", "mc"])
    def test_exact_estimate(self, gmm1d, mode):
        rep = bench.error_metrics(lambda q: bench.mixture_pdf(gmm1d, q), gmm1d, mode, 2000)
        assert rep.mise == 0 and rep.miae == 0 and rep.negative_mass == 0

    def test_zero_estimate(self, std_normal):
        rep = bench.error_metrics(lambda q: np.zeros(len(q)), std_normal, "grid1d", 4001)
        assert rep.mise == pytest.approx(INT_PHI_SQ, abs=1e-6)
        assert rep.miae == pytest.approx(1.0, abs=1e-6)

    def test_non_finite(self, std_normal):
        with pytest.raises(EstimateError, match=r"\[sdkde\]"):
            bench.error_metrics(lambda q: np.full(len(q), np.nan), std_normal, method="sdkde")

    def test_grid_needs_1d(self):
        mix = GaussianMixture([1.0], [[0.0, 0.0]], [1.0])
        with pytest.raises(ValueError):
            bench.error_metrics(lambda q: np.zeros(len(q)), mix, "grid1d")

    def test_negative_mass_reported(self, std_normal):
        train = bench.sample_mixture(std_normal, 50, 0)
        rep = bench.error_metrics(lambda q: laplace_flash(train, q, 0.3).values, std_normal)
        assert rep.negative_mass > 0

    def test_mc_matches_grid(self, gmm1d):
        train = bench.sample_mixture(gmm1d, 4096, 0)
        h = silverman_bandwidth(train)
        grid = bench.error_metrics(lambda q: kde_flash(train, q, h).values, gmm1d, "grid1d", 20001)
        mc = bench.error_metrics(lambda q: kde_flash(train, q, h).values, gmm1d, "mc", 100_000, seed=5)
        assert abs(mc.mise - grid.mise) < 3 * mc.mise_se
        assert abs(mc.miae - grid.miae) < 3 * mc.miae_se


class TestErrorSweep:
    def test_cardinality_order_and_invariants(self, gmm1d):
        rows = bench.error_sweep(gmm1d, ["kde", "laplace", "laplace-nofuse", "sdkde"],
                                 [2000, 4000, 8000], [0, 1, 2])
        assert len(rows) == 36
        keys = [(r.method, r.n_train, r.seed) for r in rows]
        assert keys == list(itertools.product(["kde", "laplace", "laplace-nofuse", "sdkde"],
                                              [2000, 4000, 8000], [0, 1, 2]))
        by = {(r.method, r.n_train, r.seed): r for r in rows}
        for n, s in itertools.product([2000, 4000, 8000], [0, 1, 2]):
            a, b = by[("laplace", n, s)], by[("laplace-nofuse", n, s)]
            assert abs(a.mise - b.mise) <= 1e-10 * a.mise
            assert by[("kde", n, s)].negative_mass == 0.0
            assert by[("sdkde", n, s)].negative_mass == 0.0
        assert all(not r.error for r in rows)

    def test_two_methods_eighteen_reports(self, gmm1d):
        assert len(bench.error_sweep(gmm1d, ["kde", "sdkde"], [2000, 4000, 8000], [0, 1, 2],
                                     n_eval=501)) == 18

    def test_failed_cell_recorded(self, gmm1d):
        rows = bench.error_sweep(gmm1d, ["kde"], [100], [0], rule="fixed", h=None)
        assert len(rows) == 1 and math.isnan(rows[0].mise) and "ValueError" in rows[0].error

    def test_unknown_method(self, gmm1d):
        with pytest.raises(ValueError):
            bench.error_sweep(gmm1d, ["kde", "knn"], [100], [0])

    def test_mc_default_for_16d(self):
        mix = bench.load_mixture("gmm16d")
        rows = bench.error_sweep(mix, ["kde"], [256], [0], n_eval=500)
        assert rows[0].mode == "mc" and rows[0].mise_se is not None and rows[0].mise_se > 0

    @pytest.mark.slow
    def test_kde_rate_standard_normal(self, std_normal):
        ns = [1000, 2000, 4000, 8000, 16000, 32000]
        rows = bench.error_sweep(std_normal, ["kde"], ns, [0, 1, 2])
        med = [np.median([r.mise for r in rows if r.n_train == n]) for n in ns]
        assert -1.0 <= bench.loglog_slope(ns, med) <= -0.6


def test_laplace_negative_mass_estimate():
    train = bench.sample_mixture(GaussianMixture([1.0], [[0.0]], [1.0]), 200, 0)
    m, se = bench.laplace_negative_mass(train, 0.3, 4096, seed=1)
    assert m > 0 and 0 < se < m
    x = np.linspace(-8, 8, 200_001)
    exact = np.trapezoid(np.maximum(0, -laplace_flash(train, x, 0.3).values), x)
    assert abs(m - exact) < 3 * se
    assert (m, se) == bench.laplace_negative_mass(train, 0.3, 4096, seed=1)


class TestRuntime:
    def _clock(self, durations):
        ticks = iter(np.cumsum([0.0] + [x for d in durations for x in (d, 1.0)]))
        return lambda: float(next(ticks))

    def test_median_and_layout(self):
        clock = self._clock([5.0, 1.0, 3.0, 2.0, 4.0])
        rows = bench.runtime_sweep(["sdkde"], ["flash"], [128], 2, [(32, 64)], repeats=5, clock=clock)
        assert len(rows) == 1 and rows[0].seconds == 3.0 and rows[0].n_test == 16

    def test_block_sweep_grid(self):
        tiles = [(m, n) for m in bench.SWEEP_BLOCK_M for n in bench.SWEEP_BLOCK_N]
        rows = bench.runtime_sweep(["kde"], ["flash", "naive"], [64], 2, tiles, repeats=1)
        flash = [r for r in rows if r.engine == "flash"]
        naive = [r for r in rows if r.engine == "naive"]
        assert len(flash) == 24 and len(naive) == 1
        assert sorted({r.tile_m for r in flash}) == [32, 64, 128, 256]
        assert sorted({r.tile_n for r in flash}) == [32, 64, 128, 256, 512, 1024]
        assert naive[0].tile_m is None and all(r.seconds > 0 for r in rows)

    def test_utilization_and_flops(self):
        rows = bench.runtime_sweep(["sdkde"], ["flash"], [256], 16, [(64, 1024)], repeats=1,
                                   clock=self._clock([0.5]))
        assert rows[0].flops_model == perfmodel.flops_pipeline(16, 256, 32)
        bench.add_utilization(rows, perfmodel.HardwareSpec(1e9, 1e9))
        assert rows[0].utilization == pytest.approx(rows[0].flops_model / 0.5e9)

    def test_mixture_dimension_checked(self):
        with pytest.raises(ValueError):
            bench.runtime_sweep(["kde"], ["flash"], [64], 16, [(8, 8)],
                                mix=bench.load_mixture("gmm1d"))


def test_loglog_slope_exact():
    ns = [1, 2, 4, 8]
    assert bench.loglog_slope(ns, [3.0 * n ** -0.8 for n in ns]) == pytest.approx(-0.8)


def test_writers(tmp_path):
    rows = bench.runtime_sweep(["kde"], ["naive"], [32], 1, [], repeats=1)
    bench.write_csv(rows, tmp_path / "r.csv")
    with open(tmp_path / "r.csv") as fh:
        table = list(csv.reader(fh))
    assert table[0] == ["method", "engine", "n_train", "n_test", "d", "tile_m", "tile_n",
                        "repeats", "seconds", "flops_model", "utilization", "error"]
    assert table[1][:7] == ["kde", "naive", "32", "4", "1", "", ""]
    assert float(table[1][8]) == rows[0].seconds
    bench.write_json(rows, tmp_path / "r.json", "runtime", {"seed": 0})
    doc = json.loads((tmp_path / "r.json").read_text())
    assert doc["schema_version"] == 1 and doc["kind"] == "runtime" and len(doc["rows"]) == 1
    with pytest.raises(ValueError):
        bench.write_csv([], tmp_path / "empty.csv")
