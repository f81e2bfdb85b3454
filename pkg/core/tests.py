import numpy as np
import pytest

from .exceptions import DimensionMismatch, IFMLabError, InvalidParameter, NotSPD, NotSymmetric
from .linalg import (
    angular_distance,
    frozen,
    max_principal_angle,
    orthonormality_error,
    polar_orthonormalize,
    require_psd,
    require_shape,
    require_spd,
)
from .monitoring import REGISTRY, export_metrics, monitor_fit, track_sweep_cell
from .seeding import Stream, derive_rng, derive_seed, name_key


class TestSeeding:
    def test_same_keys_same_stream(self):
        a = derive_rng(3, Stream.ENVIRONMENT, 1).standard_normal(5)
        b = derive_rng(3, Stream.ENVIRONMENT, 1).standard_normal(5)
        assert np.array_equal(a, b)

    def test_streams_are_distinct(self):
        a = derive_rng(3, Stream.ENVIRONMENT, 1).standard_normal(5)
        assert not np.array_equal(a, derive_rng(3, Stream.ENVIRONMENT, 2).standard_normal(5))
        assert not np.array_equal(a, derive_rng(3, Stream.SAMPLES, 1).standard_normal(5))
        assert not np.array_equal(a, derive_rng(4, Stream.ENVIRONMENT, 1).standard_normal(5))

    def test_derived_seed_fits_in_63_bits(self):
        seed = derive_seed(2**40, Stream.TRIAL, 7)
        assert 0 <= seed < 2**63
        assert seed == derive_seed(2**40, Stream.TRIAL, 7)

    def test_name_key_is_stable(self):
        assert name_key("ifm") == name_key("ifm")
        assert name_key("ifm") != name_key("erm")


class TestLinalg:
    def test_frozen_is_read_only_copy(self):
        source = np.eye(2)
        array = frozen(source)
        source[0, 0] = 5.0
        assert array[0, 0] == 1.0
        with pytest.raises(ValueError):
            array[0, 0] = 2.0

    def test_shape_check(self):
        with pytest.raises(DimensionMismatch):
            require_shape(np.zeros(3), (4,), "mu")

    def test_spd_checks(self):
        require_spd(np.diag([1.0, 2.0]), "A")
        with pytest.raises(NotSPD):
            require_spd(np.diag([1.0, 0.0]), "A")
        with pytest.raises(NotSymmetric):
            require_spd(np.array([[1.0, 1.0], [0.0, 1.0]]), "A")
        require_psd(np.diag([1.0, 0.0]), "B")

    def test_polar_orthonormalize(self):
        U = np.random.default_rng(0).standard_normal((3, 7))
        Q = polar_orthonormalize(U)
        assert orthonormality_error(Q) <= 1e-12
        assert max_principal_angle(Q, U) <= 1e-10

    def test_angular_distance(self):
        assert angular_distance([1.0, 0.0], [3.0, 0.0]) == 0.0
        assert angular_distance([1.0, 0.0], [0.0, 2.0]) == pytest.approx(np.pi / 2)
        assert angular_distance([1.0, 1e-12], [1.0, 0.0]) == pytest.approx(1e-12, rel=1e-6)


class TestExceptions:
    def test_bad_input_errors_are_value_errors(self):
        assert issubclass(InvalidParameter, ValueError)
        assert issubclass(InvalidParameter, IFMLabError)


class TestMonitoring:
    def test_monitor_fit_counts_outcomes(self):
        @monitor_fit("probe")
        def fit(fail=False):
            if fail:
                raise InvalidParameter("bad")
            return 1

        before_ok = REGISTRY.get_sample_value("ifm_lab_fits_total", {"algorithm": "probe", "status": "ok"}) or 0
        before_error = REGISTRY.get_sample_value("ifm_lab_fits_total", {"algorithm": "probe", "status": "error"}) or 0
        assert fit() == 1
        with pytest.raises(InvalidParameter):
            fit(fail=True)
        assert REGISTRY.get_sample_value("ifm_lab_fits_total", {"algorithm": "probe", "status": "ok"}) == before_ok + 1
        assert (
            REGISTRY.get_sample_value("ifm_lab_fits_total", {"algorithm": "probe", "status": "error"})
            == before_error + 1
        )
        assert REGISTRY.get_sample_value("ifm_lab_fit_duration_seconds_count", {"algorithm": "probe"}) >= 2

    def test_export_metrics(self, tmp_path):
        track_sweep_cell("ok")
        path = tmp_path / "metrics.prom"
        export_metrics(path)
        assert "ifm_lab_sweep_cells_total" in path.read_text()

    def test_export_without_path_is_noop(self, tmp_path):
        export_metrics("")
        assert list(tmp_path.iterdir()) == []
