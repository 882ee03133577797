import numpy as np
import pydantic
import pytest

from msfusion.core.config import get_settings
from msfusion.core.error_handlers import (
    EXIT_INPUT_INVALID,
    EXIT_NOT_FOUND,
    EXIT_NUMERICAL,
    EXIT_UNEXPECTED,
    AppException,
    InputValidationError,
    NotFoundError,
    NumericalError,
    create_error_record,
    map_exception,
    report_exception,
)
from msfusion.core.logging_config import (
    StageTimer,
    clear_run_context,
    get_run_id,
    keyframe_context,
    keyframe_id_var,
    set_run_context,
)
from msfusion.core.utils import angle_between_deg, normalize_vectors, rotate_towards
from msfusion.domains.fusion.schemas import FusionConfig
from msfusion.domains.mps.exceptions import DegeneratePriors

# ==================== SETTINGS ====================


def test_settings_defaults():
    settings = get_settings()
    assert settings.ENVIRONMENT == "development"
    assert settings.KEYFRAME_BUDGET_MS == 2000.0
    assert settings.PIPELINE_WORKERS == 2
    assert settings.log_format == "console"


def test_production_forces_json_logs(monkeypatch):
    monkeypatch.setenv("ENVIRONMENT", "production")
    monkeypatch.setenv("LOG_FORMAT", "console")
    get_settings.cache_clear()
    settings = get_settings()
    assert settings.is_production
    assert settings.log_format == "json"


def test_settings_are_cached():
    assert get_settings() is get_settings()


# ==================== ERRORS ====================


def test_category_exit_codes():
    assert InputValidationError("bad").exit_code == EXIT_INPUT_INVALID
    assert NumericalError("bad").exit_code == EXIT_NUMERICAL
    assert NotFoundError("gone").exit_code == EXIT_NOT_FOUND
    assert AppException("boom").exit_code == EXIT_UNEXPECTED


def test_domain_error_keeps_code():
    exc = DegeneratePriors(segment=2, min_eigenvalue=0.0)
    assert map_exception(exc) is exc
    assert exc.error_code == "DEGENERATE_PRIORS"
    assert exc.exit_code == EXIT_NUMERICAL


def test_foreign_exceptions_are_mapped():
    assert map_exception(ValueError("x")).error_code == "VALUE_ERROR"
    assert map_exception(np.linalg.LinAlgError("x")).exit_code == EXIT_NUMERICAL
    assert map_exception(FileNotFoundError("x")).exit_code == EXIT_NOT_FOUND

    unexpected = map_exception(RuntimeError("x"))
    assert unexpected.error_code == "UNEXPECTED_ERROR"
    assert unexpected.details == {"exception_type": "RuntimeError"}


def test_validation_error_maps_to_input_error():
    with pytest.raises(pydantic.ValidationError) as info:
        FusionConfig(weight_position=-1.0)
    mapped = map_exception(info.value)
    assert mapped.error_code == "CONFIG_VALIDATION_ERROR"
    assert mapped.exit_code == EXIT_INPUT_INVALID


def test_error_record_shape():
    record = create_error_record(
        DegeneratePriors(segment=1, min_eigenvalue=1e-9), keyframe_id=4
    )
    assert set(record) == {"code", "message", "details", "keyframe_id"}
    assert record["code"] == "DEGENERATE_PRIORS"
    assert record["keyframe_id"] == 4
    assert record["details"]["segment"] == 1


def test_report_exception_without_sentry_returns_mapped():
    mapped = report_exception(ValueError("nope"), keyframe_id=1, stage="mixing")
    assert isinstance(mapped, InputValidationError)


# ==================== LOGGING CONTEXT ====================


def test_run_context_round_trip():
    run_id = set_run_context()
    assert get_run_id() == run_id
    clear_run_context()
    assert get_run_id() is None


def test_keyframe_context_is_restored():
    assert keyframe_id_var.get() is None
    with keyframe_context(3, run_id="abc"):
        assert keyframe_id_var.get() == 3
        assert get_run_id() == "abc"
    assert keyframe_id_var.get() is None
    assert get_run_id() is None


def test_stage_timer_records_duration():
    timings = {}
    with StageTimer("fusion", timings, keyframe_id=0):
        sum(range(1000))
    assert "fusion" in timings
    assert timings["fusion"] >= 0.0


def test_stage_timer_records_failed_stage():
    timings = {}
    with pytest.raises(RuntimeError):
        with StageTimer("mixing", timings):
            raise RuntimeError("fail")
    assert "mixing" in timings


# ==================== ARRAY HELPERS ====================


def test_normalize_vectors_flags_zero():
    unit, ok = normalize_vectors(np.array([[3.0, 0.0, 4.0], [0.0, 0.0, 0.0]]))
    np.testing.assert_allclose(unit[0], [0.6, 0.0, 0.8])
    np.testing.assert_array_equal(unit[1], 0.0)
    assert ok.tolist() == [True, False]


def test_angle_between_is_clamped():
    a = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
    b = np.array([[0.0, 0.0, 1.0 + 1e-15], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])
    np.testing.assert_allclose(angle_between_deg(a, b), [0.0, 180.0, 90.0], atol=1e-6)


def test_rotate_towards_maps_source_onto_target():
    source = np.array([[0.0, 0.0, 1.0]])
    target = np.array([[0.0, 1.0, 0.0]])
    rotated, ok = rotate_towards(source.copy(), source, target)
    assert ok.all()
    np.testing.assert_allclose(rotated, target, atol=1e-12)

    other, _ = rotate_towards(np.array([[1.0, 0.0, 0.0]]), source, target)
    np.testing.assert_allclose(other, [[1.0, 0.0, 0.0]], atol=1e-12)


def test_rotate_towards_rejects_antipodes():
    source = np.array([[0.0, 0.0, 1.0]])
    _, ok = rotate_towards(source, source, -source)
    assert not ok.any()
