import numpy as np
import pandas as pd
import pytest

from fusion_prognostics.exceptions import IngestionError
from fusion_prognostics.signals.frames import from_long_frame, to_long_frame
from tests.conftest import make_dataset


def observed_dataset():
    grid = np.linspace(0.1, 0.8, 8)
    values = np.arange(3 * 2 * 8, dtype=float).reshape(3, 2, 8) / 7
    values[1, :, 6:] = np.nan
    return make_dataset(values, ttf=[0.85, 0.65, 0.9], grid=grid)


def test_long_frame_round_trip():
    dataset = observed_dataset()

    signals, ttf = to_long_frame(dataset)
    restored = from_long_frame(signals, ttf)

    assert restored.system_ids == dataset.system_ids
    assert restored.sensor_ids == dataset.sensor_ids
    assert np.array_equal(restored.time_grid, dataset.time_grid)
    assert np.array_equal(restored.values, dataset.values, equal_nan=True)
    assert np.array_equal(restored.ttf, dataset.ttf)
    assert restored.systems[1].observed_through == 6


def test_long_frame_only_holds_observed_readings():
    signals, _ = to_long_frame(observed_dataset())

    assert list(signals.columns) == ["system_id", "sensor_id", "time", "value"]
    assert len(signals) == 2 * 8 + 2 * 6 + 2 * 8
    assert signals["value"].notna().all()


def test_series_are_interpolated_onto_the_union_grid():
    signals = pd.DataFrame(
        {
            "system_id": ["a", "a", "a", "b", "b"],
            "sensor_id": ["1", "1", "1", "1", "1"],
            "time": [0.0, 1.0, 2.0, 0.0, 2.0],
            "value": [0.0, 1.0, 2.0, 10.0, 30.0],
        }
    )

    dataset = from_long_frame(signals)

    assert np.array_equal(dataset.time_grid, [0.0, 1.0, 2.0])
    assert np.allclose(dataset.systems[1].values[0], [10.0, 20.0, 30.0])


class TestIngestionErrors:
    def test_missing_columns_point_at_the_header(self):
        with pytest.raises(IngestionError) as error:
            from_long_frame(pd.DataFrame({"system_id": ["a"], "time": [0.1]}))

        assert error.value.line_number == 1

    def test_non_numeric_value_points_at_its_line(self):
        signals, ttf = to_long_frame(observed_dataset())
        signals["value"] = signals["value"].astype(object)
        signals.loc[2, "value"] = "broken"

        with pytest.raises(IngestionError) as error:
            from_long_frame(signals, ttf)

        assert error.value.line_number == 4

    def test_duplicate_reading(self):
        signals, _ = to_long_frame(observed_dataset())
        signals = pd.concat([signals, signals.iloc[[5]]], ignore_index=True)

        with pytest.raises(IngestionError) as error:
            from_long_frame(signals)

        assert error.value.line_number == len(signals) + 1

    def test_nonpositive_ttf(self):
        signals, ttf = to_long_frame(observed_dataset())
        ttf.loc[1, "ttf"] = -1.0

        with pytest.raises(IngestionError) as error:
            from_long_frame(signals, ttf)

        assert error.value.line_number == 3
        assert error.value.exit_code == 2

