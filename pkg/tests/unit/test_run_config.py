# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Unit tests for the run configuration."""

import pathlib

import pytest
import yaml

import run_config
from exceptions import ConfigInvalidError
from run_config import RunConfig


def test_defaults() -> None:
    """
    arrange: nothing.
    act: load the configuration without a file.
    assert: the indoor defaults are used.
    """
    config = run_config.load_config()

    assert config.mode == "LO"
    assert config.knot_frequency == 100.0
    assert config.batch_span == 0.01
    assert config.lidar.leaf_size == 0.25
    assert config.knot_interval == pytest.approx(0.01)
    assert not config.uses_imu
    assert config.lidar_count == 1
    assert [entry.sensor_id for entry in config.extrinsics] == [0, 1]


def test_outdoor_profile() -> None:
    """
    arrange: nothing.
    act: load the outdoor profile.
    assert: the outdoor LiDAR settings replace the indoor ones.
    """
    config = run_config.load_config(profile="outdoor")

    assert config.lidar.leaf_size == 0.5
    assert config.lidar.max_range == 150.0
    assert config.lidar.sigma == 0.02


@pytest.mark.parametrize(
    "lidar, expected",
    [
        pytest.param({}, 0.01, id="derived from the default noise"),
        pytest.param({"sigma": 0.05}, 0.0625, id="derived from the noise"),
        pytest.param({"sigma": 0.05, "outlier_threshold": 0.2}, 0.2, id="explicit"),
    ],
)
def test_variance_threshold(lidar: dict, expected: float) -> None:
    """
    arrange: LiDAR settings with and without an explicit outlier threshold.
    act: read the variance gate threshold.
    assert: it is the explicit value or five range noise stds squared.
    """
    config = run_config.from_mapping({"lidar": lidar})

    assert config.lidar.variance_threshold == pytest.approx(expected)


@pytest.mark.parametrize(
    "mode, uses_imu, lidar_count",
    [
        pytest.param("LO", False, 1, id="lo"),
        pytest.param("LIO", True, 1, id="lio"),
        pytest.param("MLO", False, 2, id="mlo"),
        pytest.param("MLIO", True, 2, id="mlio"),
    ],
)
def test_mode_properties(mode: str, uses_imu: bool, lidar_count: int) -> None:
    """
    arrange: a configuration for each mode.
    act: read the derived properties.
    assert: the IMU use and LiDAR count follow the mode.
    """
    config = run_config.from_mapping({"mode": mode})

    assert config.uses_imu == uses_imu
    assert config.lidar_count == lidar_count


@pytest.mark.parametrize(
    "values, field",
    [
        pytest.param({"knot_frequency": 100.0, "batch_span": 0.05}, "__root__", id="long batch"),
        pytest.param({"knot_frequency": -1.0}, "knot_frequency", id="negative knot frequency"),
        pytest.param({"mode": "GNSS"}, "mode", id="unknown mode"),
        pytest.param({"lidar": {"n_neighbors": 2}}, "lidar.n_neighbors", id="too few neighbors"),
        pytest.param(
            {"lidar": {"min_range": 5.0, "max_range": 1.0}}, "lidar.__root__", id="range order"
        ),
        pytest.param({"lidar": {"colour": "red"}}, "lidar.colour", id="unknown key"),
        pytest.param(
            {"extrinsics": [{"sensor_id": 0}, {"sensor_id": 0}]}, "extrinsics", id="duplicate id"
        ),
        pytest.param(
            {"extrinsics": [{"sensor_id": 0, "rotation": [0.0, 0.0, 0.0, 0.0]}]},
            "extrinsics.0.rotation",
            id="zero rotation",
        ),
        pytest.param(
            {"init": {"rcp_positions": [[0.0, 0.0, 0.0]] * 3}},
            "init.rcp_positions",
            id="three control points",
        ),
        pytest.param({"simulator": {"outlier_ratio": 1.0}}, "simulator.outlier_ratio", id="ratio"),
    ],
)
def test_invalid_values(values: dict, field: str) -> None:
    """
    arrange: an invalid configuration mapping.
    act: validate it.
    assert: ConfigInvalidError names the offending field.
    """
    with pytest.raises(ConfigInvalidError) as exc_info:
        run_config.from_mapping(values)

    assert field in exc_info.value.msg.split(": ", 1)[1].split()


def test_batch_span_of_four_knots_allowed() -> None:
    """
    arrange: a batch span of exactly four knot intervals.
    act: validate it.
    assert: the configuration is accepted.
    """
    config = run_config.from_mapping({"knot_frequency": 20.0, "batch_span": 0.2})

    assert config.batch_span == 0.2


def test_unknown_profile() -> None:
    """
    arrange: nothing.
    act: load an unknown profile.
    assert: ConfigInvalidError is raised.
    """
    with pytest.raises(ConfigInvalidError):
        run_config.from_mapping({}, profile="underwater")  # type: ignore[arg-type]


def test_extrinsics_are_normalized_and_sorted() -> None:
    """
    arrange: extrinsics out of order with a scaled quaternion.
    act: validate them.
    assert: entries are sorted by id and rotations are unit.
    """
    config = run_config.from_mapping(
        {
            "extrinsics": [
                {"sensor_id": 1, "rotation": [0.0, 2.0, 0.0, 0.0]},
                {"sensor_id": 0, "rotation": [3.0, 0.0, 0.0, 0.0]},
            ]
        }
    )

    assert [entry.sensor_id for entry in config.extrinsics] == [0, 1]
    assert config.extrinsics[0].rotation == (1.0, 0.0, 0.0, 0.0)
    assert config.extrinsics[1].rotation == (0.0, 1.0, 0.0, 0.0)


def test_initial_orientation_normalized() -> None:
    """
    arrange: an initial orientation that is not unit.
    act: validate it.
    assert: the orientation is normalized.
    """
    config = run_config.from_mapping({"init": {"orientation": [0.0, 0.0, 0.0, 2.0]}})

    assert config.init.orientation == (0.0, 0.0, 0.0, 1.0)


def test_load_round_trip(tmp_path: pathlib.Path) -> None:
    """
    arrange: a configuration with non-default values dumped to YAML.
    act: load the file back.
    assert: the same configuration is returned.
    """
    config = run_config.from_mapping(
        {"mode": "MLIO", "knot_frequency": 50.0, "lidar": {"sigma": 0.05}, "seed": 7}
    )
    path = tmp_path / "run.yaml"
    path.write_text(run_config.dump_config(config), encoding="utf-8")

    loaded = run_config.load_config(path)

    assert loaded == config


def test_dump_is_plain_yaml() -> None:
    """
    arrange: the default configuration.
    act: dump it.
    assert: the document holds every section and only plain types.
    """
    document = yaml.safe_load(run_config.dump_config(RunConfig()))

    assert set(document) >= {"estimator", "lidar", "imu", "init", "extrinsics", "simulator"}
    assert document["extrinsics"][1]["rotation"] == [0.0, 1.0, 0.0, 0.0]


@pytest.mark.parametrize(
    "content",
    [
        pytest.param("mode: [LO\n", id="malformed yaml"),
        pytest.param("- LO\n- LIO\n", id="not a mapping"),
        pytest.param("knot_frequency: fast\n", id="wrong type"),
    ],
)
def test_load_invalid_file(tmp_path: pathlib.Path, content: str) -> None:
    """
    arrange: a configuration file with invalid content.
    act: load it.
    assert: ConfigInvalidError is raised.
    """
    path = tmp_path / "run.yaml"
    path.write_text(content, encoding="utf-8")

    with pytest.raises(ConfigInvalidError):
        run_config.load_config(path)


def test_load_missing_file(tmp_path: pathlib.Path) -> None:
    """
    arrange: a path that does not exist.
    act: load it.
    assert: ConfigInvalidError is raised.
    """
    with pytest.raises(ConfigInvalidError):
        run_config.load_config(tmp_path / "missing.yaml")


def test_load_empty_file(tmp_path: pathlib.Path) -> None:
    """
    arrange: an empty configuration file.
    act: load it.
    assert: the profile defaults are returned.
    """
    path = tmp_path / "run.yaml"
    path.write_text("", encoding="utf-8")

    assert run_config.load_config(path) == RunConfig()


def test_shipped_config_holds_the_defaults() -> None:
    """
    arrange: the configuration file at the repository root.
    act: load it.
    assert: it equals the indoor profile defaults and lists every key.
    """
    path = pathlib.Path(__file__).parents[2] / "config.yaml"

    loaded = run_config.load_config(path)

    assert loaded == RunConfig()
    assert yaml.safe_load(path.read_text(encoding="utf-8")) == yaml.safe_load(
        run_config.dump_config(loaded)
    )
