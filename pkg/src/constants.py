# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""This module defines constants used throughout the RESPLE odometry package."""

import numpy as np

GRAVITY_MAGNITUDE = 9.81
WORLD_UP = np.array([0.0, 0.0, 1.0])

EXP_SMALL_ANGLE = 1e-8
JACOBIAN_SMALL_ANGLE = 1e-6

POSITION_BLOCK = slice(0, 12)
ORIENTATION_BLOCK = slice(12, 24)
BIAS_ACC_BLOCK = slice(24, 27)
BIAS_GYRO_BLOCK = slice(27, 30)
STATE_DIM = 24
STATE_DIM_WITH_BIASES = 30

MAX_ACC_NORM = 200.0
MAX_GYRO_NORM = 100.0

PLANE_MIN_SPREAD_RATIO = 0.01
OUTLIER_SIGMA_SCALE = 5.0

LIDAR_LOG_COLUMNS = 5
IMU_LOG_COLUMNS = 7
TRAJECTORY_LOG_COLUMNS = 8

EXIT_OK = 0
EXIT_INPUT_ERROR = 1
EXIT_ESTIMATOR_FAILURE = 2

SIM_LIDAR_FILE = "lidar_{sensor_id}.txt"
SIM_IMU_FILE = "imu.txt"
SIM_GROUND_TRUTH_FILE = "groundtruth.txt"
SIM_CONFIG_FILE = "run_config.yaml"
