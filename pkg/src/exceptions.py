# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Exceptions used by the RESPLE odometry package."""


class InputError(Exception):
    """Base class of errors caused by user supplied configuration or data.

    Attrs:
        msg (str): Explanation of the error.
    """

    def __init__(self, msg: str):
        """Initialize a new instance of the InputError exception.

        Args:
            msg (str): Explanation of the error.
        """
        super().__init__(msg)
        self.msg = msg


class ConfigInvalidError(InputError):
    """Exception raised when a run configuration is found to be invalid."""


class LogParseError(InputError):
    """Exception raised when a sensor or trajectory log cannot be parsed.

    Attrs:
        path (str): The log file being parsed.
        line (int): The 1-based line number of the offending record.
    """

    def __init__(self, msg: str, path: str, line: int):
        """Initialize a new instance of the LogParseError exception.

        Args:
            msg (str): Explanation of the error.
            path (str): The log file being parsed.
            line (int): The 1-based line number of the offending record.
        """
        super().__init__(f"{path}:{line}: {msg}")
        self.path = path
        self.line = line


class MeasurementInputError(InputError):
    """Exception raised when a measurement produces a non-finite residual.

    Attrs:
        index (int): Index of the offending measurement inside its batch.
    """

    def __init__(self, msg: str, index: int):
        """Initialize a new instance of the MeasurementInputError exception.

        Args:
            msg (str): Explanation of the error.
            index (int): Index of the offending measurement inside its batch.
        """
        super().__init__(msg)
        self.index = index


class NoTemporalOverlapError(InputError):
    """Exception raised when two trajectories share no common time range."""


class EstimatorError(Exception):
    """Base class of failures raised by the recursive spline estimator.

    Attrs:
        msg (str): Explanation of the error.
    """

    def __init__(self, msg: str):
        """Initialize a new instance of the EstimatorError exception.

        Args:
            msg (str): Explanation of the error.
        """
        super().__init__(msg)
        self.msg = msg


class OutOfSpanError(EstimatorError):
    """Exception raised when a spline is queried outside of its valid time span.

    Attrs:
        span (tuple[float, float]): The valid half-open span [start, end).
    """

    def __init__(self, msg: str, span: tuple[float, float]):
        """Initialize a new instance of the OutOfSpanError exception.

        Args:
            msg (str): Explanation of the error.
            span: The valid half-open span [start, end).
        """
        super().__init__(f"{msg}, valid span is [{span[0]:.9f}, {span[1]:.9f})")
        self.span = span


class StaleMeasurementError(EstimatorError):
    """Exception raised when a measurement is older than the active spline segment."""


class UpdateFailureError(EstimatorError):
    """Exception raised when the iterated update cannot invert a covariance.

    Attrs:
        condition (float): Condition number estimate of the offending matrix.
    """

    def __init__(self, msg: str, condition: float):
        """Initialize a new instance of the UpdateFailureError exception.

        Args:
            msg (str): Explanation of the error.
            condition (float): Condition number estimate of the offending matrix.
        """
        super().__init__(f"{msg} (condition estimate {condition:.3e})")
        self.condition = condition


class BatchProcessingError(EstimatorError):
    """Exception raised when processing an observation batch fails.

    Attrs:
        batch_index (int): Index of the batch that failed.
    """

    def __init__(self, msg: str, batch_index: int):
        """Initialize a new instance of the BatchProcessingError exception.

        Args:
            msg (str): Explanation of the error.
            batch_index (int): Index of the batch that failed.
        """
        super().__init__(f"batch {batch_index}: {msg}")
        self.batch_index = batch_index
