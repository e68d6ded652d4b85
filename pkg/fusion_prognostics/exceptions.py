import json
from typing import Any, Optional, Union


class FusionError(Exception):
    _exit_code = 3

    message = "Internal error"
    context: Optional[dict] = None

    def __init__(self, message: Union[str, None] = None, **context: Any):
        if message is not None:
            self.message = message
        self.context = {key: value for key, value in context.items() if value is not None} or None
        super().__init__(self.message)

    @property
    def exit_code(self) -> int:
        return self._exit_code

    @property
    def dict(self) -> dict:
        record = {
            "message": self.message,
            "exit_code": self.exit_code,
        }

        if self.context is not None:
            record |= {key: _jsonable(value) for key, value in self.context.items()}

        return record

    @property
    def json_record(self) -> str:
        return json.dumps({"error": self.dict}, sort_keys=True)


class UsageError(FusionError):
    _exit_code = 1
    message = "Usage Error"


class RunLocked(UsageError):
    message = "Output directory is locked by another run"


class DataError(FusionError):
    _exit_code = 2
    message = "Data Error"


class IngestionError(DataError):
    message = "Ingestion Error"

    def __init__(self, message: Union[str, None] = None, line_number: Union[int, None] = None, **context: Any):
        super().__init__(message, line_number=line_number, **context)

    @property
    def line_number(self) -> Optional[int]:
        return (self.context or {}).get("line_number")


class InsufficientData(DataError):
    message = "Insufficient Data"


class NumericalError(FusionError):
    _exit_code = 3
    message = "Numerical Failure"


def _jsonable(value: Any) -> Any:
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    return str(value)
