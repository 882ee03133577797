from pathlib import Path

from msfusion.core.error_handlers import InputValidationError, NotFoundError


class BundleNotFound(NotFoundError):
    def __init__(self, path: Path):
        super().__init__(
            message=f"Bundle directory {path} does not exist",
            error_code="BUNDLE_NOT_FOUND",
            details={"path": str(path)},
        )


class EmptyBundle(InputValidationError):
    def __init__(self, path: Path):
        super().__init__(
            message=f"Bundle directory {path} contains no keyframes",
            error_code="EMPTY_BUNDLE",
            details={"path": str(path)},
        )


class BundleFormatError(InputValidationError):
    def __init__(self, path: Path, reason: str):
        super().__init__(
            message=f"{path}: {reason}",
            error_code="BUNDLE_FORMAT_ERROR",
            details={"path": str(path), "reason": reason},
        )
