from msfusion.core.error_handlers import InputValidationError


class NonPositiveScale(InputValidationError):
    def __init__(self, scale: float):
        super().__init__(
            message=f"Depth scale must be positive, got {scale}",
            error_code="NON_POSITIVE_SCALE",
            details={"scale": scale},
        )


class AllInvalid(InputValidationError):
    def __init__(self, shape):
        super().__init__(
            message="Depth map has no valid pixel to fill holes from",
            error_code="ALL_INVALID",
            details={"shape": list(shape)},
        )
