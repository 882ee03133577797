from msfusion.core.error_handlers import InputValidationError


class NonUnitQuaternion(InputValidationError):
    def __init__(self, norm: float):
        super().__init__(
            message=f"Quaternion norm {norm:.6g} is too far from 1 to renormalize",
            error_code="NON_UNIT_QUATERNION",
            details={"norm": norm},
        )
