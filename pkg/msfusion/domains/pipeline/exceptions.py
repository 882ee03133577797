from typing import Sequence

from msfusion.core.error_handlers import InputValidationError


class DimensionMismatch(InputValidationError):
    def __init__(self, what: str, left: Sequence[int], right: Sequence[int]):
        super().__init__(
            message=(
                f"Cannot compare {what}: "
                f"shapes {tuple(left)} and {tuple(right)} differ"
            ),
            error_code="DIMENSION_MISMATCH",
            details={"what": what, "left": list(left), "right": list(right)},
        )
