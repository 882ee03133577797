from typing import Optional

from msfusion.core.error_handlers import NumericalError


class InsufficientPriors(NumericalError):
    def __init__(self, segment: Optional[int], count: int, required: int):
        super().__init__(
            message=(
                f"Segment {segment} has {count} usable prior normals, "
                f"{required} required"
            ),
            error_code="INSUFFICIENT_PRIORS",
            details={"segment": segment, "count": count, "required": required},
        )


class DegeneratePriors(NumericalError):
    def __init__(self, segment: int, min_eigenvalue: float):
        super().__init__(
            message=f"Prior normals of segment {segment} do not span three dimensions",
            error_code="DEGENERATE_PRIORS",
            details={"segment": segment, "min_eigenvalue": min_eigenvalue},
        )


class SingularMixing(NumericalError):
    def __init__(self, segment: int, condition_number: float, limit: float):
        super().__init__(
            message=(
                f"Mixing matrix of segment {segment} has condition number "
                f"{condition_number:.3g} (limit {limit:.3g})"
            ),
            error_code="SINGULAR_MIXING",
            details={
                "segment": segment,
                "condition_number": condition_number,
                "limit": limit,
            },
        )
