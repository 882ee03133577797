from msfusion.core.error_handlers import NumericalError


class DegenerateCorrespondences(NumericalError):
    def __init__(self, count: int, reason: str):
        super().__init__(
            message=(
                f"Cannot estimate a rigid transform from {count} "
                f"correspondences: {reason}"
            ),
            error_code="DEGENERATE_CORRESPONDENCES",
            details={"count": count, "reason": reason},
        )


class InsufficientOverlap(NumericalError):
    def __init__(self, fitness: float, required: float):
        super().__init__(
            message=(
                f"Registration fitness {fitness:.3f} is below "
                f"the required {required:.3f}"
            ),
            error_code="INSUFFICIENT_OVERLAP",
            details={"fitness": fitness, "required": required},
        )
