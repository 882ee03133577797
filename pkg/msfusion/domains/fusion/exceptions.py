from msfusion.core.error_handlers import InputValidationError, NumericalError


class EmptyInput(InputValidationError):
    def __init__(self):
        super().__init__(
            message=(
                "Nothing to fuse: the cloud is empty "
                "and the depth map has no valid pixel"
            ),
            error_code="EMPTY_INPUT",
        )


class SolverDiverged(NumericalError):
    def __init__(self, iterations: int, relative_residual: float, tolerance: float):
        super().__init__(
            message=(
                f"Position solve stopped at relative residual {relative_residual:.3g} "
                f"after {iterations} iterations (tolerance {tolerance:.3g})"
            ),
            error_code="SOLVER_DIVERGED",
            details={
                "iterations": iterations,
                "relative_residual": relative_residual,
                "tolerance": tolerance,
            },
        )
