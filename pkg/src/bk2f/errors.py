"""Exception hierarchy; the CLI maps any :class:`Bk2fError` to exit status 1."""


class Bk2fError(Exception):
    pass


class ParameterError(Bk2fError, ValueError):
    pass


class DegenerateModelError(Bk2fError, ValueError):
    pass


class MemoryGuardError(Bk2fError, MemoryError):
    pass


class ScenarioError(Bk2fError):
    def __init__(self, scenario_id: int, cause: BaseException):
        super().__init__(f"scenario {scenario_id} failed: {cause}")
        self.scenario_id = scenario_id
        self.cause = cause


class TrainingDivergedError(Bk2fError, FloatingPointError):
    pass


class FingerprintMismatchError(Bk2fError, ValueError):
    pass


class ZeroStochasticError(Bk2fError, ValueError):
    def __init__(self, t: int, percentile_index: int):
        super().__init__(
            f"zero stochastic error at t={t}, percentile index {percentile_index} "
            f"(p={(percentile_index + 1) / 200:.3f})"
        )
        self.t = t
        self.percentile_index = percentile_index


class FormatError(Bk2fError, ValueError):
    pass
