"""Exception hierarchy shared by the library and the CLI"""


class SuffLabError(Exception):
    """Base class for every error raised by sufflab"""


class DomainError(SuffLabError, ValueError):
    """Argument outside the domain of a function (e.g. negative t for f)"""


class ArgumentError(SuffLabError, ValueError):
    """Bad sizes, shapes, batch size or scenario variant"""


class ConvergenceError(SuffLabError, RuntimeError):
    """Numeric minimization did not reach its gradient tolerance"""


class SolverError(SuffLabError, RuntimeError):
    """Inner-infimum root finding could not bracket a solution"""


class BudgetError(SuffLabError, RuntimeError):
    """Exact enumeration would exceed the configured budget"""


class ConstructionError(SuffLabError, RuntimeError):
    """A scenario could not be constructed (e.g. Sinkhorn did not converge)"""


class TrainingError(SuffLabError, RuntimeError):
    """Training produced a non-finite loss"""


class ConfigError(SuffLabError, ValueError):
    """Experiment config is missing, unreadable or invalid"""
