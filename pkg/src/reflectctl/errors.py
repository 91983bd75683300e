"""Exception hierarchy shared by all solver modules."""


class ReflectCtlError(Exception):
    """Base class; carries an optional module tag for report provenance."""

    module = "reflectctl"


class ContractError(ReflectCtlError, ValueError):
    """Input violates an operation contract (shape, dimension, compatibility)."""


class PreconditionError(ContractError):
    """A documented precondition does not hold."""


class NumericalError(ReflectCtlError, ArithmeticError):
    """Non-finite values produced by user coefficients or a scheme."""


class BasisError(NumericalError):
    """Regression design matrix is rank deficient."""

    module = "gbsde"

    def __init__(self, step, rank, ncols):
        self.step, self.rank, self.ncols = step, rank, ncols
        super().__init__(f"rank-deficient regression at step {step}: rank {rank} < {ncols} basis functions")


class DivergenceError(NumericalError):
    module = "gbsde"


class CFLError(ContractError):
    module = "hjb_pde"


class BoundarySolveError(NumericalError):
    module = "hjb_pde"


class ConfigError(ContractError):
    module = "harness_cli"
