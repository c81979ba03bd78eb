"""Exception types shared across the package.

Each error carries the process exit code the command-line front end reports
for it, so library callers and the CLI agree on failure categories.
"""


class PowerNpeError(Exception):
    exit_code = 1
    code = "error"


class InvalidArgument(PowerNpeError, ValueError):
    exit_code = 2
    code = "invalid-argument"


class NumericFailure(PowerNpeError, ArithmeticError):
    exit_code = 3
    code = "numeric-failure"

    def __init__(self, message, model=None):
        super().__init__(message)
        # last-good model, when a training loop aborts
        self.model = model


class ConsistencyError(NumericFailure):
    code = "internal-consistency"


class IOFailure(PowerNpeError, OSError):
    exit_code = 4
    code = "io-failure"
