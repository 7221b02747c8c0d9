"""Exception types shared across the package.

Callers can distinguish bad inputs (ContractError), numerical
breakdowns (NumericalError), out-of-order session traffic
(ProtocolError), and exhausted comparison budgets (BudgetExhausted)
without string matching.
"""


class ContractError(ValueError):
    """An argument violates a documented precondition."""


class NumericalError(RuntimeError):
    """A numerical routine failed to converge or lost positive definiteness."""


class ProtocolError(RuntimeError):
    """A session operation arrived in a state that cannot accept it."""


class BudgetExhausted(ProtocolError):
    """The comparison budget is spent; no further batches may be proposed."""
