"""Exception types shared across the package."""


class CakeError(Exception):
    """Base class for all package errors."""


class DomainError(CakeError):
    """An argument violates an operation's precondition."""


class InvalidProtocolError(CakeError):
    """A protocol failed validation where a valid one is required."""

    def __init__(self, report):
        self.report = report
        super().__init__(str(report))


class ExecutionError(CakeError):
    """A strategy or protocol misbehaved during a run."""

    def __init__(self, message, node=None, agent=None):
        self.node = node
        self.agent = agent
        if node is not None:
            message = f"{message} (node {node}" + (f", agent {agent})" if agent is not None else ")")
        super().__init__(message)


class TraceMismatchError(CakeError):
    """A replayed trace does not match the protocol."""


class BudgetExceededError(CakeError):
    """A node/size budget was hit; the result is inconclusive, not wrong."""
