#!/usr/bin/env python3
"""
ANH simulator error types

Every failure the simulator raises derives from AnhError. User-level execution
failures are not exceptions: they end up as RolledBack receipts (see anh_vm).
"""
from typing import Optional


class AnhError(Exception):
    """Base class for all simulator errors"""


class AmountError(AnhError):
    """Token arithmetic went negative or overflowed"""


class GasTableError(AnhError):
    """Gas table is missing entries or carries a cost below 1"""


class AssemblyError(AnhError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class GenesisError(AnhError):
    """Empty, duplicated, non-positive or overflowing genesis allocations"""


class AdmissionError(AnhError):
    """A pending transaction failed admission while sealing a block"""

    def __init__(self, index: int, reason):
        self.index = index
        self.reason = reason
        super().__init__(f"pending tx #{index} rejected: {reason.value}")


class DuplicateBlockError(AnhError):
    """A different block was already indexed at this height"""


class ChainError(AnhError):
    """Broken hash linkage or unreadable block files"""


class ClosureExceedsBudget(AnhError):
    def __init__(self, budget: int, gas_executed: int):
        self.budget = budget
        self.gas_executed = gas_executed
        super().__init__(f"closure execution used {gas_executed} gas, budget is {budget}")


class UnknownIncomeTx(AnhError):
    """Θ references a transaction that is not on the chain"""


class InfeasibleTheta(AnhError):
    """Even the full income catalog cannot satisfy the requested bound"""


class NotAnAccountingQuery(AnhError):
    """Minimal accounting only answers TransferSucceeded and BalanceAtLeast"""


class ScenarioError(AnhError):
    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        self.line = line
        self.column = column
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)


class InternalInvariantViolation(AnhError):
    """Something that must never happen did; always a simulator bug"""


class ClosureError(InternalInvariantViolation):
    """Partial-state execution read a key outside the closure frontier"""
