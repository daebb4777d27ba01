"""Exception types raised across the package."""


class MigStockError(Exception):
    """Base class for all package errors."""


class PanelError(MigStockError, ValueError):
    """Invalid panel input. ``rows`` lists offending CSV line numbers, if known."""

    def __init__(self, message, rows=None):
        self.rows = list(rows) if rows is not None else []
        if self.rows:
            shown = ", ".join(str(r) for r in self.rows[:10])
            more = "" if len(self.rows) <= 10 else f" (+{len(self.rows) - 10} more)"
            message = f"{message} at row(s) {shown}{more}"
        super().__init__(message)


class MissingColumn(PanelError):
    pass


class BadProportion(PanelError):
    pass


class DuplicateSurveyCell(PanelError):
    pass


class MissingWaveId(PanelError):
    pass


class OriginMismatch(PanelError):
    pass


class AgeGridMismatch(PanelError):
    pass


class DomainError(MigStockError, ValueError):
    pass


class RankDeficient(MigStockError, ValueError):
    pass


class InsufficientData(MigStockError, ValueError):
    pass


class UnseenLevel(MigStockError, KeyError):
    pass


class EmptySelection(MigStockError, ValueError):
    pass


class EmptyColumn(MigStockError, ValueError):
    pass


class DegenerateMatrix(MigStockError, ValueError):
    pass


class EmptyInputs(MigStockError, ValueError):
    pass


class NonFiniteDensity(MigStockError, FloatingPointError):
    pass


class TooFewChains(MigStockError, ValueError):
    pass


class InsufficientHistory(MigStockError, ValueError):
    pass


class NoWaveData(MigStockError, ValueError):
    pass


class NoOverlap(MigStockError, ValueError):
    pass


class InvalidTruth(MigStockError, ValueError):
    pass


class NotConverged(UserWarning):
    """Some monitored R-hat exceeded the configured threshold."""
