"""Exception types shared across the toolkit."""


class PatchTicketError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(PatchTicketError):
    """Invalid model/selector/run configuration."""


class ShapeError(PatchTicketError):
    """Tensor shape incompatible with the configured geometry."""


class DegenerateInputError(PatchTicketError):
    """An operation would leave zero patches (or otherwise empty input)."""


class DegenerateSparsityError(PatchTicketError):
    """Keep-rate chain bottoms out at zero surviving tokens."""


class SelectorError(PatchTicketError):
    """Ticket-selector contract violation (e.g. missing CLS row)."""


class ArgumentError(PatchTicketError):
    """Out-of-range argument to a selection primitive."""


class TopologyViolationError(PatchTicketError):
    """Attempt to rewrite a stored mask with different bits."""


class ProvenanceError(PatchTicketError):
    """Fingerprint mismatch between a store and the supplied selector."""


class StoreCoverageError(PatchTicketError):
    """A required image id has no mask record in the store."""


class AlignmentError(PatchTicketError):
    """Label/mask/parameter name sets do not line up."""


class InfeasibleSparsityError(PatchTicketError):
    """Requested overall sparsity exceeds what the pruning scope can supply."""


class CorruptionError(PatchTicketError):
    """Checkpoint or store content digest does not match its payload."""


class NumericalError(PatchTicketError):
    """Non-finite loss or gradient encountered."""


class ComparisonError(PatchTicketError):
    """Evaluation matrix built from incompatible models."""


class VerdictError(PatchTicketError):
    """Not enough matrix cells to issue a verdict."""


class ReportError(PatchTicketError):
    """Report rows are unpaired or inconsistent."""


class IngestError(PatchTicketError):
    """Dataset files missing, unreadable, or mislabeled."""


class InvariantViolationError(PatchTicketError):
    """Internal invariant broken (e.g. non-nested stage sets)."""
