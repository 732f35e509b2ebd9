"""Exception types shared across the package."""


class InfeasibleCorrelation(ValueError):
    """Requested correlation cannot be realized (equicorrelation PSD bound, or
    negative correlation with more than two attributes)."""


class SingularCovariance(ValueError):
    """A covariance matrix (or block) is numerically singular."""


class SingularMixing(ValueError):
    """The mixing matrix is numerically singular, so it cannot be inverted."""


class UnknownVariable(KeyError):
    """A named variable does not exist in the joint distribution."""


class OverlappingSubsets(ValueError):
    """Variable subsets that must be disjoint share a variable."""


class ArityError(ValueError):
    """Wrong number of variables for the requested quantity."""


class Infeasible(ValueError):
    """No nonzero subset of the data achieves the requested target."""


class BadMagic(ValueError):
    """IDX payload does not start with a recognized magic number."""


class TruncatedPayload(ValueError):
    """IDX payload is shorter than its header declares."""


class EmptyPool(ValueError):
    """An instance pool that must be nonempty is empty."""


class ShapeMismatch(ValueError):
    """Array shapes are inconsistent with the declared dimensions."""


class LabelOutOfRange(ValueError):
    """A class label falls outside the valid label range."""


class NonFiniteGradient(FloatingPointError):
    """A gradient buffer contains NaN or infinity."""


class NonFiniteLoss(FloatingPointError):
    """A training loss evaluated to NaN or infinity."""


class LayoutMismatch(ValueError):
    """Subspace layout widths do not sum to the latent dimension."""


class MissingData(FileNotFoundError):
    """Expected dataset files are absent from the data root."""


class SchemaMismatch(ValueError):
    """A persisted artifact (checkpoint, CSV) has an incompatible schema."""


class DegenerateLatentWarning(UserWarning):
    """A latent dimension or factor carries no information; the metric
    excludes it instead of failing."""
