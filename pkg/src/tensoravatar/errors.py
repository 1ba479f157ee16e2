"""Exception hierarchy shared by every module."""


class AvatarError(Exception):
    """Base class for all errors raised by tensoravatar."""


class DegenerateTriangle(AvatarError, ValueError):
    pass


class DimensionMismatch(AvatarError, ValueError):
    pass


class DegenerateWeights(AvatarError, ValueError):
    pass


class InsufficientSamples(AvatarError, ValueError):
    pass


class InvalidTriangleId(AvatarError, IndexError):
    pass


class TopologyMismatch(AvatarError, ValueError):
    pass


class TooFewFrames(AvatarError, ValueError):
    pass


class EmptyCluster(AvatarError, ValueError):
    pass


class EmptySplit(AvatarError, ValueError):
    pass


class ConfigInvalid(AvatarError, ValueError):
    pass


class CorruptFile(AvatarError):
    pass


class VersionMismatch(AvatarError):
    pass


class IoFailure(AvatarError, OSError):
    pass
