"""Exception hierarchy.

Everything raised on purpose derives from CycleTrailError so the CLI can map
failures onto exit codes without catching unrelated bugs.
"""


class CycleTrailError(Exception):
    pass


class InputError(CycleTrailError):
    """Bad or missing user input. CLI exit code 2."""


class RemoteError(CycleTrailError):
    """A remote service failed. CLI exit code 3."""


# geo
class NonPositiveInterval(CycleTrailError, ValueError):
    pass


# ingest / preprocess
class MalformedGpx(InputError):
    pass


class EmptyTrack(InputError):
    pass


# road network
class MalformedOsm(InputError):
    pass


class DanglingNodeRef(InputError):
    pass


class UnknownNode(CycleTrailError, KeyError):
    pass


class Unreachable(CycleTrailError):
    pass


# matching
class NoMatch(CycleTrailError):
    pass


class RemoteUnavailable(RemoteError):
    pass


class RemoteRejected(RemoteError):
    pass


class ParseError(RemoteError):
    pass


# enrichment
class NodeNotOnWay(CycleTrailError):
    pass


# metrics / evaluation
class ZeroDuration(InputError):
    pass


class UnknownArc(CycleTrailError):
    pass


class ZeroTruthLength(CycleTrailError, ValueError):
    pass


# pipeline
class NoInput(InputError):
    pass


class MissingStageOutput(InputError):
    pass


class NetworkLoadFailure(InputError):
    pass


class ConfigError(InputError):
    pass
