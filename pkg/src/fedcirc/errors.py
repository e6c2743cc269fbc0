"""Exception hierarchy shared across the pipeline.

Every error raised by the library derives from FedcircError so the CLI can
map failures onto its exit-code contract (2 = bad data, 3 = runtime).
"""


class FedcircError(Exception):
    """Base class for all library errors."""


class DataError(FedcircError):
    """Problems with user-supplied inputs (netlists, corpora, configs)."""


class RuntimeFailure(FedcircError):
    """Internal contract violations surfaced at run time."""


# netlist
class NetlistSyntaxError(DataError):
    def __init__(self, message, line, col=0):
        super().__init__(f"line {line}, col {col}: {message}")
        self.line = line
        self.col = col


class UnknownDeviceKind(DataError):
    pass


class DuplicateDeviceId(DataError):
    pass


class ArityMismatch(DataError):
    pass


class EmptyCircuit(DataError):
    pass


class InvalidSize(DataError):
    pass


# pingraph
class InvalidCircuit(DataError):
    pass


# mining
class EmptyCorpus(DataError):
    pass


class NoOccurrences(DataError):
    pass


class AllNodesIsolated(DataError):
    pass


# euler
class DisconnectedGraph(DataError):
    pass


class NotEulerian(DataError):
    pass


class StartNotInGraph(DataError):
    pass


class UnknownToken(DataError):
    pass


class SelfLoopToken(DataError):
    pass


class EmptySequence(DataError):
    pass


# vocab
class IdOutOfRange(DataError):
    pass


# lm
class InvalidConfig(DataError):
    pass


class SequenceTooLong(DataError):
    pass


class EmptyBatch(DataError):
    pass


class InvalidTemperature(DataError):
    pass


# fed
class TooFewSamples(DataError):
    pass


class ManifestMismatch(RuntimeFailure):
    pass


class NoUpdates(RuntimeFailure):
    pass


# threat
class HistoryEmpty(RuntimeFailure):
    pass


class AllClientsFlagged(DataError):
    pass


# metrics
class EmptySet(DataError):
    pass


class EmptyClient(DataError):
    pass


# cli
class ConfigError(DataError):
    pass
