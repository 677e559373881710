"""Exception hierarchy shared by every stage."""


class PipelineError(Exception):
    """Base class for all errors raised by pianocurate."""


class InvalidAudio(PipelineError, ValueError):
    pass


class InvalidClipLength(PipelineError, ValueError):
    pass


class StemMismatch(PipelineError, ValueError):
    pass


class TooShort(PipelineError, ValueError):
    pass


class InvalidSeries(PipelineError, ValueError):
    pass


class NoSeeds(PipelineError, ValueError):
    pass


class MalformedResponse(PipelineError, ValueError):
    """The language-model output holds no usable JSON object."""


class OutOfRange(PipelineError, ValueError):
    pass


class PortError(PipelineError, RuntimeError):
    """An external port (LM endpoint, fixture, related-videos provider) failed."""


class AlignmentError(PipelineError, ValueError):
    pass


class ConfigError(PipelineError, ValueError):
    pass


class StageInputMissing(PipelineError, FileNotFoundError):
    pass


class EmptyManifest(PipelineError, ValueError):
    pass
