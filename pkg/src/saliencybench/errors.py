"""Typed errors raised by the engine.

Every error the public API can raise derives from EngineError, so callers
can catch one base class at the CLI boundary.
"""


class EngineError(Exception):
    """Base class for all engine errors."""


# --- tensor file format ---

class MalformedHeader(EngineError):
    """TNSR file has a bad magic, version, dtype or truncated header."""


class DimMismatch(EngineError):
    """Declared dims do not match the payload, or shapes are incompatible."""


class NonFiniteData(EngineError):
    """A tensor payload contains NaN or Inf."""


class IoFailure(EngineError):
    """Reading or writing a file failed at the OS level."""


# --- dataset ---

class ClassTooSmall(EngineError):
    """A class has fewer images than the requested per-class count."""


# --- perturbations ---

class BadDims(EngineError):
    """Upsampling target smaller than the source, or a shape constraint broken."""


class BadKernel(EngineError):
    """Blur kernel size is even or below 3."""


class BadK(EngineError):
    """Patch count k outside the valid range for the grid."""


# --- oracle / training ---

class BadP(EngineError):
    """Confidence value outside (0, 1]."""


class BadBeta(EngineError):
    """Interpolation coefficient outside [0, 1]."""


class NoGradient(EngineError):
    """A gradient-based operation was asked of an oracle without gradients."""


class ZeroConfidence(EngineError):
    """Ground-truth confidence is zero; drop ratios are undefined."""


# --- metrics ---

class TooFewSteps(EngineError):
    """Correlation metrics need at least two perturbation steps."""


# --- statistics ---

class DegenerateData(EngineError):
    """Expected disagreement is zero; alpha is undefined."""


class SampleTooSmall(EngineError):
    """A statistical test received fewer samples than it supports."""


class ConstantSample(EngineError):
    """A statistical test received a zero-variance sample."""


class TooFewSamples(EngineError):
    """Calibration needs at least as many samples as bins."""


# --- benchmark size ---

class TiedBest(EngineError):
    """The win counts have no unique best method."""


class NoSolution(EngineError):
    """No benchmark size satisfies the risk bound under the approximation."""


# --- external scoring bridge ---

class BridgeTimeout(EngineError):
    """The external scoring process did not answer in time."""


class ProtocolViolation(EngineError):
    """The external scoring process sent a malformed or unexpected message."""


class NonStochasticVector(EngineError):
    """A returned probability vector does not sum to 1 within tolerance."""
