"""Exception hierarchy shared by every module of the package."""


class LatentPriorError(Exception):
    """Base class for all package errors."""


class ConfigError(LatentPriorError, ValueError):
    """Invalid configuration value, preset name, or config file."""


class DegenerateVarianceError(LatentPriorError, ValueError):
    """Latent variance fell below the floor while strict mode was requested."""


class DegenerateTimestepError(LatentPriorError, ValueError):
    """A timestep whose noise coefficient is zero was used where division by it is needed."""


class BackendError(LatentPriorError, RuntimeError):
    """A denoiser/decoder/encoder call failed."""


class LoadError(LatentPriorError, OSError):
    """Pretrained weights could not be located or loaded."""


class NonFiniteGradientError(LatentPriorError, FloatingPointError):
    """A NaN or Inf appeared in a gradient during optimization.

    Attributes:
        iteration: zero-based iteration at which the run was aborted.
        where: name of the offending quantity.
    """

    def __init__(self, iteration: int, where: str):
        super().__init__(f"non-finite gradient in {where!r} at iteration {iteration}")
        self.iteration = iteration
        self.where = where
