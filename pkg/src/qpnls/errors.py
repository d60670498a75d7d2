"""Exception types raised by the solver."""


class DegenerateFit(ValueError):
    """Decay regression needs at least two distinct sup-norm shells."""


class NearResonance(ArithmeticError):
    """A diagonal entry of the linearized operator is below the resonance floor."""

    def __init__(self, site, value, floor):
        self.site = site
        self.value = value
        self.floor = floor
        super().__init__(
            f"divisor {value:.3e} at site {site} is below the resonance floor {floor:.1e}"
        )


class NoConvergence(RuntimeError):
    """An iteration stalled or diverged."""

    def __init__(self, message, stage=None):
        self.stage = stage
        if stage is not None:
            message = f"stage {stage}: {message}"
        super().__init__(message)


class PlusBlockSingular(ArithmeticError):
    """The plus-sector block cannot be inverted for a Schur reduction."""


class Excised(RuntimeError):
    """The parameter point left the good set during a Newton run."""

    def __init__(self, stage, reason):
        self.stage = stage
        self.reason = reason
        super().__init__(f"excised at stage {stage}: {reason}")


class ZeroAmplitude(ZeroDivisionError):
    """The frequency equation for mode k divides by a vanishing amplitude."""


class DegenerateLambda(ValueError):
    """(h1 - h2).lambda is below the floor, so the frequency map is not invertible."""


class SingularQPrime(ArithmeticError):
    """The 2x2 linearization of the frequency equations is singular."""


class ConfigError(ValueError):
    """Invalid run configuration."""
