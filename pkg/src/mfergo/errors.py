"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration (bad key, shape, or value)."""


class MissingConstantsError(ConfigError):
    """Custom dynamics were supplied without the Lipschitz/growth constants."""


class BlowUpError(RuntimeError):
    """A particle left the admissible region during integration."""

    def __init__(self, particle: int, time: float, value: float):
        self.particle = particle
        self.time = time
        self.value = value
        super().__init__(
            f"particle {particle} blew up at t={time:.6g} (|x|={value:.3e})"
        )


class OptimizerError(RuntimeError):
    """Policy search could not produce a finite objective value."""
