"""Exception types shared across the simulator."""


class AerocommError(Exception):
    """Base class for simulator errors."""


class InvalidInputError(AerocommError):
    """Non-finite or out-of-domain input to a physics operation."""


class StiffnessError(AerocommError):
    """Adaptive step size underflowed dt_min for a particle."""

    def __init__(self, particle_id, diameter, dt_min):
        self.particle_id = particle_id
        self.diameter = diameter
        self.dt_min = dt_min
        super().__init__(
            f"step size underflow below dt_min={dt_min:g} s for particle "
            f"{particle_id} (diameter {diameter:g} m)"
        )


class ConfigError(AerocommError):
    """Configuration parse or schema violation, carrying the field path."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")


class ConservationError(AerocommError):
    """The exact particle-count bookkeeping identity was violated."""
