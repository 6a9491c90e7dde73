"""Exception hierarchy shared by the simulator, the agents and the harness."""


class AarisError(Exception):
    """Base exception for simulator and training failures"""
    pass


class InvalidArgumentError(AarisError, ValueError):
    """Raised when an input violates an operation's precondition"""
    pass


class InvalidStateError(AarisError, RuntimeError):
    """Raised when an object is used in a state that does not allow the call"""
    pass


class ConfigError(AarisError, ValueError):
    """Raised when a configuration file cannot be parsed or validated"""
    def __init__(self, field: str, reason: str):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason


class CheckpointError(AarisError):
    """Raised when a checkpoint blob has a bad header or payload"""
    pass
