"""Exception types shared by the simulator, certificate tools and CLI."""

from __future__ import annotations


class HysyncError(Exception):
    """Base class for every error raised by this package."""


class FlowDomainViolation(HysyncError):
    pass


class NotInJumpSet(HysyncError):
    pass


class CorruptPhase(HysyncError):
    pass


class InvalidParams(HysyncError):
    pass


class InvalidGain(HysyncError):
    pass


class InvalidCertificateInput(HysyncError):
    pass


class NoCertificate(HysyncError):
    pass


class Infeasible(HysyncError):
    pass


class IoError(HysyncError):
    pass


class ConfigInvalid(HysyncError):
    """Bad scenario configuration. ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class VerifyInputMismatch(HysyncError):
    pass
