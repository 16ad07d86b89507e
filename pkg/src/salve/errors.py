"""Exception hierarchy shared by all SALVE components."""


class SalveError(Exception):
    """Base class for every error raised by this package."""


class CodecError(SalveError, ValueError):
    """A value cannot be encoded, or bytes cannot be decoded."""


class KeyFormatError(SalveError, ValueError):
    """Malformed or missing key material."""


class HandshakeError(SalveError):
    """A handshake primitive received invalid input (e.g. a bad key share)."""


class DnsError(SalveError):
    pass


class TrustError(DnsError):
    """The DNSSEC chain does not lead back to the configured trust anchor."""


class ValidationError(DnsError):
    """A record set is unsigned or its signature does not verify."""


class NXDomain(DnsError):
    pass


class RegistryError(SalveError):
    pass


class UnknownSim(RegistryError, KeyError):
    pass


class StaleUpdate(RegistryError, ValueError):
    """A location update carries a timestamp older than the stored one."""


class ScenarioError(SalveError):
    """An attack scenario or topology is misconfigured."""
