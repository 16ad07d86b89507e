"""Geographic locations and the RFC 1876 LOC record codec.

Distances use a spherical earth (haversine, R = 6371 km) and ignore
altitude. ``reduce_precision`` snaps points to an equirectangular grid
anchored at (0, 0) for coarse-grained location disclosure.
"""

from __future__ import annotations

import math
import re
import struct
from dataclasses import dataclass, replace

from .errors import CodecError

EARTH_RADIUS_M = 6_371_000.0

LOC_VERSION = 0
LOC_SIZE = 16

_EQUATOR = 1 << 31
_MAS_PER_DEGREE = 3_600_000  # thousandths of an arcsecond
_ALT_OFFSET_CM = 10_000_000  # 100 km below the WGS84 spheroid
_MAX_FIELD = (1 << 32) - 1

MIN_ALTITUDE_M = -100_000.0
MAX_ALTITUDE_M = (_MAX_FIELD - _ALT_OFFSET_CM) / 100  # 42849672.95

# one LOC lat/lon step along a meridian, ~3 cm
CODEC_RESOLUTION_M = EARTH_RADIUS_M * math.radians(1 / _MAS_PER_DEGREE)

DEFAULT_SIZE_M = 1.0
DEFAULT_HORIZ_PRE_M = 10_000.0
DEFAULT_VERT_PRE_M = 10.0


def _precision_byte(meters: float) -> int:
    """Encode a size/precision as the RFC 1876 base*10^exp centimetre byte."""
    if not math.isfinite(meters) or meters < 0:
        raise CodecError(f"size/precision must be a non-negative number, got {meters!r}")
    cm = meters * 100
    n = round(cm)
    if abs(cm - n) > 1e-6 * max(1.0, cm):
        raise CodecError(f"{meters} m is not a whole number of centimetres")
    if n == 0:
        return 0
    exp = 0
    while n % 10 == 0 and n > 9:
        n //= 10
        exp += 1
    if n > 9 or exp > 9:
        raise CodecError(f"{meters} m is not representable as base*10^exp cm")
    return (n << 4) | exp


def _precision_meters(byte: int) -> float:
    base, exp = byte >> 4, byte & 0x0F
    if base > 9 or exp > 9:
        raise CodecError(f"invalid size/precision byte 0x{byte:02x}")
    return base * 10**exp / 100


def representable_ceiling(meters: float) -> float:
    """Smallest LOC-representable size that is >= ``meters``."""
    if meters <= 0:
        return 0.0
    cm = meters * 100
    exp = max(0, math.floor(math.log10(cm)))
    base = math.ceil(cm / 10**exp - 1e-9)
    if base > 9:
        base, exp = 1, exp + 1
    if exp > 9:
        raise CodecError(f"{meters} m exceeds the largest LOC size")
    return base * 10**exp / 100


@dataclass(frozen=True)
class GeoLocation:
    """A WGS84 point with LOC size and precision fields, all in metres/degrees."""

    latitude: float
    longitude: float
    altitude: float = 0.0
    size: float = DEFAULT_SIZE_M
    horiz_pre: float = DEFAULT_HORIZ_PRE_M
    vert_pre: float = DEFAULT_VERT_PRE_M

    def __post_init__(self):
        if not -90.0 <= self.latitude <= 90.0:
            raise CodecError(f"latitude {self.latitude} outside [-90, 90]")
        if not -180.0 <= self.longitude <= 180.0:
            raise CodecError(f"longitude {self.longitude} outside [-180, 180]")
        if not MIN_ALTITUDE_M <= self.altitude <= MAX_ALTITUDE_M:
            raise CodecError(f"altitude {self.altitude} outside LOC range")
        for value in (self.size, self.horiz_pre, self.vert_pre):
            _precision_byte(value)


def encode_loc(g: GeoLocation) -> bytes:
    lat = _EQUATOR + round(g.latitude * _MAS_PER_DEGREE)
    lon = _EQUATOR + round(g.longitude * _MAS_PER_DEGREE)
    alt = _ALT_OFFSET_CM + round(g.altitude * 100)
    if not 0 <= alt <= _MAX_FIELD:
        raise CodecError(f"altitude {g.altitude} outside LOC range")
    return struct.pack(
        "!BBBBIII",
        LOC_VERSION,
        _precision_byte(g.size),
        _precision_byte(g.horiz_pre),
        _precision_byte(g.vert_pre),
        lat,
        lon,
        alt,
    )


def decode_loc(wire: bytes) -> GeoLocation:
    if len(wire) != LOC_SIZE:
        raise CodecError(f"LOC rdata must be {LOC_SIZE} bytes, got {len(wire)}")
    version, size, hp, vp, lat, lon, alt = struct.unpack("!BBBBIII", wire)
    if version != LOC_VERSION:
        raise CodecError(f"unsupported LOC version {version}")
    latitude = (lat - _EQUATOR) / _MAS_PER_DEGREE
    longitude = (lon - _EQUATOR) / _MAS_PER_DEGREE
    return GeoLocation(
        latitude=latitude,
        longitude=longitude,
        altitude=(alt - _ALT_OFFSET_CM) / 100,
        size=_precision_meters(size),
        horiz_pre=_precision_meters(hp),
        vert_pre=_precision_meters(vp),
    )


def quantize(g: GeoLocation) -> GeoLocation:
    """The value ``g`` takes after a trip through the LOC codec."""
    return decode_loc(encode_loc(g))


def great_circle_distance(a: GeoLocation, b: GeoLocation) -> float:
    """Haversine distance in metres; altitude is ignored."""
    phi1, phi2 = math.radians(a.latitude), math.radians(b.latitude)
    dphi = phi2 - phi1
    dlam = math.radians(b.longitude - a.longitude)
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def reduce_precision(g: GeoLocation, resolution: float) -> GeoLocation:
    """Snap ``g`` to the centre of its grid cell of edge ``resolution`` metres.

    The cell edge is ``resolution`` metres along a meridian; longitude uses
    the same angular step, so cells are never wider than ``resolution``.
    The size field is raised to cover the cell.
    """
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    if resolution < CODEC_RESOLUTION_M:
        return g
    step = math.degrees(resolution / EARTH_RADIUS_M)

    def snap(value: float, limit: float) -> float:
        centre = (math.floor(value / step) + 0.5) * step
        return max(-limit, min(limit, centre))

    size = max(g.size, representable_ceiling(resolution))
    return replace(
        g,
        latitude=snap(g.latitude, 90.0),
        longitude=snap(g.longitude, 180.0),
        size=size,
        horiz_pre=max(g.horiz_pre, size),
    )


# -- zone-file text form -------------------------------------------------------------

_LOC_TEXT = re.compile(
    r"""^\s*
    (?P<d1>\d+)(?:\s+(?P<m1>\d+)(?:\s+(?P<s1>\d+(?:\.\d+)?))?)?\s+(?P<ns>[NS])\s+
    (?P<d2>\d+)(?:\s+(?P<m2>\d+)(?:\s+(?P<s2>\d+(?:\.\d+)?))?)?\s+(?P<ew>[EW])\s+
    (?P<alt>-?\d+(?:\.\d+)?)m?
    (?:\s+(?P<siz>\d+(?:\.\d+)?)m?
      (?:\s+(?P<hp>\d+(?:\.\d+)?)m?
        (?:\s+(?P<vp>\d+(?:\.\d+)?)m?)?)?)?
    \s*$""",
    re.VERBOSE | re.IGNORECASE,
)


def parse_loc_text(text: str) -> GeoLocation:
    """Parse ``d1 [m1 [s1]] {N|S} d2 [m2 [s2]] {E|W} alt[m] [siz [hp [vp]]]``."""
    m = _LOC_TEXT.match(text)
    if not m:
        raise CodecError(f"cannot parse LOC text {text!r}")

    def dms(d, mi, s):
        return int(d) + int(mi or 0) / 60 + float(s or 0) / 3600

    lat = dms(m["d1"], m["m1"], m["s1"]) * (-1 if m["ns"].upper() == "S" else 1)
    lon = dms(m["d2"], m["m2"], m["s2"]) * (-1 if m["ew"].upper() == "W" else 1)
    return GeoLocation(
        latitude=lat,
        longitude=lon,
        altitude=float(m["alt"]),
        size=float(m["siz"]) if m["siz"] else DEFAULT_SIZE_M,
        horiz_pre=float(m["hp"]) if m["hp"] else DEFAULT_HORIZ_PRE_M,
        vert_pre=float(m["vp"]) if m["vp"] else DEFAULT_VERT_PRE_M,
    )


def _split_dms(value: float) -> tuple:
    mas = round(abs(value) * _MAS_PER_DEGREE)
    degrees, mas = divmod(mas, _MAS_PER_DEGREE)
    minutes, mas = divmod(mas, 60_000)
    return degrees, minutes, mas / 1000


def _meters(value: float) -> str:
    return f"{value:.2f}".rstrip("0").rstrip(".") + "m"


def format_loc_text(g: GeoLocation) -> str:
    d1, m1, s1 = _split_dms(g.latitude)
    d2, m2, s2 = _split_dms(g.longitude)
    ns = "S" if g.latitude < 0 else "N"
    ew = "W" if g.longitude < 0 else "E"
    return (
        f"{d1} {m1} {s1:.3f} {ns} {d2} {m2} {s2:.3f} {ew} {g.altitude:.2f}m "
        f"{_meters(g.size)} {_meters(g.horiz_pre)} {_meters(g.vert_pre)}"
    )
