"""A miniature TLS-like handshake with the location-statement extension.

Message order (gray = SALVE additions)::

    C -> S  ClientHello [+ext]
    S -> C  ServerHello [+ext], Certificate, ServerKeyShare (DHE only)
    C -> S  ClientKeyShare, Finished
    S -> C  Finished
    S -> C  LocationStatement          (only when the extension was negotiated)

Every message is framed as ``type (u8) || length (u24) || body``. The
master secret is derived from the key exchange and the hash of every
message before the client's Finished. The STATIC_RSA key exchange exists
only as a negative control: it lets anyone holding the server key recover
the master secret from a recorded handshake.
"""

from __future__ import annotations

import hmac
import random
import struct
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import Callable, Optional

from .crypto import (
    DIGEST_SIZE,
    GROUP_X25519,
    MASTER_SECRET_SIZE,
    SigningIdentity,
    aead_open,
    aead_seal,
    derive_master_secret,
    dh_combine,
    dh_generate,
    hmac_sha256,
    load_public_key,
    random_bytes,
    rsa_encrypt,
    session_digest,
    sha256,
    verify,
)
from .errors import HandshakeError, KeyFormatError

SALVE_EXTENSION = 0xFF5A
NONCE_SIZE = 32


class MsgType(IntEnum):
    CLIENT_HELLO = 1
    SERVER_HELLO = 2
    CERTIFICATE = 11
    SERVER_KEY_SHARE = 12
    CLIENT_KEY_SHARE = 16
    FINISHED = 20
    ALERT = 21
    LOCATION_STATEMENT = 90


class KexMode(IntEnum):
    DHE = 1
    STATIC_RSA = 2


class AlertCode(IntEnum):
    UNEXPECTED_MESSAGE = 10
    BAD_CERTIFICATE = 42
    DECRYPT_ERROR = 51
    BAD_LOCATION_STATEMENT = 120
    LOCATION_MISMATCH = 121
    STALE_STATEMENT = 122
    DOWNGRADE_DETECTED = 123

    @property
    def label(self) -> str:
        return self.name.lower()


class Phase(str, Enum):
    HELLO = "hello"
    KEYEX = "keyex"
    FINISHED_WAIT = "finished-wait"
    STATEMENT_WAIT = "statement-wait"
    ESTABLISHED = "established"
    ABORTED = "aborted"


# -- messages -------------------------------------------------------------------------


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.off = 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise HandshakeError("truncated message body")
        out = self.data[self.off : self.off + n]
        self.off += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("!H", self.take(2))[0]

    def vec8(self) -> bytes:
        return self.take(self.u8())

    def vec16(self) -> bytes:
        return self.take(self.u16())

    def done(self) -> None:
        if self.off != len(self.data):
            raise HandshakeError("trailing bytes in message body")


def _vec8(b: bytes) -> bytes:
    return struct.pack("!B", len(b)) + b


def _vec16(b: bytes) -> bytes:
    return struct.pack("!H", len(b)) + b


def _encode_extensions(extensions: tuple) -> bytes:
    return struct.pack("!H", len(extensions)) + b"".join(struct.pack("!H", t) + _vec16(d) for t, d in extensions)


def _decode_extensions(r: _Reader) -> tuple:
    exts = tuple((r.u16(), r.vec16()) for _ in range(r.u16()))
    if len({t for t, _ in exts}) != len(exts):
        raise HandshakeError("duplicate extension")
    return exts


def _kex(value: int) -> KexMode:
    try:
        return KexMode(value)
    except ValueError as exc:
        raise HandshakeError(f"unknown key exchange {value}") from exc


@dataclass(frozen=True)
class _Hello:
    nonce: bytes
    kex: KexMode
    extensions: tuple = ()

    def body(self) -> bytes:
        return self.nonce + bytes([self.kex]) + _encode_extensions(self.extensions)

    @classmethod
    def parse(cls, r: _Reader):
        return cls(r.take(NONCE_SIZE), _kex(r.u8()), _decode_extensions(r))

    def has_extension(self, ext: int) -> bool:
        return any(t == ext for t, _ in self.extensions)


@dataclass(frozen=True)
class ClientHello(_Hello):
    msg_type = MsgType.CLIENT_HELLO


@dataclass(frozen=True)
class ServerHello(_Hello):
    msg_type = MsgType.SERVER_HELLO


@dataclass(frozen=True)
class Certificate:
    """A bare public key for ``domain``, signed by a certificate authority."""

    domain: str
    public: bytes
    issuer_signature: bytes
    msg_type = MsgType.CERTIFICATE

    def body(self) -> bytes:
        return _vec8(self.domain.encode()) + _vec16(self.public) + _vec16(self.issuer_signature)

    @classmethod
    def parse(cls, r: _Reader) -> "Certificate":
        try:
            domain = r.vec8().decode()
        except UnicodeDecodeError as exc:
            raise HandshakeError("bad certificate domain") from exc
        return cls(domain, r.vec16(), r.vec16())

    def signed_bytes(self) -> bytes:
        return certificate_tbs(self.domain, self.public)


def certificate_tbs(domain: str, public: bytes) -> bytes:
    return b"salve-certificate\x00" + _vec8(domain.encode()) + _vec16(public)


def issue_certificate(ca: SigningIdentity, domain: str, public: bytes) -> Certificate:
    return Certificate(domain, public, ca.sign(certificate_tbs(domain, public)))


@dataclass(frozen=True)
class ServerKeyShare:
    group: int
    public: bytes
    signature: bytes
    msg_type = MsgType.SERVER_KEY_SHARE

    def body(self) -> bytes:
        return struct.pack("!H", self.group) + _vec8(self.public) + _vec16(self.signature)

    @classmethod
    def parse(cls, r: _Reader) -> "ServerKeyShare":
        return cls(r.u16(), r.vec8(), r.vec16())


def key_share_tbs(group: int, public: bytes, client_nonce: bytes, server_nonce: bytes) -> bytes:
    return struct.pack("!H", group) + _vec8(public) + client_nonce + server_nonce


@dataclass(frozen=True)
class ClientKeyShare:
    """DHE: the client's public point. STATIC_RSA: the encrypted premaster."""

    payload: bytes
    msg_type = MsgType.CLIENT_KEY_SHARE

    def body(self) -> bytes:
        return _vec16(self.payload)

    @classmethod
    def parse(cls, r: _Reader) -> "ClientKeyShare":
        return cls(r.vec16())


@dataclass(frozen=True)
class Finished:
    mac: bytes
    msg_type = MsgType.FINISHED

    def body(self) -> bytes:
        return self.mac

    @classmethod
    def parse(cls, r: _Reader) -> "Finished":
        return cls(r.take(DIGEST_SIZE))


@dataclass(frozen=True)
class LocationStatementMsg:
    sealed: bytes
    msg_type = MsgType.LOCATION_STATEMENT

    def body(self) -> bytes:
        return self.sealed

    @classmethod
    def parse(cls, r: _Reader) -> "LocationStatementMsg":
        return cls(r.take(len(r.data) - r.off))


@dataclass(frozen=True)
class Alert:
    code: AlertCode
    msg_type = MsgType.ALERT

    def body(self) -> bytes:
        return bytes([self.code])

    @classmethod
    def parse(cls, r: _Reader) -> "Alert":
        try:
            return cls(AlertCode(r.u8()))
        except ValueError as exc:
            raise HandshakeError("unknown alert code") from exc


_PARSERS = {
    MsgType.CLIENT_HELLO: ClientHello,
    MsgType.SERVER_HELLO: ServerHello,
    MsgType.CERTIFICATE: Certificate,
    MsgType.SERVER_KEY_SHARE: ServerKeyShare,
    MsgType.CLIENT_KEY_SHARE: ClientKeyShare,
    MsgType.FINISHED: Finished,
    MsgType.LOCATION_STATEMENT: LocationStatementMsg,
    MsgType.ALERT: Alert,
}


def encode_message(msg) -> bytes:
    body = msg.body()
    if len(body) >= 1 << 24:
        raise HandshakeError("message too long")
    return bytes([msg.msg_type]) + len(body).to_bytes(3, "big") + body


def decode_message(data: bytes):
    if len(data) < 4:
        raise HandshakeError("truncated message header")
    length = int.from_bytes(data[1:4], "big")
    if len(data) != 4 + length:
        raise HandshakeError("message length mismatch")
    try:
        parser = _PARSERS[MsgType(data[0])]
    except ValueError as exc:
        raise HandshakeError(f"unknown message type {data[0]}") from exc
    r = _Reader(data[4:])
    msg = parser.parse(r)
    r.done()
    return msg


def message_type(data: bytes) -> Optional[MsgType]:
    try:
        return MsgType(data[0])
    except (IndexError, ValueError):
        return None


# -- key schedule -------------------------------------------------------------------


class Transcript:
    """Append-only log of encoded handshake messages."""

    def __init__(self):
        self.messages: list = []

    def append(self, encoded: bytes) -> None:
        self.messages.append(encoded)

    def hash(self) -> bytes:
        return sha256(b"".join(self.messages))

    def __len__(self) -> int:
        return len(self.messages)


_FINISHED_LABELS = {"client": b"client finished", "server": b"server finished"}


def finished_mac(master: bytes, transcript_hash: bytes, role: str) -> bytes:
    return hmac_sha256(master, _FINISHED_LABELS[role] + transcript_hash)


@dataclass(frozen=True)
class RecordKeys:
    client_write: bytes
    server_write: bytes


def record_keys(master: bytes) -> RecordKeys:
    return RecordKeys(
        client_write=hmac_sha256(master, b"salve key client write"),
        server_write=hmac_sha256(master, b"salve key server write"),
    )


_STATEMENT_AAD = bytes([MsgType.LOCATION_STATEMENT])
_APP_AAD = b"application"


# -- sessions -------------------------------------------------------------------------


class _Session:
    role = ""

    def __init__(self, kex: KexMode, rng: Optional[random.Random]):
        self.kex = KexMode(kex)
        self.rng = rng
        self.phase = Phase.HELLO
        self.transcript = Transcript()
        self.master: Optional[bytes] = None
        self.negotiated_salve = False
        self.alert: Optional[AlertCode] = None
        self.peer_alert: Optional[AlertCode] = None
        self.keys: Optional[RecordKeys] = None
        self._send_seq = 0
        self._recv_seq = 0

    @property
    def established(self) -> bool:
        return self.phase == Phase.ESTABLISHED

    @property
    def session_digest(self) -> Optional[bytes]:
        return None if self.master is None else session_digest(self.master)

    def _abort(self, code: AlertCode) -> list:
        self.phase = Phase.ABORTED
        self.alert = code
        return [encode_message(Alert(code))]

    def _set_master(self, master: bytes) -> None:
        self.master = master
        self.keys = record_keys(master)

    def _write_key(self) -> bytes:
        return self.keys.client_write if self.role == "client" else self.keys.server_write

    def _read_key(self) -> bytes:
        return self.keys.server_write if self.role == "client" else self.keys.client_write

    def _seal(self, plaintext: bytes, aad: bytes) -> bytes:
        sealed = aead_seal(self._write_key(), self._send_seq, plaintext, aad)
        self._send_seq += 1
        return sealed

    def _open(self, sealed: bytes, aad: bytes) -> bytes:
        plain = aead_open(self._read_key(), self._recv_seq, sealed, aad)
        self._recv_seq += 1
        return plain

    def seal_app(self, data: bytes) -> bytes:
        if not self.established:
            raise HandshakeError("session not established")
        return self._seal(data, _APP_AAD)

    def open_app(self, data: bytes) -> bytes:
        if not self.established:
            raise HandshakeError("session not established")
        return self._open(data, _APP_AAD)

    def close(self) -> None:
        """Transport closed; an unfinished handshake is abandoned."""
        if self.phase != Phase.ESTABLISHED:
            self.phase = Phase.ABORTED

    def receive(self, data: bytes) -> list:
        """Process one framed message; returns the framed messages to send."""
        if self.phase == Phase.ABORTED:
            return []
        try:
            msg = decode_message(data)
        except HandshakeError:
            return self._abort(AlertCode.UNEXPECTED_MESSAGE)
        if isinstance(msg, Alert):
            self.phase = Phase.ABORTED
            self.peer_alert = msg.code
            return []
        return self._dispatch(msg, data)

    def _dispatch(self, msg, raw: bytes) -> list:
        raise NotImplementedError


StatementHandler = Callable[[bytes, "ClientSession"], Optional[AlertCode]]


class ClientSession(_Session):
    role = "client"

    def __init__(
        self,
        domain: str,
        trusted_cas: tuple,
        *,
        kex: KexMode = KexMode.DHE,
        offer_salve: bool = True,
        require_salve: bool = False,
        statement_handler: Optional[StatementHandler] = None,
        rng: Optional[random.Random] = None,
    ):
        super().__init__(kex, rng)
        self.domain = domain.rstrip(".").lower()
        self.trusted_cas = tuple(trusted_cas)
        self.offer_salve = offer_salve or require_salve
        self.require_salve = require_salve
        self.statement_handler = statement_handler
        self.client_nonce = b""
        self.server_nonce = b""
        self.certificate: Optional[Certificate] = None
        self.statement_payload: Optional[bytes] = None
        self._awaiting = MsgType.SERVER_HELLO

    def start(self) -> list:
        self.client_nonce = random_bytes(NONCE_SIZE, self.rng)
        exts = ((SALVE_EXTENSION, b""),) if self.offer_salve else ()
        raw = encode_message(ClientHello(self.client_nonce, self.kex, exts))
        self.transcript.append(raw)
        return [raw]

    def _dispatch(self, msg, raw: bytes) -> list:
        if self.phase == Phase.FINISHED_WAIT and isinstance(msg, LocationStatementMsg):
            return self._abort(AlertCode.UNEXPECTED_MESSAGE)
        if self.phase in (Phase.ESTABLISHED, Phase.ABORTED) or msg.msg_type != self._awaiting:
            return self._abort(AlertCode.UNEXPECTED_MESSAGE)
        if isinstance(msg, ServerHello):
            return self._on_server_hello(msg, raw)
        if isinstance(msg, Certificate):
            return self._on_certificate(msg, raw)
        if isinstance(msg, ServerKeyShare):
            return self._on_key_share(msg, raw)
        if isinstance(msg, Finished):
            return self._on_finished(msg, raw)
        return self._on_statement(msg)

    def _on_server_hello(self, msg: ServerHello, raw: bytes) -> list:
        if msg.kex != self.kex:
            return self._abort(AlertCode.UNEXPECTED_MESSAGE)
        echoed = msg.has_extension(SALVE_EXTENSION)
        if echoed and not self.offer_salve:
            return self._abort(AlertCode.UNEXPECTED_MESSAGE)
        self.negotiated_salve = echoed
        if self.require_salve and not echoed:
            return self._abort(AlertCode.DOWNGRADE_DETECTED)
        self.server_nonce = msg.nonce
        self.transcript.append(raw)
        self.phase = Phase.KEYEX
        self._awaiting = MsgType.CERTIFICATE
        return []

    def _on_certificate(self, cert: Certificate, raw: bytes) -> list:
        if cert.domain.rstrip(".").lower() != self.domain or not any(
            _safe_verify(ca, cert.signed_bytes(), cert.issuer_signature) for ca in self.trusted_cas
        ):
            return self._abort(AlertCode.BAD_CERTIFICATE)
        try:
            load_public_key(cert.public)
        except KeyFormatError:
            return self._abort(AlertCode.BAD_CERTIFICATE)
        self.certificate = cert
        self.transcript.append(raw)
        if self.kex == KexMode.DHE:
            self._awaiting = MsgType.SERVER_KEY_SHARE
            return []
        premaster = random_bytes(MASTER_SECRET_SIZE, self.rng)
        return self._send_key_share(rsa_encrypt(cert.public, premaster), premaster)

    def _on_key_share(self, msg: ServerKeyShare, raw: bytes) -> list:
        tbs = key_share_tbs(msg.group, msg.public, self.client_nonce, self.server_nonce)
        if not _safe_verify(self.certificate.public, tbs, msg.signature):
            return self._abort(AlertCode.DECRYPT_ERROR)
        share = dh_generate(self.rng)
        try:
            shared = dh_combine(share, msg.public, msg.group)
        except HandshakeError:
            return self._abort(AlertCode.DECRYPT_ERROR)
        self.transcript.append(raw)
        return self._send_key_share(share.public, shared)

    def _send_key_share(self, payload: bytes, secret: bytes) -> list:
        cks = encode_message(ClientKeyShare(payload))
        self.transcript.append(cks)
        self._set_master(derive_master_secret(secret, self.transcript.hash()))
        fin = encode_message(Finished(finished_mac(self.master, self.transcript.hash(), "client")))
        self.transcript.append(fin)
        self.phase = Phase.FINISHED_WAIT
        self._awaiting = MsgType.FINISHED
        return [cks, fin]

    def _on_finished(self, msg: Finished, raw: bytes) -> list:
        expected = finished_mac(self.master, self.transcript.hash(), "server")
        if not hmac.compare_digest(expected, msg.mac):
            return self._abort(AlertCode.DECRYPT_ERROR)
        self.transcript.append(raw)
        if self.negotiated_salve:
            self.phase = Phase.STATEMENT_WAIT
            self._awaiting = MsgType.LOCATION_STATEMENT
        else:
            self.phase = Phase.ESTABLISHED
        return []

    def _on_statement(self, msg: LocationStatementMsg) -> list:
        try:
            payload = self._open(msg.sealed, _STATEMENT_AAD)
        except HandshakeError:
            return self._abort(AlertCode.BAD_LOCATION_STATEMENT)
        self.statement_payload = payload
        if self.statement_handler is not None:
            code = self.statement_handler(payload, self)
            if code is not None:
                return self._abort(code)
        self.phase = Phase.ESTABLISHED
        return []


class ServerSession(_Session):
    role = "server"

    def __init__(
        self,
        identity: SigningIdentity,
        certificate: Certificate,
        *,
        kex: KexMode = KexMode.DHE,
        salve_enabled: bool = True,
        rng: Optional[random.Random] = None,
    ):
        super().__init__(kex, rng)
        self.identity = identity
        self.certificate = certificate
        self.salve_enabled = salve_enabled
        self.client_nonce = b""
        self.server_nonce = b""
        self._share = None

    @property
    def needs_statement(self) -> bool:
        return self.phase == Phase.STATEMENT_WAIT

    def _dispatch(self, msg, raw: bytes) -> list:
        expected = {
            Phase.HELLO: MsgType.CLIENT_HELLO,
            Phase.KEYEX: MsgType.CLIENT_KEY_SHARE,
            Phase.FINISHED_WAIT: MsgType.FINISHED,
        }.get(self.phase)
        if msg.msg_type != expected:
            return self._abort(AlertCode.UNEXPECTED_MESSAGE)
        if isinstance(msg, ClientHello):
            return self._on_client_hello(msg, raw)
        if isinstance(msg, ClientKeyShare):
            return self._on_key_share(msg, raw)
        return self._on_finished(msg, raw)

    def _on_client_hello(self, msg: ClientHello, raw: bytes) -> list:
        if msg.kex != self.kex:
            return self._abort(AlertCode.UNEXPECTED_MESSAGE)
        self.client_nonce = msg.nonce
        self.server_nonce = random_bytes(NONCE_SIZE, self.rng)
        self.negotiated_salve = self.salve_enabled and msg.has_extension(SALVE_EXTENSION)
        exts = ((SALVE_EXTENSION, b""),) if self.negotiated_salve else ()
        out = [
            encode_message(ServerHello(self.server_nonce, self.kex, exts)),
            encode_message(self.certificate),
        ]
        if self.kex == KexMode.DHE:
            self._share = dh_generate(self.rng)
            tbs = key_share_tbs(GROUP_X25519, self._share.public, self.client_nonce, self.server_nonce)
            out.append(encode_message(ServerKeyShare(GROUP_X25519, self._share.public, self.identity.sign(tbs))))
        self.transcript.append(raw)
        for m in out:
            self.transcript.append(m)
        self.phase = Phase.KEYEX
        return out

    def _on_key_share(self, msg: ClientKeyShare, raw: bytes) -> list:
        try:
            if self.kex == KexMode.DHE:
                secret = dh_combine(self._share, msg.payload)
            else:
                secret = self.identity.decrypt(msg.payload)
                if len(secret) != MASTER_SECRET_SIZE:
                    raise HandshakeError("bad premaster length")
        except HandshakeError:
            return self._abort(AlertCode.DECRYPT_ERROR)
        self.transcript.append(raw)
        self._set_master(derive_master_secret(secret, self.transcript.hash()))
        self.phase = Phase.FINISHED_WAIT
        return []

    def _on_finished(self, msg: Finished, raw: bytes) -> list:
        expected = finished_mac(self.master, self.transcript.hash(), "client")
        if not hmac.compare_digest(expected, msg.mac):
            return self._abort(AlertCode.DECRYPT_ERROR)
        self.transcript.append(raw)
        fin = encode_message(Finished(finished_mac(self.master, self.transcript.hash(), "server")))
        self.transcript.append(fin)
        self.phase = Phase.STATEMENT_WAIT if self.negotiated_salve else Phase.ESTABLISHED
        return [fin]

    def deliver_statement(self, payload: bytes) -> list:
        """Forward the GMLC's statement (plus any Merkle proof) to the client."""
        if self.phase != Phase.STATEMENT_WAIT:
            raise HandshakeError(f"no statement expected in phase {self.phase.value}")
        sealed = self._seal(payload, _STATEMENT_AAD)
        self.phase = Phase.ESTABLISHED
        return [encode_message(LocationStatementMsg(sealed))]

    def fail(self, code: AlertCode) -> list:
        if self.phase == Phase.ABORTED:
            return []
        return self._abort(code)


def _safe_verify(public: bytes, msg: bytes, sig: bytes) -> bool:
    try:
        return verify(public, msg, sig)
    except KeyFormatError:
        return False


# -- passive analysis (negative control) -------------------------------------------------


def recover_static_rsa_master(recorded: list, server_key: SigningIdentity) -> Optional[bytes]:
    """Recompute the master secret of a recorded STATIC_RSA handshake.

    ``recorded`` holds the framed messages seen on the wire, in order.
    Returns None when the handshake did not use a static RSA key exchange,
    which is the case for DHE: the stolen key does not reveal the ephemeral
    secrets.
    """
    transcript = Transcript()
    for raw in recorded:
        try:
            msg = decode_message(raw)
        except HandshakeError:
            continue
        if isinstance(msg, Finished):
            break
        if isinstance(msg, (ClientHello, ServerHello, Certificate, ServerKeyShare)):
            transcript.append(raw)
        if isinstance(msg, ClientKeyShare):
            transcript.append(raw)
            try:
                premaster = server_key.decrypt(msg.payload)
            except HandshakeError:
                return None
            return derive_master_secret(premaster, transcript.hash())
    return None


def open_client_record(master: bytes, seq: int, sealed: bytes) -> bytes:
    """Decrypt client application data given a master secret (for hijack checks)."""
    return aead_open(record_keys(master).client_write, seq, sealed, _APP_AAD)
