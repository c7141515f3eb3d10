"""Newline-delimited JSON messages exchanged between referee, stations and source.

Every frame is one UTF-8 JSON object followed by ``\\n``; the ``type`` field
selects the variant. Field names are frozen; see ``protocol.md``.
"""

from __future__ import annotations

import json

VERSION = "bellharness/1"
ROLES = ("alice", "bob", "source")

# required fields and their types, per message type
SCHEMA: dict[str, dict[str, type | tuple[type, ...]]] = {
    "HELLO": {"role": str, "version": str},
    "CONFIG": {"N": int, "M": int, "memory_mode": bool, "virtual_source": bool, "timeout": (int, float)},
    "LAMBDA": {"n": int, "words": list},
    "TRIAL": {"n": int, "setting": int},
    "OUTCOME": {"n": int, "value": int},
    "SYNC": {"n": int},
    "END": {},
    "ERROR": {"code": str, "text": str},
}

# error codes carried by ERROR frames
E_PROTOCOL = "protocol"
E_TIMEOUT = "timeout"
E_VERSION = "version"
E_CONFIG = "config"


class ProtocolError(Exception):
    """A peer sent something the protocol does not allow."""

    code = E_PROTOCOL


class HarnessTimeout(ProtocolError):
    code = E_TIMEOUT


class RemoteError(ProtocolError):
    """The other side reported an ERROR frame."""

    def __init__(self, code: str, text: str):
        super().__init__(f"{code}: {text}")
        self.code = code
        self.text = text


def encode(msg_type: str, **fields) -> bytes:
    if msg_type not in SCHEMA:
        raise ValueError(f"unknown message type {msg_type!r}")
    return (json.dumps({"type": msg_type, **fields}, separators=(",", ":")) + "\n").encode("utf-8")


def words_to_hex(words) -> list[str]:
    return [f"{int(w):016x}" for w in words]


def hex_to_words(items) -> tuple[int, ...]:
    out = []
    for h in items:
        if not isinstance(h, str) or len(h) != 16 or h != h.lower():
            raise ProtocolError(f"lambda words must be 16-digit lowercase hex, got {h!r}")
        try:
            out.append(int(h, 16))
        except ValueError:
            raise ProtocolError(f"bad hex word {h!r}") from None
    return tuple(out)


def decode(line: bytes | str) -> dict:
    """Parse and validate one frame."""
    if isinstance(line, bytes):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError:
            raise ProtocolError("frame is not valid UTF-8") from None
    try:
        msg = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"malformed JSON frame: {exc.msg}") from None
    if not isinstance(msg, dict) or msg.get("type") not in SCHEMA:
        raise ProtocolError(f"unknown frame: {line.strip()[:80]!r}")
    for name, kind in SCHEMA[msg["type"]].items():
        value = msg.get(name)
        # bool is an int subclass; keep the two apart
        if value is None or not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
            raise ProtocolError(f"{msg['type']} frame needs field {name!r} of type "
                                f"{getattr(kind, '__name__', kind)}")
    if msg["type"] == "OUTCOME" and msg["value"] not in (-1, 1):
        raise ProtocolError(f"outcome must be -1 or +1, got {msg['value']!r}")
    if msg["type"] == "HELLO" and msg["role"] not in ROLES:
        raise ProtocolError(f"unknown role {msg['role']!r}")
    return msg
