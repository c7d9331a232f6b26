"""Wire protocol: one JSON message per line over a short-lived TCP connection.

Message kinds: REGISTER, HEARTBEAT, DISPATCH, STATUS, RESULT from the cluster
protocol plus SUBMIT, QUERY, LIST from clients. Every message carries
schema_version. Each connection is a single request/reply exchange; DISPATCH
messages ride inside heartbeat replies so followers never need a listening
port. Field-by-field message docs live in the README.
"""

from __future__ import annotations

import json
import socket
import socketserver
import threading

from ..errors import ServebenchError

PROTOCOL_SCHEMA_VERSION = 1

REGISTER = "REGISTER"
HEARTBEAT = "HEARTBEAT"
DISPATCH = "DISPATCH"
STATUS = "STATUS"
RESULT = "RESULT"
SUBMIT = "SUBMIT"
QUERY = "QUERY"
LIST = "LIST"

MAX_LINE = 64 * 1024 * 1024


class ProtocolError(ServebenchError):
    pass


def message(kind: str, **fields) -> dict:
    return {"schema_version": PROTOCOL_SCHEMA_VERSION, "kind": kind, **fields}


def parse_address(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    if not host or not port.isdigit():
        raise ProtocolError(f"address must be HOST:PORT, got {addr!r}")
    return host, int(port)


def _read_line(sock: socket.socket) -> bytes:
    chunks = []
    total = 0
    while True:
        chunk = sock.recv(65536)
        if not chunk:
            break
        chunks.append(chunk)
        total += len(chunk)
        if chunk.endswith(b"\n"):
            break
        if total > MAX_LINE:
            raise ProtocolError("message exceeds size limit")
    return b"".join(chunks)


def request(addr: str | tuple[str, int], msg: dict, timeout: float = 10.0) -> dict:
    """Send one message, wait for one reply. Raises ProtocolError on transport
    trouble or when the peer reports ok=false."""
    if isinstance(addr, str):
        addr = parse_address(addr)
    try:
        with socket.create_connection(addr, timeout=timeout) as sock:
            sock.sendall(json.dumps(msg).encode() + b"\n")
            raw = _read_line(sock)
    except OSError as e:
        raise ProtocolError(f"cannot reach {addr[0]}:{addr[1]}: {e}") from e
    if not raw:
        raise ProtocolError("peer closed without replying")
    try:
        reply = json.loads(raw)
    except json.JSONDecodeError as e:
        raise ProtocolError(f"bad reply: {e}") from e
    if not reply.get("ok", False):
        raise ProtocolError(reply.get("error", "request rejected"))
    return reply


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        raw = self.rfile.readline(MAX_LINE)
        if not raw.strip():
            return
        try:
            msg = json.loads(raw)
            if msg.get("schema_version") != PROTOCOL_SCHEMA_VERSION:
                raise ProtocolError(f"unsupported schema_version {msg.get('schema_version')!r}")
            reply = self.server.dispatch_fn(msg)
            if "ok" not in reply:
                reply["ok"] = True
        except Exception as e:
            reply = {"ok": False, "error": f"{type(e).__name__}: {e}"}
        reply.setdefault("schema_version", PROTOCOL_SCHEMA_VERSION)
        self.wfile.write(json.dumps(reply).encode() + b"\n")


class MessageServer(socketserver.ThreadingTCPServer):
    """Threaded request/reply server delegating to a dispatch function."""

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, bind: tuple[str, int], dispatch_fn):
        super().__init__(bind, _Handler)
        self.dispatch_fn = dispatch_fn

    def serve_in_background(self) -> threading.Thread:
        thread = threading.Thread(target=self.serve_forever, daemon=True)
        thread.start()
        return thread
