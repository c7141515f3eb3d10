"""Referee, station and source roles over TCP.

Topology: stations and the source each hold one connection to the referee
and never talk to each other. Per trial ``n`` the referee

1. reads ``LAMBDA(n)`` from the source and relays it to both stations
   (skipped when the source is virtual and stations derive lambda from the
   shared seed),
2. sends ``TRIAL(n, a)`` to Alice and ``TRIAL(n, b)`` to Bob,
3. waits for both ``OUTCOME(n)`` frames,
4. sends ``SYNC(n)`` to everyone.

Nothing for trial ``n + 1`` leaves the referee before step 3 completes.
"""

from __future__ import annotations

import logging
import socket
import threading
import time
from dataclasses import replace

import numpy as np

from .harness import ConfigError, RunConfig, RunLog, generate_settings_array
from .model import SettingGrid, get_strategy, hidden_stream
from .protocol import (E_TIMEOUT, E_VERSION, VERSION, HarnessTimeout, ProtocolError, RemoteError,
                       decode, encode, hex_to_words, words_to_hex)

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 30.0


class Connection:
    """One line-framed peer, recording traffic into a shared event list."""

    def __init__(self, sock: socket.socket, role: str | None = None, events: list | None = None,
                 lock: threading.Lock | None = None):
        self.sock = sock
        # small request/response frames: without this Nagle + delayed ACK adds ~40 ms per trial
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self.rfile = sock.makefile("rb")
        self.role = role
        self.events = events
        self._lock = lock

    def _record(self, direction: str, data: bytes) -> None:
        if self.events is not None:
            with self._lock:
                self.events.append((direction, self.role, data))

    def send(self, msg_type: str, **fields) -> None:
        data = encode(msg_type, **fields)
        self._record("send", data)
        self.sock.sendall(data)

    def recv(self, deadline: float | None = None) -> dict:
        if deadline is not None:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise HarnessTimeout(f"deadline passed waiting for {self.role}")
            self.sock.settimeout(remaining)
        else:
            self.sock.settimeout(None)
        try:
            line = self.rfile.readline()
        except (socket.timeout, TimeoutError):
            raise HarnessTimeout(f"timed out waiting for {self.role}") from None
        if not line:
            raise ProtocolError(f"{self.role or 'peer'} closed the connection")
        self._record("recv", line)
        msg = decode(line)
        if msg["type"] == "ERROR":
            raise RemoteError(msg["code"], msg["text"])
        return msg

    def close(self) -> None:
        try:
            self.rfile.close()
            self.sock.close()
        except OSError:
            pass


def _expect(msg: dict, msg_type: str, n: int | None = None) -> dict:
    if msg["type"] != msg_type:
        raise ProtocolError(f"expected {msg_type}, got {msg['type']}")
    if n is not None and msg["n"] != n:
        raise ProtocolError(f"{msg_type} for trial {msg['n']} while trial {n} is open")
    return msg


class Referee:
    """Orchestrates one socket run. Bind first, then call :meth:`run`."""

    def __init__(self, config: RunConfig, endpoint: tuple[str, int] = ("127.0.0.1", 0),
                 timeout: float = DEFAULT_TIMEOUT, accept_timeout: float | None = None):
        if config.oracle is not None:
            raise ConfigError("the singlet oracle is nonlocal and cannot run over stations")
        self.config = replace(config, transport="sockets")
        self.timeout = timeout
        self.accept_timeout = timeout if accept_timeout is None else accept_timeout
        self.events: list[tuple[str, str | None, bytes]] = []
        self._lock = threading.Lock()
        self.server = socket.create_server(endpoint)
        self.peers: dict[str, Connection] = {}
        self.strategy_names: dict[str, str] = {}

    @property
    def address(self) -> tuple[str, int]:
        host, port = self.server.getsockname()[:2]
        return ("127.0.0.1" if host in ("0.0.0.0", "") else host), port

    @property
    def required_roles(self) -> tuple[str, ...]:
        return ("alice", "bob") if self.config.virtual_source else ("alice", "bob", "source")

    def _accept_all(self) -> None:
        deadline = time.monotonic() + self.accept_timeout
        while set(self.required_roles) - set(self.peers):
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise HarnessTimeout("not all roles connected before the deadline")
            self.server.settimeout(remaining)
            try:
                sock, _ = self.server.accept()
            except (socket.timeout, TimeoutError):
                raise HarnessTimeout("not all roles connected before the deadline") from None
            conn = Connection(sock, None, self.events, self._lock)
            hello = _expect(conn.recv(time.monotonic() + self.timeout), "HELLO")
            conn.role = hello["role"]
            if hello["version"] != VERSION:
                conn.send("ERROR", code=E_VERSION, text=f"referee speaks {VERSION}")
                conn.close()
                raise ProtocolError(f"{hello['role']} speaks {hello['version']!r}, need {VERSION}")
            if conn.role in self.peers or conn.role not in self.required_roles:
                conn.send("ERROR", code="role", text=f"role {conn.role} not available")
                conn.close()
                raise ProtocolError(f"unexpected or duplicate role {conn.role!r}")
            self.peers[conn.role] = conn
            if isinstance(hello.get("strategy"), str):
                self.strategy_names[conn.role] = hello["strategy"]

    def _send_config(self) -> None:
        c = self.config
        base = dict(N=c.N, M=c.M, memory_mode=c.memory_mode, virtual_source=c.virtual_source,
                    timeout=self.timeout)
        for role, conn in self.peers.items():
            fields = dict(base)
            if role == "source" or c.virtual_source:
                fields["seed_lambda"] = f"{c.seed_lambda:016x}"
            conn.send("CONFIG", **fields)

    def _broadcast(self, msg_type: str, **fields) -> None:
        for conn in self.peers.values():
            try:
                conn.send(msg_type, **fields)
            except OSError:
                pass

    def run(self) -> RunLog:
        c = self.config
        n_all = np.arange(1, c.N + 1)
        a_all, b_all = generate_settings_array(c, n_all)
        x = np.empty(c.N, dtype=np.int64)
        y = np.empty(c.N, dtype=np.int64)
        try:
            self._accept_all()
            self._send_config()
            alice, bob = self.peers["alice"], self.peers["bob"]
            source = self.peers.get("source")
            for i in range(c.N):
                n = i + 1
                deadline = time.monotonic() + self.timeout
                if source is not None:
                    lam = _expect(source.recv(deadline), "LAMBDA", n)
                    words = hex_to_words(lam["words"])
                    for st in (alice, bob):
                        st.send("LAMBDA", n=n, words=words_to_hex(words))
                alice.send("TRIAL", n=n, setting=int(a_all[i]))
                bob.send("TRIAL", n=n, setting=int(b_all[i]))
                x[i] = _expect(alice.recv(deadline), "OUTCOME", n)["value"]
                y[i] = _expect(bob.recv(deadline), "OUTCOME", n)["value"]
                self._broadcast("SYNC", n=n)
            run_log = RunLog(c, n_all, a_all, b_all, x, y,
                             meta={"transport": "sockets", "stations": dict(self.strategy_names)})
            self._broadcast("END", digest=run_log.digest_hex)
            return run_log
        except ProtocolError as exc:
            code = E_TIMEOUT if isinstance(exc, HarnessTimeout) else getattr(exc, "code", "protocol")
            self._broadcast("ERROR", code=code, text=str(exc))
            raise
        finally:
            for conn in self.peers.values():
                conn.close()
            self.server.close()

    def frames(self, role: str | None = None, direction: str | None = None) -> list[dict]:
        """Decoded captured frames, optionally filtered."""
        return [decode(data) for d, r, data in self.events
                if (role is None or r == role) and (direction is None or d == direction)]


def _connect(address, role: str, strategy: str | None, timeout: float | None) -> Connection:
    sock = socket.create_connection(address, timeout=timeout)
    conn = Connection(sock, "referee")
    hello = {"role": role, "version": VERSION}
    if strategy is not None:
        hello["strategy"] = strategy
    conn.send("HELLO", **hello)
    return conn


def run_station(address, role: str, strategy: str, timeout: float | None = None) -> int:
    """Connect a built-in strategy to a referee and serve until END.

    Returns the number of trials answered.
    """
    if role not in ("alice", "bob"):
        raise ValueError(f"station role must be alice or bob, got {role!r}")
    strat = get_strategy(strategy)
    conn = _connect(address, role, strategy, timeout)
    try:
        cfg = _expect(conn.recv(), "CONFIG")
        grid = SettingGrid(cfg["M"])
        if strat.memory_mode and not cfg["memory_mode"]:
            conn.send("ERROR", code="config", text=f"{strategy} needs memory mode")
            raise ConfigError(f"strategy {strategy!r} needs memory mode")
        seed = int(cfg["seed_lambda"], 16) if cfg["virtual_source"] else None
        history: list[tuple[int, int]] = []
        lam = None
        answered = 0
        while True:
            msg = conn.recv()
            kind = msg["type"]
            if kind == "LAMBDA":
                lam = (msg["n"], hex_to_words(msg["words"]))
            elif kind == "TRIAL":
                n = msg["n"]
                if n != answered + 1:
                    raise ProtocolError(f"TRIAL {n} out of order")
                if seed is not None:
                    words = hidden_stream(seed, n).words
                elif lam is not None and lam[0] == n:
                    words = lam[1]
                else:
                    raise ProtocolError(f"TRIAL {n} arrived before its LAMBDA")
                value = strat.eval(msg["setting"], words, grid, history if cfg["memory_mode"] else ())
                history.append((msg["setting"], value))
                conn.send("OUTCOME", n=n, value=value)
                answered = n
            elif kind == "SYNC":
                continue
            elif kind == "END":
                return answered
            else:
                raise ProtocolError(f"station got unexpected {kind}")
    finally:
        conn.close()


def run_source(address, timeout: float | None = None) -> int:
    """Supply hidden variables, one trial ahead of the referee's SYNC barrier."""
    conn = _connect(address, "source", None, timeout)
    try:
        cfg = _expect(conn.recv(), "CONFIG")
        seed = int(cfg["seed_lambda"], 16)
        N = cfg["N"]
        conn.send("LAMBDA", n=1, words=words_to_hex(hidden_stream(seed, 1).words))
        while True:
            msg = conn.recv()
            if msg["type"] == "SYNC":
                n = msg["n"] + 1
                if n <= N:
                    conn.send("LAMBDA", n=n, words=words_to_hex(hidden_stream(seed, n).words))
            elif msg["type"] == "END":
                return N
            else:
                raise ProtocolError(f"source got unexpected {msg['type']}")
    finally:
        conn.close()


class _Worker(threading.Thread):
    def __init__(self, target, *args):
        super().__init__(daemon=True)
        self._target_fn, self._args = target, args
        self.error: BaseException | None = None
        self.result = None

    def run(self):
        try:
            self.result = self._target_fn(*self._args)
        except BaseException as exc:  # surfaced by the caller
            self.error = exc


def launch_local_stations(config: RunConfig, address) -> list[_Worker]:
    """Start built-in stations (and the source, unless virtual) as threads."""
    workers = [_Worker(run_station, address, "alice", config.alice),
               _Worker(run_station, address, "bob", config.bob)]
    if not config.virtual_source:
        workers.append(_Worker(run_source, address))
    for w in workers:
        w.start()
    return workers


def run_sockets(config: RunConfig, endpoint: tuple[str, int] = ("127.0.0.1", 0),
                timeout: float = DEFAULT_TIMEOUT, local_stations: bool = True) -> RunLog:
    """Run over TCP. With ``local_stations`` the built-in roles are spawned as threads."""
    referee = Referee(config, endpoint, timeout=timeout)
    workers = launch_local_stations(referee.config, referee.address) if local_stations else []
    try:
        return referee.run()
    finally:
        for w in workers:
            w.join(timeout=5)
