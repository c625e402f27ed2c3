"""Single-round federation: wire format, transports, and party runners.

Every institution sends exactly one share and receives exactly one result;
the analyst receives c*d shares and answers each institution once.  Frames
are self-describing: a fixed magic, a kind byte, a little-endian payload
length, then a JSON header (length-prefixed) followed by raw row-major
little-endian float64 matrices in header order.  The two message schemas
have no slot for offsets, scales, or axes, so a conforming peer cannot leak
its private map even by accident.

Two interchangeable transports: queue pairs inside one process, and TCP
sockets with frame-atomic reads.  Both count frames so single-round
accounting can be asserted.
"""
from __future__ import annotations

import json
import os
import queue
import socket
import struct
import threading
from dataclasses import dataclass, field

import numpy as np

from .clustering import assign_nearest
from .collaboration import (UserShare, analyst_cluster, build_collaboration,
                            fit_intermediate, make_clustering_representation,
                            party_target_dim)
from .errors import (ConfigurationError, DecodeError, ProtocolError,
                     SessionError, SessionTimeoutError)
from .numerics import as_matrix
from .seeds import derive_seed

MAGIC = b"DCC1"
KIND_USER_SHARE = 1
KIND_ANALYST_RESULT = 2
_PREFIX = struct.Struct("<4sBQ")  # magic, kind, payload length
_HEADER_LEN = struct.Struct("<I")
MAX_PAYLOAD = 1 << 31

DEFAULT_TIMEOUT_SECS = 60.0
TIMEOUT_ENV_VAR = "DCC_TIMEOUT_SECS"


def resolve_timeout(explicit: float | None = None) -> float:
    """Explicit value wins, then the environment override, then 60 s."""
    if explicit is not None:
        return float(explicit)
    env = os.environ.get(TIMEOUT_ENV_VAR)
    if env is not None:
        try:
            return float(env)
        except ValueError:
            raise ConfigurationError(
                f"{TIMEOUT_ENV_VAR}={env!r} is not a number") from None
    return DEFAULT_TIMEOUT_SECS


@dataclass
class SessionConfig:
    c: int
    d: int
    k: int
    algorithm: str = "kmeans"
    mode: str = "affine"
    neighbors: int = 10
    max_iter: int = 300
    master_seed: int = 0
    m_hat: int | None = None
    scale: bool = False
    restarts: int = 10
    timeout: float | None = None

    def echo(self) -> dict:
        return {"c": self.c, "d": self.d, "k": self.k,
                "algorithm": self.algorithm, "mode": self.mode,
                "neighbors": self.neighbors, "max_iter": self.max_iter,
                "master_seed": self.master_seed, "m_hat": self.m_hat,
                "scale": self.scale, "restarts": self.restarts}


@dataclass
class UserShareMsg:
    party: tuple[int, int]
    x_tilde: np.ndarray
    anchor_tilde: np.ndarray
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        self.party = (int(self.party[0]), int(self.party[1]))
        if self.party[0] < 0 or self.party[1] < 0:
            raise ProtocolError(f"party indices must be nonnegative: {self.party}")
        self.x_tilde = as_matrix(self.x_tilde, "x_tilde")
        self.anchor_tilde = as_matrix(self.anchor_tilde, "anchor_tilde")
        if self.x_tilde.shape[1] != self.anchor_tilde.shape[1]:
            raise ProtocolError("x_tilde and anchor_tilde widths differ")

    def __eq__(self, other):
        return (isinstance(other, UserShareMsg) and self.party == other.party
                and np.array_equal(self.x_tilde, other.x_tilde)
                and np.array_equal(self.anchor_tilde, other.anchor_tilde)
                and self.config == other.config)


@dataclass
class AnalystResultMsg:
    row_block: int
    centroids: np.ndarray
    z_block: np.ndarray
    algorithm: str = "kmeans"
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        self.row_block = int(self.row_block)
        self.centroids = as_matrix(self.centroids, "centroids")
        self.z_block = as_matrix(self.z_block, "z_block")

    def __eq__(self, other):
        return (isinstance(other, AnalystResultMsg)
                and self.row_block == other.row_block
                and np.array_equal(self.centroids, other.centroids)
                and np.array_equal(self.z_block, other.z_block)
                and self.algorithm == other.algorithm
                and self.config == other.config)


_SHARE_MATRICES = ("x_tilde", "anchor_tilde")
_RESULT_MATRICES = ("centroids", "z_block")


def _matrix_bytes(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def encode_message(msg) -> bytes:
    """Serialize one message into a complete frame."""
    if isinstance(msg, UserShareMsg):
        kind = KIND_USER_SHARE
        names = _SHARE_MATRICES
        header = {"party": list(msg.party), "config": msg.config}
    elif isinstance(msg, AnalystResultMsg):
        kind = KIND_ANALYST_RESULT
        names = _RESULT_MATRICES
        header = {"row_block": msg.row_block, "algorithm": msg.algorithm,
                  "config": msg.config}
    else:
        raise ProtocolError(f"cannot encode {type(msg).__name__}")
    mats = [getattr(msg, name) for name in names]
    header["matrices"] = [[name, *mat.shape] for name, mat in zip(names, mats)]
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = b"".join([_HEADER_LEN.pack(len(header_bytes)), header_bytes,
                        *(_matrix_bytes(m) for m in mats)])
    return _PREFIX.pack(MAGIC, kind, len(payload)) + payload


def decode_message(data: bytes):
    """Parse exactly one frame back into a message.

    Raises DecodeError (with the offending byte offset) on anything
    malformed: wrong magic, unknown kind, truncation, trailing bytes, bad
    JSON, undeclared or missing matrices.
    """
    if len(data) < _PREFIX.size:
        raise DecodeError("frame shorter than fixed prefix", offset=len(data))
    magic, kind, payload_len = _PREFIX.unpack_from(data, 0)
    if magic != MAGIC:
        raise DecodeError(f"bad magic {magic!r}", offset=0)
    if kind not in (KIND_USER_SHARE, KIND_ANALYST_RESULT):
        raise DecodeError(f"unknown message kind {kind}", offset=4)
    if payload_len > MAX_PAYLOAD:
        raise DecodeError(f"declared payload {payload_len} exceeds limit", offset=5)
    end = _PREFIX.size + payload_len
    if len(data) < end:
        raise DecodeError("truncated payload", offset=len(data))
    if len(data) > end:
        raise DecodeError("trailing bytes after frame", offset=end)

    pos = _PREFIX.size
    if payload_len < _HEADER_LEN.size:
        raise DecodeError("payload too short for header length", offset=pos)
    (header_len,) = _HEADER_LEN.unpack_from(data, pos)
    pos += _HEADER_LEN.size
    if pos + header_len > end:
        raise DecodeError("header length exceeds payload", offset=pos)
    try:
        header = json.loads(data[pos:pos + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DecodeError(f"bad JSON header: {exc}", offset=pos) from None
    pos += header_len
    if not isinstance(header, dict) or "matrices" not in header:
        raise DecodeError("header is not an object with 'matrices'", offset=pos)

    expected = _SHARE_MATRICES if kind == KIND_USER_SHARE else _RESULT_MATRICES
    declared = header["matrices"]
    if (not isinstance(declared, list)
            or [m[0] for m in declared if isinstance(m, list) and m] != list(expected)):
        raise DecodeError(f"matrices must be declared as {list(expected)}", offset=pos)
    mats = {}
    for entry in declared:
        if len(entry) != 3:
            raise DecodeError(f"matrix declaration {entry!r} is not [name, rows, cols]",
                              offset=pos)
        name, rows, cols = entry
        if not (isinstance(rows, int) and isinstance(cols, int)
                and rows >= 0 and cols >= 0):
            raise DecodeError(f"bad shape for {name}: {rows}x{cols}", offset=pos)
        nbytes = rows * cols * 8
        if pos + nbytes > end:
            raise DecodeError(f"matrix {name} extends past payload", offset=pos)
        flat = np.frombuffer(data[pos:pos + nbytes], dtype="<f8")
        mats[name] = flat.reshape(rows, cols).astype(np.float64)
        pos += nbytes
    if pos != end:
        raise DecodeError("payload longer than declared matrices", offset=pos)

    try:
        if kind == KIND_USER_SHARE:
            party = header.get("party")
            if (not isinstance(party, list) or len(party) != 2
                    or not all(isinstance(p, int) for p in party)):
                raise DecodeError("header lacks a valid party pair", offset=pos)
            return UserShareMsg(party=(party[0], party[1]),
                                x_tilde=mats["x_tilde"],
                                anchor_tilde=mats["anchor_tilde"],
                                config=header.get("config", {}))
        return AnalystResultMsg(row_block=header.get("row_block", -1),
                                centroids=mats["centroids"],
                                z_block=mats["z_block"],
                                algorithm=header.get("algorithm", ""),
                                config=header.get("config", {}))
    except ProtocolError as exc:
        raise DecodeError(str(exc), offset=pos) from None


# ---------------------------------------------------------------------------
# transports
# ---------------------------------------------------------------------------

class InProcessHub:
    """Queue-pair fabric connecting user endpoints to one analyst endpoint.

    Frames still go through encode/decode so both transports exercise the
    identical byte path.
    """

    def __init__(self, c: int, d: int):
        self._up: queue.Queue = queue.Queue()
        self._down = {(i, j): queue.Queue() for i in range(c) for j in range(d)}

    def user_endpoint(self, party):
        party = (int(party[0]), int(party[1]))
        if party not in self._down:
            raise ConfigurationError(f"party {party} is outside the lattice")
        return _InProcessUserEndpoint(self._up, self._down[party])

    def analyst_endpoint(self):
        return _InProcessAnalystEndpoint(self._up, self._down)


class _InProcessUserEndpoint:
    def __init__(self, up, down):
        self._up, self._down = up, down
        self.sent_count = 0
        self.received_count = 0

    def send_share(self, msg: UserShareMsg):
        self._up.put(encode_message(msg))
        self.sent_count += 1

    def recv_result(self, timeout: float) -> AnalystResultMsg:
        try:
            frame = self._down.get(timeout=timeout)
        except queue.Empty:
            raise SessionTimeoutError(
                f"no analyst result within {timeout} s") from None
        self.received_count += 1
        msg = decode_message(frame)
        if not isinstance(msg, AnalystResultMsg):
            raise ProtocolError("expected an analyst result frame")
        return msg


class _InProcessAnalystEndpoint:
    def __init__(self, up, down):
        self._up, self._down = up, down
        self.sent_count = 0
        self.received_count = 0

    def recv_share(self, timeout: float) -> UserShareMsg:
        try:
            frame = self._up.get(timeout=max(timeout, 0.0))
        except queue.Empty:
            raise SessionTimeoutError(f"no share within {timeout} s") from None
        self.received_count += 1
        msg = decode_message(frame)
        if not isinstance(msg, UserShareMsg):
            raise ProtocolError("expected a user share frame")
        return msg

    def send_result(self, party, msg: AnalystResultMsg):
        party = (int(party[0]), int(party[1]))
        if party not in self._down:
            raise ProtocolError(f"no route to party {party}")
        self._down[party].put(encode_message(msg))
        self.sent_count += 1

    def close(self):
        pass


def _recv_exact(sock: socket.socket, nbytes: int, timeout: float,
                eof_ok: bool = False) -> bytes:
    chunks, got = [], 0
    while got < nbytes:
        sock.settimeout(max(timeout, 0.001))
        try:
            chunk = sock.recv(nbytes - got)
        except socket.timeout:
            raise SessionTimeoutError(
                f"peer sent {got} of {nbytes} bytes before timeout") from None
        if not chunk:
            if eof_ok and got == 0:
                return b""
            raise DecodeError("connection closed mid-frame", offset=got)
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def _recv_frame(sock: socket.socket, timeout: float,
                eof_ok: bool = False) -> bytes:
    prefix = _recv_exact(sock, _PREFIX.size, timeout, eof_ok=eof_ok)
    if not prefix:
        return b""
    magic, kind, payload_len = _PREFIX.unpack(prefix)
    if magic != MAGIC:
        raise DecodeError(f"bad magic {magic!r}", offset=0)
    if payload_len > MAX_PAYLOAD:
        raise DecodeError(f"declared payload {payload_len} exceeds limit", offset=5)
    return prefix + _recv_exact(sock, payload_len, timeout)


class TcpUserEndpoint:
    """One connection to the analyst; send a share, wait for the result."""

    def __init__(self, host: str, port: int, timeout: float | None = None):
        self._timeout = resolve_timeout(timeout)
        self.sent_count = 0
        self.received_count = 0
        try:
            self._sock = socket.create_connection((host, port), timeout=self._timeout)
        except (ConnectionError, socket.timeout, OSError) as exc:
            raise SessionTimeoutError(f"cannot reach analyst at {host}:{port}: {exc}") from None

    def send_share(self, msg: UserShareMsg):
        self._sock.sendall(encode_message(msg))
        self.sent_count += 1

    def recv_result(self, timeout: float) -> AnalystResultMsg:
        frame = _recv_frame(self._sock, timeout)
        self.received_count += 1
        msg = decode_message(frame)
        if not isinstance(msg, AnalystResultMsg):
            raise ProtocolError("expected an analyst result frame")
        return msg

    def close(self):
        self._sock.close()


class TcpAnalystEndpoint:
    """Listening side: accepts connections concurrently, one frame each."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0,
                 timeout: float | None = None):
        self._timeout = resolve_timeout(timeout)
        self.sent_count = 0
        self.received_count = 0
        self._frames: queue.Queue = queue.Queue()
        self._conns: dict[tuple[int, int], socket.socket] = {}
        self._accepted: list[socket.socket] = []
        self._stop = threading.Event()
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((host, port))
        self._listener.listen()
        self._listener.settimeout(0.1)
        self.port = self._listener.getsockname()[1]
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()

    def _accept_loop(self):
        while not self._stop.is_set():
            try:
                conn, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            self._accepted.append(conn)
            threading.Thread(target=self._read_one, args=(conn,), daemon=True).start()

    def _read_one(self, conn):
        try:
            frame = _recv_frame(conn, self._timeout, eof_ok=True)
        except (SessionError, DecodeError) as exc:
            self._frames.put(exc)
            return
        if not frame:
            # peer connected and left without sending anything (port probe,
            # dropped client); not this session's concern
            conn.close()
            return
        self._frames.put((frame, conn))

    def recv_share(self, timeout: float) -> UserShareMsg:
        try:
            item = self._frames.get(timeout=max(timeout, 0.0))
        except queue.Empty:
            raise SessionTimeoutError(f"no share within {timeout} s") from None
        if isinstance(item, Exception):
            raise item
        frame, conn = item
        self.received_count += 1
        msg = decode_message(frame)
        if not isinstance(msg, UserShareMsg):
            raise ProtocolError("expected a user share frame")
        self._conns[msg.party] = conn
        return msg

    def send_result(self, party, msg: AnalystResultMsg):
        party = (int(party[0]), int(party[1]))
        conn = self._conns.get(party)
        if conn is None:
            raise ProtocolError(f"no connection for party {party}")
        conn.sendall(encode_message(msg))
        self.sent_count += 1

    def close(self):
        self._stop.set()
        self._listener.close()
        self._accept_thread.join(timeout=2.0)
        for conn in self._accepted:
            try:
                conn.close()
            except OSError:
                pass


# ---------------------------------------------------------------------------
# party runners
# ---------------------------------------------------------------------------

@dataclass
class AnalystReport:
    labels: np.ndarray
    per_block_labels: list[np.ndarray]
    m_hat: int
    residual: float
    messages_received: int
    messages_sent: int
    m_hat_clamped: bool


def user_party_run(party, local_block, anchor_block, cfg: SessionConfig,
                   transport) -> np.ndarray:
    """Run one institution: fit, share, wait, recover this block's labels."""
    timeout = resolve_timeout(cfg.timeout)
    dim = party_target_dim(local_block.shape[1], None, party)
    _, share = fit_intermediate(local_block, anchor_block, dim, party=party,
                                scale=cfg.scale)
    transport.send_share(UserShareMsg(party=share.party, x_tilde=share.x_tilde,
                                      anchor_tilde=share.anchor_tilde,
                                      config=cfg.echo()))
    result = transport.recv_result(timeout)
    if result.row_block != share.party[0]:
        raise ProtocolError(
            f"result for row block {result.row_block} sent to party {share.party}")
    return assign_nearest(result.z_block, result.centroids)


def analyst_party_run(cfg: SessionConfig, transport) -> AnalystReport:
    """Run the analyst: collect every share, align, cluster, answer everyone.

    A repeated party id is a protocol error; parties still missing when the
    deadline passes abort the session with the absentees listed.
    """
    import time

    timeout = resolve_timeout(cfg.timeout)
    expected = {(i, j) for i in range(cfg.c) for j in range(cfg.d)}
    deadline = time.monotonic() + timeout
    messages: dict[tuple[int, int], UserShareMsg] = {}
    while len(messages) < len(expected):
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            absent = sorted(expected - set(messages))
            raise SessionError(f"timed out waiting for shares from {absent}")
        try:
            msg = transport.recv_share(remaining)
        except SessionTimeoutError:
            absent = sorted(expected - set(messages))
            raise SessionError(f"timed out waiting for shares from {absent}") from None
        if msg.party in messages:
            raise ProtocolError(f"duplicate share from party {msg.party}")
        if msg.party not in expected:
            raise ProtocolError(f"party {msg.party} is outside the "
                                f"{cfg.c}x{cfg.d} lattice")
        messages[msg.party] = msg

    shares = [UserShare(party=p, x_tilde=messages[p].x_tilde,
                        anchor_tilde=messages[p].anchor_tilde)
              for p in sorted(messages)]
    model = build_collaboration(shares, mode=cfg.mode, m_hat=cfg.m_hat)
    z = make_clustering_representation(model, cfg.algorithm, cfg.k, cfg.neighbors)
    _, results = analyst_cluster(z, cfg.k, max_iter=cfg.max_iter,
                                 rng_seed=derive_seed(cfg.master_seed, "analyst"),
                                 row_sizes=model.row_sizes,
                                 algorithm=cfg.algorithm,
                                 restarts=cfg.restarts)
    echo = cfg.echo()
    for i, res in enumerate(results):
        out = AnalystResultMsg(row_block=i, centroids=res.centroids,
                               z_block=res.z_block, algorithm=res.algorithm,
                               config=echo)
        for j in range(cfg.d):
            transport.send_result((i, j), out)
    per_block = [assign_nearest(res.z_block, res.centroids) for res in results]
    return AnalystReport(labels=np.concatenate(per_block),
                         per_block_labels=per_block, m_hat=model.m_hat,
                         residual=model.residual,
                         messages_received=len(messages),
                         messages_sent=cfg.c * cfg.d,
                         m_hat_clamped=model.m_hat_clamped)


@dataclass
class SessionOutcome:
    report: AnalystReport
    user_labels: dict[tuple[int, int], np.ndarray]
    user_counts: dict[tuple[int, int], tuple[int, int]]
    analyst_counts: tuple[int, int]


def _run_session(cfg: SessionConfig, blocks, anchor_blocks, analyst_endpoint,
                 user_endpoint_for) -> SessionOutcome:
    errors: list[BaseException] = []
    report_box: list[AnalystReport] = []
    user_labels: dict[tuple[int, int], np.ndarray] = {}
    endpoints: dict[tuple[int, int], object] = {}

    def analyst_main():
        try:
            report_box.append(analyst_party_run(cfg, analyst_endpoint))
        except BaseException as exc:
            errors.append(exc)

    def user_main(party):
        try:
            endpoint = user_endpoint_for(party)
            endpoints[party] = endpoint
            labels = user_party_run(party, blocks[party], anchor_blocks[party[1]],
                                    cfg, endpoint)
            user_labels[party] = labels
        except BaseException as exc:
            errors.append(exc)

    threads = [threading.Thread(target=analyst_main)]
    threads += [threading.Thread(target=user_main, args=(p,)) for p in sorted(blocks)]
    for t in threads:
        t.start()
    for t in threads:
        t.join(timeout=resolve_timeout(cfg.timeout) + 10.0)
    if errors:
        raise errors[0]
    report = report_box[0]
    counts = {p: (ep.sent_count, ep.received_count) for p, ep in endpoints.items()}
    return SessionOutcome(report=report, user_labels=user_labels,
                          user_counts=counts,
                          analyst_counts=(analyst_endpoint.sent_count,
                                          analyst_endpoint.received_count))


def _session_inputs(x, partition, anchor):
    blocks = {(i, j): partition.block(x, i, j)
              for i in range(partition.c) for j in range(partition.d)}
    anchor_blocks = [anchor.features[:, cols] for cols in partition.col_index_sets]
    return blocks, anchor_blocks


def run_in_process_session(x, partition, anchor, cfg: SessionConfig) -> SessionOutcome:
    """Full session over queue transports, one thread per party."""
    blocks, anchor_blocks = _session_inputs(x, partition, anchor)
    hub = InProcessHub(cfg.c, cfg.d)
    return _run_session(cfg, blocks, anchor_blocks, hub.analyst_endpoint(),
                        hub.user_endpoint)


def run_tcp_session(x, partition, anchor, cfg: SessionConfig,
                    host: str = "127.0.0.1") -> SessionOutcome:
    """Full session over localhost sockets on an ephemeral port."""
    blocks, anchor_blocks = _session_inputs(x, partition, anchor)
    analyst = TcpAnalystEndpoint(host=host, port=0, timeout=cfg.timeout)
    try:
        return _run_session(cfg, blocks, anchor_blocks, analyst,
                            lambda p: TcpUserEndpoint(host, analyst.port,
                                                      timeout=cfg.timeout))
    finally:
        analyst.close()
