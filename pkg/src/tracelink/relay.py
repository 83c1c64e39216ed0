"""Live UDP relay applying emulator instances to real datagrams.

Test system A sends to the relay's A-side socket; datagrams pass the
forward instance and leave from the B-side socket towards peer B.
Replies from B take the reverse instance (or pass straight through when
no reverse instance is configured).  Arrival is timestamped right after
``recvfrom`` on a monotonic microsecond clock; that is the emulation
reference point.

The relay is one thread driving a selector: socket reads, the control
channel and the departure timer are serialized, so each instance sees
the same call pattern as under the virtual-time harness.

Control channel: a local TCP socket speaking one command per line::

    STAGE <LOAD|ARM|RUN|CLEAR> [forward|reverse]
    INGEST <path> [forward|reverse]
    STATS

Replies are ``OK ...`` or ``ERR <kind>: <message>``; STATS replies
``OK `` followed by one line of JSON.
"""

from __future__ import annotations

import heapq
import json
import logging
import selectors
import signal
import socket
import time
from dataclasses import dataclass, field

from .errors import BindError, TracelinkError
from .instance import Instance, InstanceConfig
from .syncgroup import SyncRegistry

log = logging.getLogger(__name__)

Endpoint = tuple  # (host, port)


@dataclass
class RelayConfig:
    listen_a: Endpoint
    peer_a: Endpoint
    listen_b: Endpoint
    peer_b: Endpoint
    forward: InstanceConfig = field(default_factory=InstanceConfig)
    reverse: InstanceConfig | None = None
    forward_trace: str | None = None
    reverse_trace: str | None = None
    control: Endpoint | None = ("127.0.0.1", 0)
    spin_us: int = 400  # busy-wait this close to a departure for timer accuracy
    record_arrivals: bool = False

    def __post_init__(self):
        ends = [tuple(self.listen_a), tuple(self.listen_b)]
        if ends[0] == ends[1] and ends[0][1] != 0:
            raise ValueError("listen endpoints must be distinct")
        if tuple(self.peer_a) == tuple(self.peer_b):
            raise ValueError("peer endpoints must be distinct")


def _bind_udp(endpoint) -> socket.socket:
    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    try:
        sock.bind(tuple(endpoint))
    except (OSError, OverflowError) as exc:
        sock.close()
        raise BindError(f"cannot bind {endpoint}: {exc}") from exc
    sock.setblocking(False)
    return sock


class Relay:
    """Bidirectional datagram relay. Use :meth:`run` or :func:`run_relay`."""

    def __init__(self, cfg: RelayConfig, registry: SyncRegistry | None = None):
        self.cfg = cfg
        self.registry = registry if registry is not None else SyncRegistry()
        self.forward = Instance(cfg.forward, name="forward", registry=self.registry)
        self.reverse = None
        if cfg.reverse is not None:
            self.reverse = Instance(cfg.reverse, name="reverse", registry=self.registry)
        if cfg.forward_trace:
            self.forward.ingest_file(cfg.forward_trace)
        if cfg.reverse_trace:
            if self.reverse is None:
                raise ValueError("reverse_trace given without a reverse instance")
            self.reverse.ingest_file(cfg.reverse_trace)

        self._epoch_ns = time.monotonic_ns()
        self._outbox = []  # (delivery_us, n, sock, data, peer)
        self._n = 0
        self._stopping = False
        self.arrivals = []  # (direction, arrival_us, size) when record_arrivals
        self.counters = {"received_a": 0, "received_b": 0, "sent": 0, "send_errors": 0}
        self._lateness_sum = 0
        self._lateness_max = 0

        self._sel = selectors.DefaultSelector()
        self.sock_a = _bind_udp(cfg.listen_a)
        try:
            self.sock_b = _bind_udp(cfg.listen_b)
        except BindError:
            self.sock_a.close()
            raise
        self._wake_r, self._wake_w = socket.socketpair()
        self._wake_r.setblocking(False)
        self._sel.register(self.sock_a, selectors.EVENT_READ, "a")
        self._sel.register(self.sock_b, selectors.EVENT_READ, "b")
        self._sel.register(self._wake_r, selectors.EVENT_READ, "wake")
        self.control_sock = None
        self._clients = {}
        if cfg.control is not None:
            srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            try:
                srv.bind(tuple(cfg.control))
            except OSError as exc:
                srv.close()
                self.close()
                raise BindError(f"cannot bind control {cfg.control}: {exc}") from exc
            srv.listen(4)
            srv.setblocking(False)
            self.control_sock = srv
            self._sel.register(srv, selectors.EVENT_READ, "listen")

    @property
    def address_a(self):
        return self.sock_a.getsockname()

    @property
    def address_b(self):
        return self.sock_b.getsockname()

    @property
    def control_address(self):
        return self.control_sock.getsockname() if self.control_sock else None

    def now_us(self) -> int:
        return (time.monotonic_ns() - self._epoch_ns) // 1000

    # -- commands -------------------------------------------------------

    def _target(self, name: str | None) -> Instance:
        if name in (None, "", "forward", "fwd"):
            return self.forward
        if name in ("reverse", "return", "rev") and self.reverse is not None:
            return self.reverse
        raise ValueError(f"no instance named {name!r}")

    def control(self, line: str) -> str:
        """Apply one control command; must run on the relay thread."""
        parts = line.split()
        if not parts:
            return "ERR empty command"
        cmd = parts[0].upper()
        try:
            if cmd == "STAGE" and len(parts) in (2, 3):
                inst = self._target(parts[2].lower() if len(parts) == 3 else None)
                stage = inst.set_stage(parts[1], self.now_us())
                return f"OK {inst.name} {stage.name}"
            if cmd == "INGEST" and len(parts) in (2, 3):
                inst = self._target(parts[2].lower() if len(parts) == 3 else None)
                n = inst.ingest_file(parts[1])
                return f"OK {inst.name} {n} entries"
            if cmd == "STATS" and len(parts) == 1:
                return "OK " + json.dumps(self.stats(), sort_keys=True)
        except (OSError, ValueError, TracelinkError) as exc:
            return f"ERR {type(exc).__name__}: {exc}"
        return f"ERR unknown command: {line.strip()}"

    def stats(self) -> dict:
        now = self.now_us()
        sent = self.counters["sent"]
        relay = dict(self.counters)
        relay["lateness_max_us"] = self._lateness_max
        relay["lateness_mean_us"] = self._lateness_sum / sent if sent else 0.0
        out = {"relay": relay, "forward": self.forward.stats(now).to_dict()}
        if self.reverse is not None:
            out["reverse"] = self.reverse.stats(now).to_dict()
        return out

    # -- data path ------------------------------------------------------

    def _receive(self, sock, direction: str) -> None:
        while True:
            try:
                data, _ = sock.recvfrom(65535)
            except (BlockingIOError, InterruptedError):
                return
            except OSError as exc:  # e.g. ICMP port unreachable surfaced on Linux
                log.debug("recv error on %s side: %s", direction, exc)
                return
            now = self.now_us()
            self.counters["received_" + direction] += 1
            if self.cfg.record_arrivals:
                self.arrivals.append((direction, now, len(data)))
            inst = self.forward if direction == "a" else self.reverse
            out_sock, peer = (self.sock_b, self.cfg.peer_b) if direction == "a" else (
                self.sock_a, self.cfg.peer_a)
            if inst is None:
                self._send(out_sock, data, peer, now, now)
                continue
            inst.enqueue(len(data), now, (data, out_sock, peer))

    def _send(self, sock, data, peer, due_us, now_us) -> None:
        try:
            sock.sendto(data, tuple(peer))
            self.counters["sent"] += 1
            late = max(0, now_us - due_us)
            self._lateness_sum += late
            if late > self._lateness_max:
                self._lateness_max = late
        except OSError as exc:
            self.counters["send_errors"] += 1
            log.warning("send to %s failed: %s", peer, exc)

    def _service(self, now: int) -> None:
        for inst in (self.forward, self.reverse):
            if inst is None:
                continue
            seg = inst.config.segment_size_bytes
            dep = inst.dequeue(now)
            while dep is not None:
                data, sock, peer = dep.packet.flow_tag
                if seg and len(data) > seg:
                    i = dep.packet.segment_index
                    data = data[i * seg:(i + 1) * seg]
                self._n += 1
                heapq.heappush(self._outbox, (dep.delivery_us, self._n, sock, data, peer))
                dep = inst.dequeue(now)
        outbox = self._outbox
        while outbox and outbox[0][0] <= now:
            due, _, sock, data, peer = heapq.heappop(outbox)
            self._send(sock, data, peer, due, self.now_us())

    def _next_wakeup(self):
        times = [t for t in (self.forward.next_event_time(),
                             self.reverse.next_event_time() if self.reverse else None)
                 if t is not None]
        if self._outbox:
            times.append(self._outbox[0][0])
        return min(times) if times else None

    def _handle_client(self, conn) -> None:
        try:
            chunk = conn.recv(4096)
        except (BlockingIOError, InterruptedError):
            return
        except OSError:
            chunk = b""
        if not chunk:
            self._sel.unregister(conn)
            self._clients.pop(conn, None)
            conn.close()
            return
        buf = self._clients[conn] + chunk
        while b"\n" in buf:
            line, buf = buf.split(b"\n", 1)
            reply = self.control(line.decode("utf-8", "replace"))
            try:
                conn.sendall(reply.encode() + b"\n")
            except OSError:
                break
        self._clients[conn] = buf

    def run(self) -> dict:
        """Serve until :meth:`stop` is called; returns the final stats."""
        spin = self.cfg.spin_us
        try:
            while not self._stopping:
                now = self.now_us()
                self._service(now)
                nxt = self._next_wakeup()
                if nxt is None:
                    timeout = 0.5
                else:
                    wait = nxt - self.now_us()
                    timeout = 0 if wait <= spin else (wait - spin) / 1e6
                for key, _ in self._sel.select(timeout):
                    tag = key.data
                    if tag == "a" or tag == "b":
                        self._receive(key.fileobj, tag)
                    elif tag == "listen":
                        try:
                            conn, _ = key.fileobj.accept()
                        except OSError:
                            continue
                        conn.setblocking(False)
                        self._clients[conn] = b""
                        self._sel.register(conn, selectors.EVENT_READ, "client")
                    elif tag == "client":
                        self._handle_client(key.fileobj)
                    else:
                        try:
                            self._wake_r.recv(64)
                        except OSError:
                            pass
        finally:
            self.close()
        return self.stats()

    def stop(self) -> None:
        """Ask :meth:`run` to return; safe from any thread or a signal handler."""
        self._stopping = True
        try:
            self._wake_w.send(b"x")
        except OSError:
            pass

    def close(self) -> None:
        for conn in list(self._clients):
            conn.close()
        self._clients.clear()
        for s in (self.sock_a, getattr(self, "sock_b", None), self.control_sock,
                  getattr(self, "_wake_r", None), getattr(self, "_wake_w", None)):
            if s is not None:
                try:
                    self._sel.unregister(s)
                except (KeyError, ValueError):
                    pass
                s.close()


def run_relay(cfg: RelayConfig, start: str | None = None) -> dict:
    """Run a relay in the foreground until SIGINT/SIGTERM; returns final stats.

    ``start`` (ARM or RUN) is applied once the traces are loaded, exactly as
    a ``STAGE`` control command would.
    """
    relay = Relay(cfg)
    if start is not None:
        reply = relay.control(f"STAGE {start}")
        if not reply.startswith("OK"):
            relay.close()
            raise TracelinkError(reply)
    log.info("relay A=%s B=%s control=%s", relay.address_a, relay.address_b,
             relay.control_address)
    previous = signal.signal(signal.SIGTERM, lambda *_: relay.stop())
    try:
        return relay.run()
    except KeyboardInterrupt:
        relay.close()
        return relay.stats()
    finally:
        signal.signal(signal.SIGTERM, previous)
