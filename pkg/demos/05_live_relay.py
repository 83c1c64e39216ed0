"""
A live relay on loopback
========================

The same instances can shape real UDP traffic.  This script starts a
relay between two local sockets with 10 ms of delay in each direction,
bounces a few datagrams through it and prints the measured round trip.
From a shell the equivalent is::

    tracelink relay --listen-a 127.0.0.1:9000 --peer-a 127.0.0.1:9001 \\
        --listen-b 127.0.0.1:9002 --peer-b 127.0.0.1:9003 \\
        --trace fwd.csv --reverse-trace rev.csv --start RUN

with ``STAGE``, ``INGEST`` and ``STATS`` commands accepted on the
control port (``nc 127.0.0.1 7878``).
"""

import socket
import tempfile
import threading
import time
from pathlib import Path

from tracelink import InstanceConfig
from tracelink.relay import Relay, RelayConfig

tmp = Path(tempfile.mkdtemp())
trace = tmp / "delay10.csv"
trace.write_text("keep_us,delay_us,rate_bps,loss_prob,q_limit\n600000000,10000,0,0,0\n")


def endpoint():
    s = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    s.bind(("127.0.0.1", 0))
    s.settimeout(1.0)
    return s


a, b = endpoint(), endpoint()
relay = Relay(RelayConfig(listen_a=("127.0.0.1", 0), peer_a=a.getsockname(),
                          listen_b=("127.0.0.1", 0), peer_b=b.getsockname(),
                          forward=InstanceConfig(), reverse=InstanceConfig(),
                          forward_trace=str(trace), reverse_trace=str(trace), control=None))
relay.control("STAGE RUN forward")
relay.control("STAGE RUN reverse")
thread = threading.Thread(target=relay.run, daemon=True)
thread.start()

rtts = []
for i in range(20):
    t0 = time.perf_counter()
    a.sendto(b"probe %d" % i, relay.address_a)
    data, _ = b.recvfrom(100)
    b.sendto(data, relay.address_b)
    a.recvfrom(100)
    rtts.append((time.perf_counter() - t0) * 1e3)
    time.sleep(0.01)

relay.stop()
thread.join()
rtts.sort()
print(f"round trip over 2 x 10 ms: median {rtts[10]:.2f} ms, min {rtts[0]:.2f}, max {rtts[-1]:.2f}")
print(f"worst late departure: {relay.stats()['relay']['lateness_max_us']} us")
