"""Send a short stream over UDP on localhost and decode it live.

The sender encodes each 0.5 s block, spreads its packets, drops a third of
them on purpose and transmits in real time. The receiver decodes each
block as soon as it holds K' symbols.
"""

import threading

from rqstream import channel as ch
from rqstream.cli import build_schedule, parse_config
from rqstream.transport import BlockCollector, UdpLink, open_receiver_socket, run_receiver, transmit

sock = open_receiver_socket("127.0.0.1", 0)
port = sock.getsockname()[1]
cfg = parse_config({"group": "127.0.0.1", "port": port, "T": 500, "cr": 0.5, "tb": 1.5, "w": 0.5,
                    "b": 40_000, "duration": 2.0, "channel": "iid:0.33"})

events = []
collector = BlockCollector(cfg.buffering_time, cfg.window)
rx = threading.Thread(target=run_receiver, args=(sock, collector, 4.0), kwargs={"on_event": events.append})
rx.start()
schedule = build_schedule(cfg)
print(f"sending {len(schedule)} packets to 127.0.0.1:{port}")
link = UdpLink(("127.0.0.1", port))
transmit(schedule, link)
link.close()
rx.join()
sock.close()
for e in events:
    print(f"block {e.sbn}: {e.kind}, {e.received} symbols for K={e.k}, {len(e.packets)} packets out")
