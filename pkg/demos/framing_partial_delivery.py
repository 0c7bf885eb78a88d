"""Media packets in, fixed-size symbols out, and what survives a loss.

Packets are length-prefixed and packed into T-byte symbols. When a block
cannot be decoded, the receiver hands over the packets it can still parse:
everything before the first missing symbol.
"""

import numpy as np

from rqstream import BlockBuilder, deframe_full, deframe_partial

rng = np.random.default_rng(1)
packets = [rng.bytes(int(n)) for n in rng.integers(200, 1316, 60)]

builder = BlockBuilder(T=1400)
for p in packets:
    builder.push_media_packet(p)
block = builder.cut_block()
print(f"{len(packets)} packets, {sum(map(len, packets))} bytes -> K = {block.K} symbols of 1400 B")
assert deframe_full(block.symbols()) == packets

symbols = dict(enumerate(block.symbols()))
for lost in (0, 3, 20, block.K - 1):
    received = {i: s for i, s in symbols.items() if i != lost}
    delivered = deframe_partial(received, 1400)
    print(f"symbol {lost:2d} lost: {len(delivered)}/{len(packets)} packets delivered")
