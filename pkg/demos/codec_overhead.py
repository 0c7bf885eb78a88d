"""How many symbols does a RaptorQ block need?

A block of K source symbols is encoded, then a random subset of R
encoding symbols is handed to the decoder. Near R = K' the decoder
occasionally fails; two extra symbols make failure vanishingly rare.
"""

import numpy as np

from rqstream import compute_intermediate, decode_block, derive_params, generate_encoding_symbol
from rqstream.codec import esi_to_isi

K, T = 100, 32
params = derive_params(K, T)
print(params, "padding:", params.padding)

rng = np.random.default_rng(0)
source = rng.integers(0, 256, (K, T), dtype=np.uint8)
inter = compute_intermediate(params, source)

# Symbols are drawn from source and repair ESIs alike.
pool = {}
for esi in range(3 * K):
    isi = esi_to_isi(params, esi)
    pool[isi] = source[isi].tobytes() if isi < K else generate_encoding_symbol(inter, isi).data
isis = np.array(sorted(pool))

trials = 2000
for extra in (-1, 0, 1, 2):
    n = params.K_prime + extra - params.padding
    failures = 0
    for _ in range(trials):
        pick = rng.choice(isis, n, replace=False)
        out = decode_block(params, {int(i): pool[int(i)] for i in pick})
        failures += not out.ok
    print(f"R = K'{extra:+d}: {failures}/{trials} failures ({out.status.value})")
