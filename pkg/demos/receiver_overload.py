"""A perfect channel can still lose packets at a slow client.

The link is paced at an MCS data rate. The client drains its receive
queue at a fixed packet rate; when the sender's bursts outrun it, the
queue overflows. Faster MCS rates deliver bursts more quickly and so
overflow a slow client more. A low code rate triples the packet load,
so it is the configuration that overloads the client, but it also carries
enough repair to absorb the drops.
"""

from rqstream import ExperimentConfig, ReceiverModel, mcs_preset, run_experiment

client = ReceiverModel(service_rate=400.0, queue_capacity=16)
for cr in (0.2, 0.66):
    for mcs in (0, 3, 7):
        cfg = ExperimentConfig(code_rate=cr, duration=60, mcs_index=mcs, spread=0.5, receiver=client)
        r = run_experiment(cfg)
        print(f"CR {cr:.2f} MCS {mcs} ({mcs_preset(mcs):4.1f} Mbps): "
              f"PER before {r.mean_per_before:.3f}, success {r.success_rate:.3f}")
