"""RaptorQ application-layer FEC for multicast media streaming."""

from .channel import (GilbertElliott, IIDLoss, ReceiverModel, TraceLoss, apply_receiver_overload,
                      ge_matching_iid, load_loss_trace, sample_loss_mask, stationary_loss_rate)
from .codec import (CodecParams, ConstraintMatrix, DecodeOutcome, DecodeStatus, EncodingSymbol,
                    IntermediateBlock, ParameterError, build_constraint_matrix, compute_intermediate,
                    decode_block, derive_params, encode_block, generate_encoding_symbol,
                    repair_count_for)
from .framing import BlockBuilder, BlockPayload, FramingError, deframe_full, deframe_partial
from .harness import (BlockMetrics, ExperimentConfig, Report, block_metrics, mcs_preset,
                      run_experiment, sweep, reference_grid)
from .transport import (BlockCollector, FecPacketHeader, PacketParseError, SessionConfig,
                        parse_fec_packet, receiver_collect, send_block, serialize_fec_packet)

__version__ = "0.1.0"
