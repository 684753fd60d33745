"""Blockwise streaming Transformer for streaming SLU and simultaneous ST.

Contextual block encoding, joint CTC/attention blockwise synchronous beam
search, multi-task objectives and latency metrics on plain numpy.
"""

from .ctc import (
    CtcPrefixState,
    brute_force_prefix_prob,
    brute_force_sequence_prob,
    ctc_greedy_collapse,
    ctc_head,
    ctc_loss,
    ctc_prefix_eos,
    ctc_prefix_extend,
    ctc_prefix_grow,
    ctc_prefix_init,
    ctc_prefix_score,
)
from .decoder import DecoderState, decoder_step, sequence_logprob
from .encoder import (
    BlockSchedule,
    ContextState,
    EncodedBlocks,
    StreamingEncoder,
    encode_block,
    encode_blockwise,
    encode_full,
    init_context,
    make_block_schedule,
    subsample,
)
from .io import chunk_stream, read_features, write_features
from .latency import EmissionLog, average_lagging, endpoint_latency, latency_report
from .model import (
    BLANK,
    EOS,
    SOS,
    UNK,
    ModelConfig,
    ModelParams,
    Vocabulary,
    init_params,
    load_vocab,
    load_weights,
    log_softmax,
    logsumexp,
    save_weights,
)
from .objectives import (
    ObjectiveConfig,
    SupervisionPair,
    build_slu_target,
    cross_entropy_loss,
    evaluate_objective,
    slu_loss,
    st_loss,
)
from .search import (
    BlockwiseDecoder,
    DecodeConfig,
    Hypothesis,
    beam_search,
    decode_blockwise,
    decode_offline,
    is_unreliable,
    joint_score,
)

__version__ = "0.1.0"
