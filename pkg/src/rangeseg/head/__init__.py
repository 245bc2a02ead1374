from .attention import multi_head_attention
from .decoder import DecoderConfig, QueryOutputs, decoder_forward
from .inference import (
    PanopticMap,
    deep_a_predictions,
    panoptic_inference,
    predict_masks,
    semantic_inference,
)
from .model import HeadConfig, forward, init_params
from .params import load_params, save_params
from .pixel_decoder import (
    PixelEmbeddings,
    aux_semantic_logits,
    bilinear_upsample,
    deep_b_logits,
    dupsample,
    fid_decode,
)

__all__ = [
    "DecoderConfig",
    "HeadConfig",
    "PanopticMap",
    "PixelEmbeddings",
    "QueryOutputs",
    "aux_semantic_logits",
    "bilinear_upsample",
    "decoder_forward",
    "deep_a_predictions",
    "deep_b_logits",
    "dupsample",
    "fid_decode",
    "forward",
    "init_params",
    "load_params",
    "multi_head_attention",
    "panoptic_inference",
    "predict_masks",
    "save_params",
    "semantic_inference",
]
