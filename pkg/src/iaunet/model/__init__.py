from .encoder import Encoder, FeaturePyramid
from .iaunet import IAUNet, ModelOutput
from .mask_head import Instance, InstancePrediction, MaskHead, postprocess, rescore
from .pixel_decoder import DecoderLevelOutput, PixelDecoder, SEBlock, inject_coords
from .transformer_decoder import (AttentionContext, CrossAttentionBlock, QuerySet, SelfAttentionFFNBlock,
                                  TransformerDecoder, sinusoidal_pos_embed)

__all__ = [
    "Encoder", "FeaturePyramid", "IAUNet", "ModelOutput", "Instance", "InstancePrediction", "MaskHead",
    "postprocess", "rescore", "DecoderLevelOutput", "PixelDecoder", "SEBlock", "inject_coords",
    "AttentionContext", "CrossAttentionBlock", "QuerySet", "SelfAttentionFFNBlock", "TransformerDecoder",
    "sinusoidal_pos_embed",
]
