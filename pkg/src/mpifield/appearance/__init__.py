from .buffer import BUFFER_CHANNELS, DeepBuffer, build_deep_buffer, precompute_exemplar_channels
from .losses import gram, style_loss
from .model import AppearanceModel, interpolate_appearance, render_4d
from .nets import (
    EncoderParams,
    RendererParams,
    adain,
    adain_coefficients,
    decode_planes,
    encode_features,
)

__all__ = [
    "AppearanceModel",
    "BUFFER_CHANNELS",
    "DeepBuffer",
    "EncoderParams",
    "RendererParams",
    "adain",
    "adain_coefficients",
    "build_deep_buffer",
    "decode_planes",
    "encode_features",
    "gram",
    "interpolate_appearance",
    "precompute_exemplar_channels",
    "render_4d",
    "style_loss",
]
