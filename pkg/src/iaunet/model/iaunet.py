from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..config import ModelConfig
from ..core import Module, Tensor, no_grad
from .encoder import Encoder, FeaturePyramid
from .mask_head import Instance, InstancePrediction, MaskHead, postprocess
from .pixel_decoder import DecoderLevelOutput, PixelDecoder
from .transformer_decoder import QuerySet, TransformerDecoder


@dataclass
class ModelOutput:
    predictions: list[InstancePrediction]  # one per supervision point; last = final output
    queries: QuerySet
    pyramid: FeaturePyramid
    levels: list[DecoderLevelOutput]
    fused: Tensor

    @property
    def final(self) -> InstancePrediction:
        return self.predictions[-1]


class IAUNet(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        d = cfg.hidden_dim
        self.encoder = Encoder(cfg.in_channels, cfg.stem_channels, tuple(cfg.encoder_channels), rng)
        self.pixel_decoder = PixelDecoder(tuple(cfg.encoder_channels), d, rng, cfg.use_se,
                                          cfg.se_reduction, cfg.use_coordconv)
        self.transformer = TransformerDecoder(cfg.num_queries, d, cfg.ffn_dim, rng, num_levels=3,
                                              blocks_per_layer=cfg.blocks_per_layer, heads=cfg.num_heads)
        self.mask_head = MaskHead(cfg.encoder_channels[0], d, cfg.num_classes, rng)

    def supervised_states(self, qs: QuerySet) -> list[Tensor]:
        """Query states that receive a loss, in emission order.

        ``block``: the initial queries plus the state after every Transformer
        block; ``layer``: initial queries plus every ``blocks_per_layer``-th
        state; ``none``: only the final state.
        """
        states = qs.states
        mode = self.cfg.deep_supervision
        if mode == "none":
            return [states[-1]]
        initial = self.transformer.initial_queries(states[-1].shape[0]).q
        if mode == "block":
            return [initial] + states
        per = self.cfg.blocks_per_layer
        return [initial] + [s for i, s in enumerate(states) if (i + 1) % per == 0]

    def forward(self, images: Tensor) -> ModelOutput:
        pyramid = self.encoder(images)
        levels = self.pixel_decoder.decode(pyramid)
        qs = self.transformer.refine(self.transformer.initial_queries(images.shape[0]), levels,
                                     self.cfg.update_order)
        fused = self.mask_head.fuse(pyramid.s4, levels[-1].x_mask)
        preds = [self.mask_head(state, fused) for state in self.supervised_states(qs)]
        return ModelOutput(preds, qs, pyramid, levels, fused)

    def predict(self, images: np.ndarray, out_size: tuple[int, int] | None = None) -> list[list[Instance]]:
        """Eval-mode inference on a [B, 3, H, W] batch; restores the previous mode."""
        was_training = self.training
        self.eval()
        try:
            with no_grad():
                pyramid = self.encoder(Tensor(images))
                levels = self.pixel_decoder.decode(pyramid)
                qs = self.transformer.refine(self.transformer.initial_queries(images.shape[0]), levels,
                                             self.cfg.update_order)
                fused = self.mask_head.fuse(pyramid.s4, levels[-1].x_mask)
                pred = self.mask_head(qs.states[-1], fused)
        finally:
            self.train(was_training)
        out_h, out_w = out_size or images.shape[2:]
        return [postprocess(pred.class_logits.data[i], pred.mask_logits.data[i], out_h, out_w,
                            self.cfg.score_floor, self.cfg.mask_threshold)
                for i in range(images.shape[0])]
