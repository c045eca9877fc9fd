"""Full detector: encoder -> FRB -> MFRM -> decoder -> detection head."""
from __future__ import annotations

from dataclasses import asdict, dataclass

from torch import nn

from .decoder import Decoder, DecoderConfig
from .encoder import GaborResNetEncoder
from .frb import FeatureRepresentationBlock, FrbConfig
from .gabor import GaborParams
from .head import DetectionHead
from .mfrm import MultiScaleRefinement


@dataclass
class ModelConfig:
    orientations: int = 4
    scales: int = 4
    encoder_ladder: tuple = (16, 32, 64)
    frb_channels: int = 32
    frb_kernel_sizes: tuple = (7, 5, 3)
    frb_layers: tuple = (2, 2, 2)
    frb_downsample: str = "conv"
    decoder_ladder: tuple = (128, 64, 32, 16)
    decoder_factors: tuple = (1, 2, 1, 1)
    batch_norm: bool = True
    max_distance: float = 128.0
    quad_scale: float = 32.0

    def __post_init__(self):
        for name in ("encoder_ladder", "frb_kernel_sizes", "frb_layers", "decoder_ladder", "decoder_factors"):
            setattr(self, name, tuple(int(v) for v in getattr(self, name)))

    @classmethod
    def full_scale(cls):
        """Channel widths of the full-size network (N = 512)."""
        return cls(encoder_ladder=(64, 128, 256), frb_channels=512, decoder_ladder=(256, 128, 64, 32),
                   max_distance=512.0, quad_scale=128.0)

    def to_dict(self):
        return asdict(self)

    @property
    def gabor(self):
        return GaborParams(orientations=self.orientations, scales=self.scales)

    @property
    def output_stride(self):
        return 8 // DecoderConfig(self.decoder_ladder, self.decoder_factors).upsampling


class FRBDetector(nn.Module):
    def __init__(self, cfg: ModelConfig | None = None):
        super().__init__()
        cfg = cfg or ModelConfig()
        self.cfg = cfg
        gabor = cfg.gabor
        self.encoder = GaborResNetEncoder(cfg.encoder_ladder, gabor, cfg.batch_norm)
        frb_cfg = FrbConfig(cfg.frb_channels, cfg.frb_kernel_sizes, cfg.frb_layers,
                            downsample=cfg.frb_downsample, batch_norm=cfg.batch_norm)
        self.frb = FeatureRepresentationBlock(self.encoder.out_channels, frb_cfg, gabor)
        self.mfrm = MultiScaleRefinement(cfg.frb_channels, cfg.orientations, frb_cfg.rows)
        self.decoder = Decoder(self.mfrm.out_channels, self.encoder.skip_channels[::-1], cfg.orientations,
                               DecoderConfig(cfg.decoder_ladder, cfg.decoder_factors))
        self.head = DetectionHead(self.decoder.out_channels, cfg.max_distance, cfg.quad_scale)

    @property
    def output_stride(self):
        return self.cfg.output_stride

    def forward(self, images):
        enc = self.encoder(images)
        rows = self.frb(enc.conv3_2)
        agg = self.mfrm(rows)
        feat = self.decoder(agg, enc.skips[::-1])
        return self.head(feat)
