"""The full stack-to-disparity network and its ablation switches."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .decoder import DecoderConfig, DepthDecoder
from .encoder import EncoderConfig, FocusEncoder
from .fusion import FusionConfig, StackFusion
from .nn import Module
from .tensor import ConfigError, Tensor, get_default_dtype


@dataclass
class ModelConfig:
    image_size: int = 64
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    no_lstm: bool = False
    constant_kernel: bool = False
    no_depth_conv: bool = False

    def __post_init__(self):
        if isinstance(self.encoder, dict):
            self.encoder = EncoderConfig(**self.encoder)
        if isinstance(self.fusion, dict):
            self.fusion = FusionConfig(**self.fusion)
        if isinstance(self.decoder, dict):
            self.decoder = DecoderConfig(**self.decoder)
        if self.image_size % self.encoder.patch_size:
            raise ConfigError(f"image_size {self.image_size} is not a multiple of patch size {self.encoder.patch_size}")

    def effective_encoder(self) -> EncoderConfig:
        enc = asdict(self.encoder)
        if self.constant_kernel:
            enc["multiscale_kernels"] = (3,) * len(self.encoder.multiscale_kernels)
        if self.no_depth_conv:
            enc["use_depth_conv"] = False
        return EncoderConfig(**enc)

    def to_dict(self) -> dict:
        d = asdict(self)
        for section in ("encoder", "decoder"):
            for key, value in d[section].items():
                if isinstance(value, tuple):
                    d[section][key] = list(value)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


class FocusDepthNet(Module):
    """Focal stack (n×H×W×3, ascending focus) -> disparity map (H×W).

    Every frame is encoded independently.  The full model fuses final tokens
    with :class:`StackFusion` and decodes once, with skip features averaged
    over frames.  With ``no_lstm`` each frame is decoded on its own and the
    disparity maps are averaged.
    """

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        enc = config.effective_encoder()
        size = (config.image_size, config.image_size)
        self.encoder = FocusEncoder(enc, size, rng)
        self.grid = self.encoder.grid
        self.fusion = None if config.no_lstm else StackFusion(enc.embed_dim, config.fusion, rng)
        self.decoder = DepthDecoder(enc.embed_dim, enc.patch_size, self.grid, config.decoder, rng,
                                    num_skips=len(enc.skip_block_indices))

    def _as_input(self, frames) -> Tensor:
        if isinstance(frames, Tensor):
            return frames
        frames = np.asarray(frames)
        if frames.ndim != 4 or frames.shape[-1] != 3:
            raise ConfigError(f"expected n×H×W×3 frames, got {frames.shape}")
        dtype = self.parameters()[0].dtype if self.parameters() else get_default_dtype()
        return Tensor(np.ascontiguousarray(frames.transpose(0, 3, 1, 2)), dtype=dtype)

    def encode(self, frames) -> tuple[Tensor, list[Tensor]]:
        return self.encoder(self._as_input(frames))

    def forward(self, frames) -> Tensor:
        tokens, skips = self.encode(frames)
        if self.fusion is None:
            per_frame = self.decoder(tokens, skips)
            return per_frame.mean(axis=0)
        fused = self.fusion.fuse_stack(tokens)
        return self.decoder(fused, [s.mean(axis=0) for s in skips])

    @property
    def last_attention(self) -> np.ndarray | None:
        return self.encoder.transformer.last_attention
