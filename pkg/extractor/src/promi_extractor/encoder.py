"""Patch encoders behind one interface: image tensor in, (Gh, Gw, D) out.

``dinov2-vitb14`` loads pretrained weights (hub download or a local
directory via --weights). The ``*-untrained`` variants build the same
architecture with seeded random weights: identical shapes, token grids,
and determinism, usable offline; their features are meaningless for real
segmentation quality.
"""

from __future__ import annotations

import numpy as np
import torch

ENCODERS = ("dinov2-vitb14", "dinov2-vitb14-untrained",
            "vit-tiny-p14-untrained")


class PatchEncoder:
    """Wraps a HF Dinov2 backbone; emits L2-unnormalized patch grids."""

    def __init__(self, model, patch_size: int, depth: int, name: str):
        self.model = model.eval()
        self.patch_size = patch_size
        self.depth = depth
        self.name = name

    def grid_for(self, height: int, width: int) -> tuple[int, int]:
        """Token grid the backbone produces for an input of that size
        (stride-``patch_size`` convolution, floor division)."""
        return height // self.patch_size, width // self.patch_size

    @torch.no_grad()
    def encode(self, pixels: torch.Tensor) -> np.ndarray:
        """(3, H, W) normalized image tensor -> (Gh, Gw, D) float32."""
        tokens = self.model(pixels[None]).last_hidden_state[0]
        gh, gw = self.grid_for(pixels.shape[1], pixels.shape[2])
        patch_tokens = tokens[tokens.shape[0] - gh * gw:]
        return (patch_tokens.reshape(gh, gw, self.depth)
                .to(torch.float32).cpu().numpy())


def build_encoder(name: str, weights_path=None, seed: int = 0) -> PatchEncoder:
    from transformers import Dinov2Config, Dinov2Model

    if name == "dinov2-vitb14":
        source = str(weights_path) if weights_path else "facebook/dinov2-base"
        model = Dinov2Model.from_pretrained(source)
        return PatchEncoder(model, patch_size=model.config.patch_size,
                            depth=model.config.hidden_size, name=name)
    if name == "dinov2-vitb14-untrained":
        config = Dinov2Config(hidden_size=768, num_hidden_layers=12,
                              num_attention_heads=12, patch_size=14)
    elif name == "vit-tiny-p14-untrained":
        config = Dinov2Config(hidden_size=32, num_hidden_layers=1,
                              num_attention_heads=2, intermediate_size=64,
                              patch_size=14)
    else:
        raise ValueError(f"unknown encoder {name!r}; pick one of {ENCODERS}")
    torch.manual_seed(seed)
    return PatchEncoder(Dinov2Model(config), patch_size=config.patch_size,
                        depth=config.hidden_size, name=name)
