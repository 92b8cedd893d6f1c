from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .codec import LatentCodec, decode_latent, encode_latent, patchify, unpatchify
from .discriminator import Discriminator, DiscriminatorConfig, DiscriminatorOutput, discriminator_forward
from .features import FeatureExtractor, default_extractor, feature_extract
from .generator import Generator, GeneratorConfig, generator_forward, semantic_encode
from .lora import LoRALinear, LowRankAdapter, apply_lora

__all__ = [
    "CheckpointError",
    "Discriminator",
    "DiscriminatorConfig",
    "DiscriminatorOutput",
    "FeatureExtractor",
    "Generator",
    "GeneratorConfig",
    "LatentCodec",
    "LoRALinear",
    "LowRankAdapter",
    "apply_lora",
    "decode_latent",
    "default_extractor",
    "discriminator_forward",
    "encode_latent",
    "feature_extract",
    "generator_forward",
    "load_checkpoint",
    "patchify",
    "save_checkpoint",
    "semantic_encode",
    "unpatchify",
]
