"""The assembled relation model and its checkpoint container.

Frozen pieces: the toy feature encoder. Trainable pieces: the re-patching
projection and patch position embedding, class and location tokens, the
three mask-embedding tokens, the neck blocks, the gate MLP and the shared
relation MLP. Scene features are computed once per image and reused across
every pair; each ordered pair costs one embed + prune + neck + head pass.

Checkpoints are a single binary file: a magic line, a little-endian uint64
header length, a canonical-JSON header (config, vocabulary, tensor table),
then the raw float64 buffers in table order. Canonical JSON plus fixed
buffer order makes save -> load -> save byte-identical.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from . import backbone as bb
from .autodiff import Tensor, no_grad
from .bidir_head import (GateParams, RelHeadParams, init_gate, init_relhead,
                         predict_bidirectional, predict_forward_only)
from .counters import COUNTERS
from .mask_embed import (BinaryMask, MaskEmbedTokens, OverlapRatios,
                         embed_pair, ratios_from_logits, ratios_pooled,
                         ratios_upsampled_reference)
from .neck import (NeckConfig, NeckParams, TokenSequence, flop_estimate,
                   init_neck, neck_forward, prune_patches)

_MAGIC = b"PSGLITE-CKPT-1\n"


@dataclass
class ModelConfig:
    image_hw: int = 64
    enc_patch: int = 8
    enc_dim: int = 32
    enc_depth: int = 2
    enc_heads: int = 4
    enc_taps: tuple = (0, 1)
    grid: int = 8              # relation patch grid (grid x grid tokens)
    dim: int = 64
    depth: int = 2
    heads: int = 4
    mlp_ratio: int = 2
    n_predicates: int = 6
    seg_stride: int = 4        # mask-logit resolution = image_hw / seg_stride
    seed: int = 0

    @property
    def encoder(self) -> bb.EncoderConfig:
        return bb.EncoderConfig(self.image_hw, self.enc_patch, self.enc_dim,
                                self.enc_depth, self.enc_heads, self.mlp_ratio,
                                tuple(self.enc_taps))

    @property
    def neck(self) -> NeckConfig:
        return NeckConfig(self.depth, self.heads, self.dim, self.mlp_ratio)

    @property
    def n_patches(self) -> int:
        return self.grid * self.grid


@dataclass
class PairOptions:
    prune: bool = True
    tome_ratio: float = 0.0
    bidirectional: bool = True


class RelationModel:
    def __init__(self, config: ModelConfig, vocab: dict | None = None):
        self.config = config
        self.vocab = vocab or {
            "thing_classes": list(bb.CLASS_NAMES),
            "predicate_classes": list(bb.PREDICATES[: config.n_predicates]),
        }
        rng = np.random.default_rng(config.seed)
        enc_cfg = config.encoder
        self.encoder_params = bb.init_encoder(enc_cfg, rng)
        d = config.dim
        in_dim = (enc_cfg.grid // config.grid) ** 2 * enc_cfg.stack_channels
        self.proj_w = Tensor(rng.normal(0.0, in_dim ** -0.5, size=(in_dim, d)),
                             requires_grad=True)
        self.proj_b = Tensor(np.zeros(d), requires_grad=True)
        self.pos = Tensor(rng.normal(0.0, 0.02, size=(config.n_patches, d)),
                          requires_grad=True)
        self.class_token = Tensor(rng.normal(0.0, 0.02, size=d), requires_grad=True)
        self.location_token = Tensor(rng.normal(0.0, 0.02, size=d), requires_grad=True)
        self.embed_tokens = MaskEmbedTokens(
            t_s=Tensor(rng.normal(0.0, 0.02, size=d), requires_grad=True),
            t_o=Tensor(rng.normal(0.0, 0.02, size=d), requires_grad=True),
            t_bg=Tensor(rng.normal(0.0, 0.02, size=d), requires_grad=True),
        )
        self.neck_params: NeckParams = init_neck(config.neck, rng)
        self.gate: GateParams = init_gate(d, rng)
        self.relhead: RelHeadParams = init_relhead(d, config.n_predicates, rng)

    # -- parameter registry ---------------------------------------------------

    def trainable_params(self) -> dict[str, Tensor]:
        params = {
            "proj_w": self.proj_w, "proj_b": self.proj_b, "pos": self.pos,
            "class_token": self.class_token, "location_token": self.location_token,
            "embed.t_s": self.embed_tokens.t_s,
            "embed.t_o": self.embed_tokens.t_o,
            "embed.t_bg": self.embed_tokens.t_bg,
        }
        params.update(self.neck_params.named())
        params.update(self.gate.named())
        params.update(self.relhead.named())
        return params

    def all_tensors(self) -> dict[str, np.ndarray]:
        out = {k: v.data for k, v in self.trainable_params().items()}
        out.update(self.encoder_params)
        return out

    def encoder_checksum(self) -> float:
        return float(sum(np.abs(v).sum() for v in self.encoder_params.values()))

    # -- pipeline stages --------------------------------------------------------

    def encode_image(self, pixels: np.ndarray, tome_ratio: float = 0.0) -> bb.FeatureStack:
        """Frozen encoder pass; cacheable since nothing in it ever trains."""
        return bb.extract_features(bb.SyntheticImage(pixels), self.encoder_params,
                                   self.config.encoder, tome_ratio)

    def repatch_stack(self, stack: bb.FeatureStack) -> Tensor:
        return bb.repatch(stack, (self.config.grid, self.config.grid),
                          self.proj_w, self.proj_b, self.pos)

    def scene_features(self, pixels: np.ndarray, tome_ratio: float = 0.0) -> Tensor:
        """Frozen encode + learned re-patch; one call per image."""
        return self.repatch_stack(self.encode_image(pixels, tome_ratio))

    def mask_ratios(self, masks: list[BinaryMask]) -> list[OverlapRatios]:
        return ratios_pooled(masks, (self.config.grid, self.config.grid))

    def logit_ratios(self, logits: np.ndarray, lowres: bool = True) -> list[OverlapRatios]:
        grid = (self.config.grid, self.config.grid)
        if lowres:
            return ratios_from_logits(logits, grid)
        hw = (self.config.image_hw, self.config.image_hw)
        return ratios_upsampled_reference(logits, grid, hw)

    def pair_feature(self, patches: Tensor, r_s: OverlapRatios, r_o: OverlapRatios,
                     prune: bool = True) -> Tensor:
        tokens = embed_pair(patches, r_s, r_o, self.embed_tokens)
        seq = TokenSequence(self.class_token, self.location_token, tokens,
                            np.arange(self.config.n_patches))
        if prune:
            seq = prune_patches(seq, r_s, r_o)
        COUNTERS.bump("neck_flops", flop_estimate(seq.patch_tokens.shape[0],
                                                  self.config.neck))
        return neck_forward(seq, self.neck_params, self.config.neck)

    def predict_pair(self, patches: Tensor, r_s: OverlapRatios, r_o: OverlapRatios,
                     prune: bool = True) -> tuple[np.ndarray, np.ndarray]:
        """Both direction logits for one ordered pair (one head pass)."""
        x = self.pair_feature(patches, r_s, r_o, prune)
        z_fwd, z_bwd = predict_bidirectional(x, self.gate, self.relhead)
        return z_fwd.data, z_bwd.data

    def predict_scene(self, pixels: np.ndarray, ratios: list[OverlapRatios],
                      options: PairOptions | None = None,
                      swap_order: bool = False) -> list[tuple[int, int, np.ndarray]]:
        """Comprehensive graph: predicate scores for every ordered instance pair.

        Returns (subject_idx, object_idx, sigmoid scores) rows. With the
        bidirectional head each unordered pair costs one pass; the
        unidirectional ablation runs every ordered pair separately.
        """
        options = options or PairOptions()
        n = len(ratios)
        out = []
        with no_grad():
            patches = self.scene_features(pixels, options.tome_ratio)
            for i in range(n):
                for j in range(i + 1, n):
                    a, b = (j, i) if swap_order else (i, j)
                    if options.bidirectional:
                        z_ab, z_ba = self.predict_pair(patches, ratios[a],
                                                       ratios[b], options.prune)
                        out.append((a, b, _sig(z_ab)))
                        out.append((b, a, _sig(z_ba)))
                    else:
                        x = self.pair_feature(patches, ratios[a], ratios[b],
                                              options.prune)
                        z_ab = predict_forward_only(x, self.gate, self.relhead)
                        x2 = self.pair_feature(patches, ratios[b], ratios[a],
                                               options.prune)
                        z_ba = predict_forward_only(x2, self.gate, self.relhead)
                        out.append((a, b, _sig(z_ab.data)))
                        out.append((b, a, _sig(z_ba.data)))
        return out


def _sig(z: np.ndarray) -> np.ndarray:
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                    np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


# -- checkpoint I/O -------------------------------------------------------------


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(path: str, model: RelationModel) -> None:
    tensors = model.all_tensors()
    names = sorted(tensors)
    table = []
    offset = 0
    for name in names:
        arr = np.ascontiguousarray(tensors[name], dtype=np.float64)
        table.append({"name": name, "shape": list(arr.shape),
                      "dtype": "float64", "offset": offset,
                      "nbytes": arr.nbytes})
        offset += arr.nbytes
    header = {
        "config": {**asdict(model.config), "enc_taps": list(model.config.enc_taps)},
        "vocab": model.vocab,
        "tensors": table,
    }
    blob = _canonical_json(header)
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for name in names:
            f.write(np.ascontiguousarray(tensors[name], dtype=np.float64).tobytes())


def load_checkpoint(path: str) -> RelationModel:
    with open(path, "rb") as f:
        magic = f.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError("not a checkpoint file")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode("utf-8"))
        cfg_dict = dict(header["config"])
        cfg_dict["enc_taps"] = tuple(cfg_dict["enc_taps"])
        config = ModelConfig(**cfg_dict)
        model = RelationModel(config, vocab=header["vocab"])
        loaded = {}
        for entry in header["tensors"]:
            buf = f.read(entry["nbytes"])
            arr = np.frombuffer(buf, dtype=np.float64).reshape(entry["shape"]).copy()
            loaded[entry["name"]] = arr
    current = {**model.trainable_params()}
    for name, arr in loaded.items():
        if name in current:
            current[name].data[...] = arr
        elif name in model.encoder_params:
            model.encoder_params[name][...] = arr
        else:
            raise ValueError(f"unknown tensor {name!r} in checkpoint")
    return model
