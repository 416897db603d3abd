"""Visuotactile policy: patch + force-torque tokens, a small set of learned
latents that cross-attends to them, latent self-attention, and an MLP head.

Both wrist images are cut into non-overlapping patches and linearly
projected (one shared projection); each force-torque history row projects to
one token. Learned per-modality, per-index position encodings are added.
Eight latents cross-attend to the token set, pass through post-norm
self-attention layers, and are flattened and projected to z_vt; proprio runs
through its own two-layer MLP to z_p. The policy MLP maps concat(z_vt, z_p)
to a sigmoid-squashed action. Disabled modalities contribute no tokens at
all; if vision and touch are both disabled z_vt is the zero vector, and a
disabled proprio zeroes z_p.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass

import numpy as np

from . import ndnet as nd
from .ndnet import Tensor
from .sensors import FT_COLS, FT_ROWS, IMG_SIZE, PROPRIO_DIM, Observation

log = logging.getLogger(__name__)

# Input scaling: images to [0,1]; forces ~100 N and torques ~6 N*m to O(1);
# positions ~100 mm to O(1); quaternions are unit already.
IMAGE_SCALE = 255.0
FORCE_SCALE = 50.0
TORQUE_SCALE = 5.0
POSITION_SCALE = 100.0

_FORCE_COLS = [0, 1, 2, 6, 7, 8]
_TORQUE_COLS = [3, 4, 5, 9, 10, 11]
_POS_IDX = [0, 1, 2, 7, 8, 9]


class AllTokensMasked(Exception):
    """Tokenization was asked for with vision and touch both disabled."""


@dataclass(frozen=True)
class ModalityMask:
    use_vision: bool = True
    use_touch: bool = True
    use_proprio: bool = True

    def __post_init__(self):
        if not (self.use_vision or self.use_touch or self.use_proprio):
            raise ValueError("at least one modality must stay enabled")


MASK_PRESETS = {
    "full": ModalityMask(),
    "no-vision": ModalityMask(use_vision=False),
    "no-touch": ModalityMask(use_touch=False),
    "no-prop": ModalityMask(use_proprio=False),
    "touch-only": ModalityMask(use_vision=False, use_proprio=False),
    "prop-only": ModalityMask(use_vision=False, use_touch=False),
    "vision-only": ModalityMask(use_touch=False, use_proprio=False),
}


def parse_mask(name: str) -> ModalityMask:
    try:
        return MASK_PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown mask {name!r}; one of {sorted(MASK_PRESETS)}") from None


@dataclass(frozen=True)
class EncoderConfig:
    n_latents: int = 8
    latent_dim: int = 64
    token_dim: int = 64
    self_attn_layers: int = 2
    heads: int = 4
    z_vt_dim: int = 288
    z_p_dim: int = 32
    patch: int = 14
    proprio_hidden: int = 64
    policy_hidden: tuple[int, int] = (256, 256)

    def __post_init__(self):
        if IMG_SIZE % self.patch:
            raise ValueError(f"patch {self.patch} must divide {IMG_SIZE}")
        if self.token_dim % self.heads or self.latent_dim % self.heads:
            raise ValueError("widths must be divisible by the head count")
        if self.latent_dim != self.token_dim:
            raise ValueError("latents and tokens share one attention width")

    @property
    def patches_per_side(self) -> int:
        return IMG_SIZE // self.patch

    @property
    def patches_per_view(self) -> int:
        return self.patches_per_side**2

    @property
    def z_dim(self) -> int:
        return self.z_vt_dim + self.z_p_dim

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "EncoderConfig":
        d = dict(d)
        d["policy_hidden"] = tuple(d["policy_hidden"])
        return cls(**d)


class VisuotactilePolicy:
    """Parameters plus the forward passes; one instance per training seed."""

    def __init__(
        self,
        config: EncoderConfig | None = None,
        action_dim: int = 3,
        seed: int = 0,
        dtype=np.float32,
    ):
        self.config = config or EncoderConfig()
        self.action_dim = action_dim
        self.dtype = dtype
        self._params: dict[str, Tensor] = {}
        self._init_params(np.random.default_rng(np.random.SeedSequence((seed, 77003))))
        log.info("model built: %d parameters", self.param_count())

    # ------------------------------------------------------------ params

    def _weight(self, rng, name: str, fan_in: int, fan_out: int) -> None:
        bound = np.sqrt(1.0 / fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        self._params[name + ".w"] = nd.param(w.astype(self.dtype), name + ".w")
        self._params[name + ".b"] = nd.param(np.zeros(fan_out, dtype=self.dtype), name + ".b")

    def _gaussian(self, rng, name: str, shape: tuple) -> None:
        self._params[name] = nd.param(
            rng.normal(0.0, 0.02, size=shape).astype(self.dtype), name
        )

    def _norm(self, name: str, dim: int) -> None:
        self._params[name + ".gain"] = nd.param(np.ones(dim, dtype=self.dtype), name + ".gain")
        self._params[name + ".bias"] = nd.param(np.zeros(dim, dtype=self.dtype), name + ".bias")

    def _attn_block(self, rng, name: str, dim: int) -> None:
        for part in ("wq", "wk", "wv", "wo"):
            self._weight(rng, f"{name}.{part}", dim, dim)
        self._norm(f"{name}.ln", dim)

    def _init_params(self, rng) -> None:
        c = self.config
        patch_flat = c.patch * c.patch * 3
        self._weight(rng, "patch_proj", patch_flat, c.token_dim)
        self._weight(rng, "tactile_proj", FT_COLS, c.token_dim)
        self._gaussian(rng, "pos_vision_left", (c.patches_per_view, c.token_dim))
        self._gaussian(rng, "pos_vision_right", (c.patches_per_view, c.token_dim))
        self._gaussian(rng, "pos_tactile", (FT_ROWS, c.token_dim))
        self._gaussian(rng, "latents", (c.n_latents, c.latent_dim))
        self._attn_block(rng, "cross", c.latent_dim)
        for i in range(c.self_attn_layers):
            self._attn_block(rng, f"self{i}", c.latent_dim)
        self._weight(rng, "z_vt", c.n_latents * c.latent_dim, c.z_vt_dim)
        self._weight(rng, "proprio1", PROPRIO_DIM, c.proprio_hidden)
        self._weight(rng, "proprio2", c.proprio_hidden, c.z_p_dim)
        h1, h2 = c.policy_hidden
        self._weight(rng, "policy1", c.z_dim, h1)
        self._weight(rng, "policy2", h1, h2)
        self._weight(rng, "policy3", h2, self.action_dim)

    def parameters(self) -> list[Tensor]:
        return list(self._params.values())

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def _p(self, name: str) -> Tensor:
        return self._params[name]

    def _attn_tensors(self, name: str) -> list[Tensor]:
        return [
            self._p(f"{name}.{part}.{kind}")
            for part in ("wq", "wk", "wv", "wo")
            for kind in ("w", "b")
        ]

    # ----------------------------------------------------------- forward

    def _patches(self, images: np.ndarray) -> np.ndarray:
        """[B, 2, 84, 84, 3] uint8 -> [B, 2*n_patches, patch*patch*3] floats."""
        c = self.config
        b = images.shape[0]
        side, p = c.patches_per_side, c.patch
        x = images.astype(self.dtype) / IMAGE_SCALE
        x = x.reshape(b, 2, side, p, side, p, 3)
        x = x.transpose(0, 1, 2, 4, 3, 5, 6)  # [B, 2, side, side, p, p, 3]
        return x.reshape(b, 2 * c.patches_per_view, p * p * 3)

    def _scaled_ft(self, ft: np.ndarray) -> np.ndarray:
        out = ft.astype(self.dtype).copy()
        out[..., _FORCE_COLS] /= FORCE_SCALE
        out[..., _TORQUE_COLS] /= TORQUE_SCALE
        return out

    def _scaled_proprio(self, proprio: np.ndarray) -> np.ndarray:
        out = proprio.astype(self.dtype).copy()
        out[..., _POS_IDX] /= POSITION_SCALE
        return out

    def tokenize(
        self, images: np.ndarray, ft: np.ndarray, mask: ModalityMask
    ) -> tuple[Tensor, list[str]]:
        """Batched token assembly -> ([B, n_tok, token_dim], modality tags)."""
        if not (mask.use_vision or mask.use_touch):
            raise AllTokensMasked("vision and touch both disabled")
        c = self.config
        parts: list[Tensor] = []
        tags: list[str] = []
        if mask.use_vision:
            patches = self._patches(images)
            pos = nd.concat(
                [self._p("pos_vision_left"), self._p("pos_vision_right")], axis=0
            )
            vis = nd.add(
                nd.linear(Tensor(patches), self._p("patch_proj.w"), self._p("patch_proj.b")),
                pos,
            )
            parts.append(vis)
            tags += ["vision_left"] * c.patches_per_view
            tags += ["vision_right"] * c.patches_per_view
        if mask.use_touch:
            rows = self._scaled_ft(ft)
            tac = nd.add(
                nd.linear(Tensor(rows), self._p("tactile_proj.w"), self._p("tactile_proj.b")),
                self._p("pos_tactile"),
            )
            parts.append(tac)
            tags += ["tactile"] * FT_ROWS
        tokens = parts[0] if len(parts) == 1 else nd.concat(parts, axis=1)
        return tokens, tags

    def _post_norm(self, name: str, x: Tensor, sub: Tensor) -> Tensor:
        normed = nd.layer_norm(nd.add(x, sub))
        return nd.add(nd.mul(normed, self._p(f"{name}.ln.gain")), self._p(f"{name}.ln.bias"))

    def encode(self, tokens: Tensor) -> tuple[Tensor, np.ndarray]:
        """Latent bottleneck -> (z_vt [B, z_vt_dim], cross-attention weights
        [B, heads, n_latents, n_tok])."""
        c = self.config
        batch = tokens.shape[0]
        lat = nd.expand(self._p("latents"), batch)
        attn_out, attn_w = nd.mha(lat, tokens, *self._attn_tensors("cross"), heads=c.heads)
        x = self._post_norm("cross", lat, attn_out)
        for i in range(c.self_attn_layers):
            sa, _ = nd.mha(x, x, *self._attn_tensors(f"self{i}"), heads=c.heads)
            x = self._post_norm(f"self{i}", x, sa)
        flat = nd.reshape(x, (batch, c.n_latents * c.latent_dim))
        z_vt = nd.linear(flat, self._p("z_vt.w"), self._p("z_vt.b"))
        return z_vt, attn_w

    def _proprio_head(self, proprio: np.ndarray) -> Tensor:
        x = Tensor(self._scaled_proprio(proprio))
        h = nd.gelu(nd.linear(x, self._p("proprio1.w"), self._p("proprio1.b")))
        return nd.linear(h, self._p("proprio2.w"), self._p("proprio2.b"))

    def forward_batch(
        self,
        images: np.ndarray,
        ft: np.ndarray,
        proprio: np.ndarray,
        mask: ModalityMask,
    ) -> tuple[Tensor, np.ndarray | None, list[str]]:
        """-> (actions [B, action_dim], cross-attention weights or None, tags)."""
        c = self.config
        batch = images.shape[0]
        if mask.use_vision or mask.use_touch:
            tokens, tags = self.tokenize(images, ft, mask)
            z_vt, attn = self.encode(tokens)
        else:
            z_vt = Tensor(np.zeros((batch, c.z_vt_dim), dtype=self.dtype))
            attn, tags = None, []
        if mask.use_proprio:
            z_p = self._proprio_head(proprio)
        else:
            z_p = Tensor(np.zeros((batch, c.z_p_dim), dtype=self.dtype))
        z = nd.concat([z_vt, z_p], axis=-1)
        h = nd.gelu(nd.linear(z, self._p("policy1.w"), self._p("policy1.b")))
        h = nd.gelu(nd.linear(h, self._p("policy2.w"), self._p("policy2.b")))
        action = nd.sigmoid(nd.linear(h, self._p("policy3.w"), self._p("policy3.b")))
        return action, attn, tags

    def act(self, obs: Observation, mask: ModalityMask) -> np.ndarray:
        """Single-observation inference -> action in [0,1]^action_dim."""
        out, _, _ = self.forward_batch(
            np.stack([np.stack([obs.image_left, obs.image_right])]),
            obs.ft[None],
            obs.proprio[None],
            mask,
        )
        return out.data[0].astype(np.float64)

    def act_batch(self, observations: list[Observation], mask: ModalityMask) -> np.ndarray:
        images = np.stack([np.stack([o.image_left, o.image_right]) for o in observations])
        ft = np.stack([o.ft for o in observations])
        proprio = np.stack([o.proprio for o in observations])
        out, _, _ = self.forward_batch(images, ft, proprio, mask)
        return out.data.astype(np.float64)

    def act_with_attention(self, obs: Observation, mask: ModalityMask) -> tuple[np.ndarray, dict]:
        out, attn, tags = self.forward_batch(
            np.stack([np.stack([obs.image_left, obs.image_right])]),
            obs.ft[None],
            obs.proprio[None],
            mask,
        )
        report = attention_proportions(
            attn[0] if attn is not None else None, tags, self.config.patches_per_side
        )
        return out.data[0].astype(np.float64), report

    # ---------------------------------------------------------- training

    def train_step(
        self,
        images: np.ndarray,
        ft: np.ndarray,
        proprio: np.ndarray,
        actions: np.ndarray,
        mask: ModalityMask,
        adam: nd.Adam,
    ) -> float:
        pred, _, _ = self.forward_batch(images, ft, proprio, mask)
        loss = nd.mse_loss(pred, Tensor(actions.astype(self.dtype)))
        nd.backward(loss)
        adam.step()
        return loss.item()

    # ------------------------------------------------------- persistence

    def save(self, path, meta: dict | None = None) -> None:
        full = {
            "encoder_config": self.config.to_json(),
            "action_dim": self.action_dim,
            **(meta or {}),
        }
        nd.save_checkpoint(path, self.parameters(), meta=full)

    @classmethod
    def load(cls, path) -> tuple["VisuotactilePolicy", dict]:
        arrays, meta = nd.load_checkpoint(path)
        config = EncoderConfig.from_json(meta["encoder_config"])
        model = cls(config, action_dim=meta["action_dim"], seed=0)
        for name, tensor in model._params.items():
            if name not in arrays:
                raise nd.CheckpointFormatError(f"{path}: missing parameter {name!r}")
            if arrays[name].shape != tensor.shape:
                raise nd.CheckpointFormatError(
                    f"{path}: {name} shape {arrays[name].shape} != {tensor.shape}"
                )
            tensor.data = arrays[name].astype(model.dtype)
        return model, meta


def attention_proportions(
    attn: np.ndarray | None, tags: list[str], patches_per_side: int
) -> dict:
    """Cross-attention weights averaged over heads and latents, grouped by
    modality. Proportions sum to 1 when any token exists; masked modalities
    report zero and zeroed weight maps."""
    side = patches_per_side
    n_view = side * side
    out = {
        "proportions": {"vision_left": 0.0, "vision_right": 0.0, "tactile": 0.0},
        "vision_heatmaps": np.zeros((2, side, side)),
        "tactile_weights": np.zeros(FT_ROWS),
    }
    if attn is None or not tags:
        out["vision_heatmaps"] = out["vision_heatmaps"].tolist()
        out["tactile_weights"] = out["tactile_weights"].tolist()
        return out
    if attn.ndim != 3:
        raise ValueError(f"expected [heads, latents, tokens], got {attn.shape}")
    weights = attn.mean(axis=(0, 1))  # [n_tok], sums to 1
    tags_arr = np.array(tags)
    for name in ("vision_left", "vision_right", "tactile"):
        sel = weights[tags_arr == name]
        out["proportions"][name] = float(sel.sum())
    if "vision_left" in tags_arr:
        vis = weights[: 2 * n_view]
        out["vision_heatmaps"] = np.stack(
            [vis[:n_view].reshape(side, side), vis[n_view:].reshape(side, side)]
        )
    if "tactile" in tags_arr:
        out["tactile_weights"] = weights[tags_arr == "tactile"]
    out["vision_heatmaps"] = np.asarray(out["vision_heatmaps"]).tolist()
    out["tactile_weights"] = np.asarray(out["tactile_weights"]).tolist()
    return out
