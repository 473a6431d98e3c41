"""Toy text-to-image denoiser: a joint-attention transformer over patch tokens.

Caption tokens and image patch tokens are concatenated into one sequence and
processed by pre-norm transformer blocks whose attention spans both
modalities.  The network predicts a velocity field for rectified-flow
training and sampling.  Forward and backward passes are written by hand in
numpy so gradients can be verified against finite differences and runs are
bit-reproducible.

The same weights handle single panels (width = panel) and two-panel
canvases (width = 2*panel): positions factor into row/column embeddings and
canvas tokens are ordered left panel first, then right panel, so attention
partitions over [text; left; right] are contiguous.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .attention import AttentionPartition, EnhancementConfig, _rescale_reference_block
from .errors import ConfigError, ShapeError
from .numerics import SeededRng
from .text import VOCABULARY

_LN_EPS = 1e-6


@dataclass(frozen=True)
class ModelConfig:
    panel: int = 32
    patch: int = 4
    dim: int = 64
    depth: int = 4
    heads: int = 4
    mlp_ratio: int = 2
    text_len: int = 48
    vocab: int = len(VOCABULARY)

    def __post_init__(self):
        if self.panel % self.patch != 0:
            raise ConfigError(f"panel {self.panel} not divisible by patch {self.patch}")
        if self.dim % self.heads != 0:
            raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.dim % 2 != 0:
            raise ConfigError("dim must be even for sinusoidal time features")

    @property
    def patch_dim(self) -> int:
        return self.patch * self.patch * 3

    @property
    def grid(self) -> int:
        """Patches per panel side."""
        return self.panel // self.patch

    @property
    def tokens_per_panel(self) -> int:
        return self.grid * self.grid

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    @property
    def hidden(self) -> int:
        return self.mlp_ratio * self.dim


def _block_names(i: int) -> list[str]:
    p = f"block{i}_"
    return [
        p + "mod_w", p + "mod_b",
        p + "ln1_g", p + "ln1_b",
        p + "wq", p + "bq", p + "wk", p + "wv", p + "bv",
        p + "wo", p + "bo",
        p + "ln2_g", p + "ln2_b",
        p + "w1", p + "b1", p + "w2", p + "b2",
    ]


def param_order(cfg: ModelConfig) -> list[str]:
    """Declaration order of all parameter tensors (checkpoint layout order)."""
    names = [
        "token_emb", "text_pos", "row_pos", "col_pos",
        "patch_w", "patch_b",
        "time_w1", "time_b1", "time_w2", "time_b2",
    ]
    for i in range(cfg.depth):
        names.extend(_block_names(i))
    names.extend(["final_mod_w", "final_mod_b", "final_ln_g", "final_ln_b",
                  "out_w", "out_b"])
    return names


def init_params(cfg: ModelConfig, rng: SeededRng) -> dict[str, np.ndarray]:
    """Draws parameters from ``rng`` in declaration order."""
    m, hid, pd = cfg.dim, cfg.hidden, cfg.patch_dim
    res_scale = 1.0 / np.sqrt(2.0 * cfg.depth)

    def normal(shape, std):
        return rng.gaussian(int(np.prod(shape))).reshape(shape) * std

    params: dict[str, np.ndarray] = {
        "token_emb": normal((cfg.vocab, m), 0.02),
        "text_pos": normal((cfg.text_len, m), 0.02),
        "row_pos": normal((cfg.grid, m), 0.02),
        "col_pos": normal((2 * cfg.grid, m), 0.02),
        "patch_w": normal((pd, m), 1.0 / np.sqrt(pd)),
        "patch_b": np.zeros(m),
        "time_w1": normal((m, m), 1.0 / np.sqrt(m)),
        "time_b1": np.zeros(m),
        "time_w2": normal((m, m), 1.0 / np.sqrt(m)),
        "time_b2": np.zeros(m),
    }
    for i in range(cfg.depth):
        p = f"block{i}_"
        # time modulation starts at zero: gains 1+0, shifts 0 (plain layernorm)
        params[p + "mod_w"] = np.zeros((m, 4 * m))
        params[p + "mod_b"] = np.zeros(4 * m)
        params[p + "ln1_g"] = np.ones(m)
        params[p + "ln1_b"] = np.zeros(m)
        params[p + "wq"] = normal((m, m), 1.0 / np.sqrt(m))
        params[p + "bq"] = np.zeros(m)
        # no key bias: softmax is invariant to a shared shift of all keys
        params[p + "wk"] = normal((m, m), 1.0 / np.sqrt(m))
        params[p + "wv"] = normal((m, m), 1.0 / np.sqrt(m))
        params[p + "bv"] = np.zeros(m)
        params[p + "wo"] = normal((m, m), res_scale / np.sqrt(m))
        params[p + "bo"] = np.zeros(m)
        params[p + "ln2_g"] = np.ones(m)
        params[p + "ln2_b"] = np.zeros(m)
        params[p + "w1"] = normal((m, hid), 1.0 / np.sqrt(m))
        params[p + "b1"] = np.zeros(hid)
        params[p + "w2"] = normal((hid, m), res_scale / np.sqrt(hid))
        params[p + "b2"] = np.zeros(m)
    params["final_mod_w"] = np.zeros((m, 2 * m))
    params["final_mod_b"] = np.zeros(2 * m)
    params["final_ln_g"] = np.ones(m)
    params["final_ln_b"] = np.zeros(m)
    # Zero-initialized head: the untrained model predicts zero velocity.
    params["out_w"] = np.zeros((m, pd))
    params["out_b"] = np.zeros(pd)
    return params


@dataclass
class DenoiserModel:
    config: ModelConfig
    params: dict[str, np.ndarray] = field(repr=False)

    @classmethod
    def initialize(cls, config: ModelConfig, rng: SeededRng) -> "DenoiserModel":
        return cls(config, init_params(config, rng))

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def fingerprint(self) -> str:
        """Stable hash of the architecture config (adapter compatibility)."""
        blob = json.dumps(asdict(self.config), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def default_partition(self) -> AttentionPartition:
        per_panel = self.config.tokens_per_panel
        return AttentionPartition(self.config.text_len, per_panel, per_panel)

    def save(self, path) -> None:
        from .checkpoint import KIND_DENOISER, write_checkpoint

        tensors = [(name, self.params[name]) for name in param_order(self.config)]
        write_checkpoint(path, KIND_DENOISER, asdict(self.config), tensors)

    @classmethod
    def load(cls, path) -> "DenoiserModel":
        from .checkpoint import KIND_DENOISER, read_checkpoint
        from .errors import CompatibilityError

        kind, config, tensors = read_checkpoint(path)
        if kind != KIND_DENOISER:
            raise CompatibilityError(f"{path}: checkpoint kind {kind} is not a denoiser")
        cfg = ModelConfig(**config)
        expected = param_order(cfg)
        names = [n for n, _ in tensors]
        if names != expected:
            raise CompatibilityError(f"{path}: parameter tensors do not match declaration order")
        return cls(cfg, dict(tensors))


# ---------------------------------------------------------------------------
# image <-> token layout


def patchify(images: np.ndarray, cfg: ModelConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(B, h, W, 3) -> (tokens (B, S, patch_dim), row_idx (S,), col_idx (S,)).

    Width must be panel (single) or 2*panel (canvas).  Canvas tokens are the
    left panel's patches row-major, then the right panel's, so the sequence
    partitions contiguously into [left; right].
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4 or images.shape[3] != 3:
        raise ShapeError(f"expected (B, h, W, 3), got {images.shape}")
    b, h, width, _ = images.shape
    p, g = cfg.patch, cfg.grid
    if h != cfg.panel:
        raise ShapeError(f"image height {h} != panel {cfg.panel}")

    def panel_tokens(panel_img):
        t = panel_img.reshape(b, g, p, g, p, 3).transpose(0, 1, 3, 2, 4, 5)
        return t.reshape(b, g * g, cfg.patch_dim)

    rows = np.repeat(np.arange(g), g)
    cols = np.tile(np.arange(g), g)
    if width == cfg.panel:
        return panel_tokens(images), rows, cols
    if width == 2 * cfg.panel:
        left = panel_tokens(images[:, :, : cfg.panel])
        right = panel_tokens(images[:, :, cfg.panel :])
        tokens = np.concatenate([left, right], axis=1)
        row_idx = np.concatenate([rows, rows])
        col_idx = np.concatenate([cols, cols + g])
        return tokens, row_idx, col_idx
    raise ShapeError(f"width {width} must be panel ({cfg.panel}) or canvas ({2 * cfg.panel})")


def unpatchify(tokens: np.ndarray, cfg: ModelConfig, width: int) -> np.ndarray:
    """Inverse of :func:`patchify` for the given output width."""
    tokens = np.asarray(tokens, dtype=np.float64)
    b = tokens.shape[0]
    p, g = cfg.patch, cfg.grid

    def panel_image(tok):
        t = tok.reshape(b, g, g, p, p, 3).transpose(0, 1, 3, 2, 4, 5)
        return t.reshape(b, cfg.panel, cfg.panel, 3)

    if width == cfg.panel:
        if tokens.shape[1] != cfg.tokens_per_panel:
            raise ShapeError(f"token count {tokens.shape[1]} != {cfg.tokens_per_panel}")
        return panel_image(tokens)
    if width == 2 * cfg.panel:
        n = cfg.tokens_per_panel
        if tokens.shape[1] != 2 * n:
            raise ShapeError(f"token count {tokens.shape[1]} != {2 * n}")
        return np.concatenate([panel_image(tokens[:, :n]), panel_image(tokens[:, n:])], axis=2)
    raise ShapeError(f"unsupported width {width}")


# ---------------------------------------------------------------------------
# layers


def _layernorm_fwd(x):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    return xc * inv, inv


def _modln_fwd(x, gain, bias, scale, shift):
    """Layernorm with per-item time modulation: xhat*(g*(1+s)) + (b+shift)."""
    xhat, inv = _layernorm_fwd(x)
    y = xhat * (gain[None, :] * (1.0 + scale))[:, None, :] \
        + (bias[None, :] + shift)[:, None, :]
    return y, xhat, inv


def _modln_bwd(d_y, xhat, inv, gain, scale):
    prod = d_y * xhat
    d_gain = (prod * (1.0 + scale)[:, None, :]).sum(axis=(0, 1))
    d_scale = prod.sum(axis=1) * gain[None, :]
    d_bias = d_y.sum(axis=(0, 1))
    d_shift = d_y.sum(axis=1)
    d_xhat = d_y * (gain[None, :] * (1.0 + scale))[:, None, :]
    d_x = inv * (
        d_xhat
        - d_xhat.mean(axis=-1, keepdims=True)
        - xhat * (d_xhat * xhat).mean(axis=-1, keepdims=True)
    )
    return d_x, d_gain, d_bias, d_scale, d_shift


def _silu_fwd(z):
    s = 1.0 / (1.0 + np.exp(-z))
    return z * s, s


def _silu_bwd(d_y, z, s):
    return d_y * s * (1.0 + z * (1.0 - s))


def _split_heads(x, heads):
    b, s, m = x.shape
    return x.reshape(b, s, heads, m // heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, s, d = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, s, h * d)


def time_features(t: np.ndarray, dim: int) -> np.ndarray:
    """Sinusoidal features of t in [0, 1], frequencies geometric to 1e4."""
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    ang = t[:, None] * 1000.0 * freqs[None, :]
    return np.concatenate([np.cos(ang), np.sin(ang)], axis=-1)



def _outer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """sum_{batch,seq} a[..., i] b[..., j] as one GEMM."""
    return a.reshape(-1, a.shape[-1]).T @ b.reshape(-1, b.shape[-1])


def _softmax_stable(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# forward / backward


def forward(
    model: DenoiserModel,
    ids: np.ndarray,
    img_tokens: np.ndarray,
    row_idx: np.ndarray,
    col_idx: np.ndarray,
    t: np.ndarray,
    enhancement: tuple[AttentionPartition, EnhancementConfig] | None = None,
    inject: list[np.ndarray] | None = None,
    keep_cache: bool = False,
):
    """Velocity prediction over image tokens.

    ids: (B, text_len) int token ids; img_tokens: (B, S, patch_dim);
    t: (B,) times in [0, 1]; inject: optional per-block residuals
    (B, S, dim) added to the image-token stream after each attention
    sub-block.  Returns (velocity tokens (B, S, patch_dim), cache).
    """
    cfg, params = model.config, model.params
    b, text_len = ids.shape
    if text_len != cfg.text_len:
        raise ShapeError(f"caption length {text_len} != model text_len {cfg.text_len}")
    s_img = img_tokens.shape[1]
    if enhancement is not None:
        part = enhancement[0]
        if part.text_len != text_len or part.left_len + part.right_len != s_img:
            raise ShapeError(
                f"partition {part} does not match sequence (text {text_len}, image {s_img})"
            )
        if keep_cache:
            raise ConfigError("attention enhancement is inference-only (no backward)")
    if inject is not None and len(inject) != cfg.depth:
        raise ShapeError(f"expected {cfg.depth} injection tensors, got {len(inject)}")

    cache: dict = {"ids": ids, "img_tokens": img_tokens,
                   "row_idx": row_idx, "col_idx": col_idx, "blocks": []}

    t_feat = time_features(np.asarray(t, dtype=np.float64), cfg.dim)
    z_t = t_feat @ params["time_w1"] + params["time_b1"]
    t_hidden, s_t = _silu_fwd(z_t)
    t_emb = t_hidden @ params["time_w2"] + params["time_b2"]

    h_text = params["token_emb"][ids] + params["text_pos"][None, :, :]
    h_img = (
        img_tokens @ params["patch_w"]
        + params["patch_b"]
        + params["row_pos"][row_idx]
        + params["col_pos"][col_idx]
    )
    # time enters only through layernorm modulation below
    h = np.concatenate([h_text, h_img], axis=1)
    if keep_cache:
        cache.update(t_feat=t_feat, z_t=z_t, s_t=s_t, t_hidden=t_hidden, t_emb=t_emb)

    m = cfg.dim
    scale = 1.0 / np.sqrt(float(cfg.head_dim))
    for i in range(cfg.depth):
        p = f"block{i}_"
        bc: dict = {}
        mod = t_emb @ params[p + "mod_w"] + params[p + "mod_b"]
        sc1, sh1, sc2, sh2 = mod[:, :m], mod[:, m:2 * m], mod[:, 2 * m:3 * m], mod[:, 3 * m:]
        ln1, xhat1, inv1 = _modln_fwd(h, params[p + "ln1_g"], params[p + "ln1_b"], sc1, sh1)
        q = _split_heads(ln1 @ params[p + "wq"] + params[p + "bq"], cfg.heads)
        k = _split_heads(ln1 @ params[p + "wk"], cfg.heads)
        v = _split_heads(ln1 @ params[p + "wv"] + params[p + "bv"], cfg.heads)
        w = _softmax_stable(q @ k.transpose(0, 1, 3, 2) * scale)
        if enhancement is not None:
            part, ecfg = enhancement
            if ecfg.layers is None or i in ecfg.layers:
                w = _rescale_reference_block(w, part, ecfg)
        att = _merge_heads(w @ v)
        proj = att @ params[p + "wo"] + params[p + "bo"]
        h = h + proj
        if inject is not None:
            h = h.copy()
            h[:, text_len:, :] += inject[i]
        ln2, xhat2, inv2 = _modln_fwd(h, params[p + "ln2_g"], params[p + "ln2_b"], sc2, sh2)
        z1 = ln2 @ params[p + "w1"] + params[p + "b1"]
        mlp_h, s1 = _silu_fwd(z1)
        mlp_o = mlp_h @ params[p + "w2"] + params[p + "b2"]
        h = h + mlp_o
        if keep_cache:
            bc.update(xhat1=xhat1, inv1=inv1, ln1=ln1, q=q, k=k, v=v, w=w,
                      att=att, xhat2=xhat2, inv2=inv2, ln2=ln2, z1=z1, s1=s1,
                      mlp_h=mlp_h, sc1=sc1, sc2=sc2)
            cache["blocks"].append(bc)

    h_img_out = h[:, text_len:, :]
    fmod = t_emb @ params["final_mod_w"] + params["final_mod_b"]
    scf, shf = fmod[:, :m], fmod[:, m:]
    f_out, xhat_f, inv_f = _modln_fwd(h_img_out, params["final_ln_g"],
                                      params["final_ln_b"], scf, shf)
    velocity = f_out @ params["out_w"] + params["out_b"]
    if keep_cache:
        cache.update(xhat_f=xhat_f, inv_f=inv_f, f_out=f_out, text_len=text_len, scf=scf)
        return velocity, cache
    return velocity, None


def backward(
    model: DenoiserModel,
    cache: dict,
    d_velocity: np.ndarray,
    want_inject_grads: bool = False,
):
    """Gradients of a scalar loss wrt all parameters given d loss/d velocity.

    Returns (grads dict keyed like params, inject_grads list or None).
    """
    cfg, params = model.config, model.params
    text_len = cache["text_len"]
    grads = {name: np.zeros_like(p) for name, p in params.items()}
    inject_grads: list[np.ndarray] | None = (
        [None] * cfg.depth if want_inject_grads else None  # type: ignore[list-item]
    )

    m = cfg.dim
    t_emb = cache["t_emb"]
    d_t_emb = np.zeros_like(t_emb)

    grads["out_w"] = _outer(cache["f_out"], d_velocity)
    grads["out_b"] = d_velocity.sum(axis=(0, 1))
    d_f = d_velocity @ params["out_w"].T
    d_img_out, grads["final_ln_g"], grads["final_ln_b"], d_scf, d_shf = _modln_bwd(
        d_f, cache["xhat_f"], cache["inv_f"], params["final_ln_g"], cache["scf"]
    )
    d_fmod = np.concatenate([d_scf, d_shf], axis=1)
    grads["final_mod_w"] = t_emb.T @ d_fmod
    grads["final_mod_b"] = d_fmod.sum(axis=0)
    d_t_emb += d_fmod @ params["final_mod_w"].T

    b, s_img, _ = d_img_out.shape
    d_h = np.zeros((b, text_len + s_img, cfg.dim))
    d_h[:, text_len:, :] = d_img_out

    scale = 1.0 / np.sqrt(float(cfg.head_dim))
    for i in reversed(range(cfg.depth)):
        p = f"block{i}_"
        bc = cache["blocks"][i]
        # MLP residual
        d_mlp_o = d_h
        grads[p + "w2"] = _outer(bc["mlp_h"], d_mlp_o)
        grads[p + "b2"] = d_mlp_o.sum(axis=(0, 1))
        d_mlp_h = d_mlp_o @ params[p + "w2"].T
        d_z1 = _silu_bwd(d_mlp_h, bc["z1"], bc["s1"])
        grads[p + "w1"] = _outer(bc["ln2"], d_z1)
        grads[p + "b1"] = d_z1.sum(axis=(0, 1))
        d_ln2 = d_z1 @ params[p + "w1"].T
        d_x2, grads[p + "ln2_g"], grads[p + "ln2_b"], d_sc2, d_sh2 = _modln_bwd(
            d_ln2, bc["xhat2"], bc["inv2"], params[p + "ln2_g"], bc["sc2"]
        )
        d_h = d_h + d_x2
        if inject_grads is not None:
            inject_grads[i] = d_h[:, text_len:, :].copy()
        # attention residual
        d_proj = d_h
        grads[p + "wo"] = _outer(bc["att"], d_proj)
        grads[p + "bo"] = d_proj.sum(axis=(0, 1))
        d_att = _split_heads(d_proj @ params[p + "wo"].T, cfg.heads)
        d_w = d_att @ bc["v"].transpose(0, 1, 3, 2)
        d_v = bc["w"].transpose(0, 1, 3, 2) @ d_att
        d_logits = bc["w"] * (d_w - (d_w * bc["w"]).sum(axis=-1, keepdims=True))
        d_q = d_logits @ bc["k"] * scale
        d_k = d_logits.transpose(0, 1, 3, 2) @ bc["q"] * scale
        d_qm, d_km, d_vm = (_merge_heads(x) for x in (d_q, d_k, d_v))
        grads[p + "wq"] = _outer(bc["ln1"], d_qm)
        grads[p + "bq"] = d_qm.sum(axis=(0, 1))
        grads[p + "wk"] = _outer(bc["ln1"], d_km)
        grads[p + "wv"] = _outer(bc["ln1"], d_vm)
        grads[p + "bv"] = d_vm.sum(axis=(0, 1))
        d_ln1 = d_qm @ params[p + "wq"].T + d_km @ params[p + "wk"].T + d_vm @ params[p + "wv"].T
        d_x1, grads[p + "ln1_g"], grads[p + "ln1_b"], d_sc1, d_sh1 = _modln_bwd(
            d_ln1, bc["xhat1"], bc["inv1"], params[p + "ln1_g"], bc["sc1"]
        )
        d_h = d_h + d_x1
        d_mod = np.concatenate([d_sc1, d_sh1, d_sc2, d_sh2], axis=1)
        grads[p + "mod_w"] = t_emb.T @ d_mod
        grads[p + "mod_b"] = d_mod.sum(axis=0)
        d_t_emb += d_mod @ params[p + "mod_w"].T

    # embeddings
    grads["time_w2"] = cache["t_hidden"].T @ d_t_emb
    grads["time_b2"] = d_t_emb.sum(axis=0)
    d_t_hidden = d_t_emb @ params["time_w2"].T
    d_z_t = _silu_bwd(d_t_hidden, cache["z_t"], cache["s_t"])
    grads["time_w1"] = cache["t_feat"].T @ d_z_t
    grads["time_b1"] = d_z_t.sum(axis=0)

    d_text = d_h[:, :text_len, :]
    d_img = d_h[:, text_len:, :]
    np.add.at(grads["token_emb"], cache["ids"], d_text)
    grads["text_pos"] = d_text.sum(axis=0)
    grads["patch_w"] = _outer(cache["img_tokens"], d_img)
    grads["patch_b"] = d_img.sum(axis=(0, 1))
    d_img_pos = d_img.sum(axis=0)
    np.add.at(grads["row_pos"], cache["row_idx"], d_img_pos)
    np.add.at(grads["col_pos"], cache["col_idx"], d_img_pos)
    return grads, inject_grads


def predict_velocity(
    model: DenoiserModel,
    image: np.ndarray,
    time: float,
    caption,
    cfg: EnhancementConfig | None = None,
    partition: AttentionPartition | None = None,
    inject: list[np.ndarray] | None = None,
) -> np.ndarray:
    """Velocity field for a single image (model space, same shape as input)."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3:
        raise ShapeError(f"expected (h, W, 3) image, got {image.shape}")
    if not 0.0 <= time <= 1.0:
        raise ValueError(f"time must lie in [0, 1], got {time}")
    if cfg is not None and cfg.factor > 1.0 and partition is None:
        raise ConfigError("enhancement with factor > 1 requires an attention partition")
    tokens, row_idx, col_idx = patchify(image[None], model.config)
    enhancement = None if cfg is None or partition is None else (partition, cfg)
    ids = caption.as_array()[None, :]
    v, _ = forward(
        model, ids, tokens, row_idx, col_idx,
        np.asarray([time], dtype=np.float64), enhancement=enhancement, inject=inject,
    )
    return unpatchify(v, model.config, image.shape[1])[0]
