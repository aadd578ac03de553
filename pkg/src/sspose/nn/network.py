"""The pose network: a small shared-parameter encoder-decoder.

Encoder: strided 3x3 convs (16 -> 32 -> 64 -> 64). Decoder: two blocks of
bilinear 2x upsampling + skip concat + 3x3 conv. A pointwise head emits
3K + 2 channels at 1/4 of the input resolution: per-axis coordinate-bin
scores and a 2-channel segmentation map. Siamese use is simply two forward
calls through the same parameter store.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..container import read_tensors, write_tensors
from . import tensor as T


@dataclass(frozen=True)
class NetConfig:
    in_size: int = 64
    k_bins: int = 65
    enc_channels: tuple = (16, 32, 64, 64)
    dec_channels: tuple = (64, 64)
    use_norm: bool = False
    norm_groups: int = 8
    init_seed: int = 0


class Conv2d:
    def __init__(self, cin, cout, k, stride, rng, name):
        std = np.sqrt(2.0 / (cin * k * k))   # He fan-in
        self.w = T.parameter(rng.normal(0.0, std, size=(cout, cin, k, k)), name=f"{name}.w")
        self.b = T.parameter(np.zeros(cout), name=f"{name}.b")
        self.stride = stride

    def __call__(self, x):
        return T.conv2d(x, self.w, self.b, stride=self.stride)

    def params(self):
        return [self.w, self.b]


class GroupNorm:
    def __init__(self, channels, groups, name):
        self.gamma = T.parameter(np.ones(channels), name=f"{name}.gamma")
        self.beta = T.parameter(np.zeros(channels), name=f"{name}.beta")
        self.groups = groups

    def __call__(self, x):
        return T.group_norm(x, self.gamma, self.beta, self.groups)

    def params(self):
        return [self.gamma, self.beta]


class PoseNet:
    """Builds the fixed encoder-decoder topology from a NetConfig."""

    def __init__(self, config: NetConfig = NetConfig()):
        self.config = config
        rng = np.random.default_rng(np.random.SeedSequence([0x5350, config.init_seed]))
        ch = config.enc_channels
        dc = config.dec_channels
        self.enc = []
        self.enc_norm = []
        cin = 3
        for i, cout in enumerate(ch):
            self.enc.append(Conv2d(cin, cout, 3, 2, rng, f"enc{i}"))
            self.enc_norm.append(GroupNorm(cout, config.norm_groups, f"enc{i}.norm")
                                 if config.use_norm else None)
            cin = cout
        # decoder block i upsamples then concatenates the skip from enc[-2-i]
        self.dec = []
        self.dec_norm = []
        cur = ch[-1]
        for i, cout in enumerate(dc):
            skip = ch[len(ch) - 2 - i]
            self.dec.append(Conv2d(cur + skip, cout, 3, 1, rng, f"dec{i}"))
            self.dec_norm.append(GroupNorm(cout, config.norm_groups, f"dec{i}.norm")
                                 if config.use_norm else None)
            cur = cout
        self.head = Conv2d(cur, 3 * config.k_bins + 2, 1, 1, rng, "head")

    @property
    def out_size(self) -> int:
        return self.config.in_size // 4

    def parameters(self):
        out = []
        for layer, norm in zip(self.enc, self.enc_norm):
            out += layer.params()
            if norm:
                out += norm.params()
        for layer, norm in zip(self.dec, self.dec_norm):
            out += layer.params()
            if norm:
                out += norm.params()
        out += self.head.params()
        return out

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def forward(self, image_hwc: np.ndarray):
        """Run one crop; returns (coord_scores (h, w, 3, K), seg_scores (h, w, 2))."""
        img = np.asarray(image_hwc, dtype=np.float64)
        s = self.config.in_size
        if img.shape != (s, s, 3):
            raise T.AutodiffError(f"expected input {(s, s, 3)}, got {img.shape}")
        x = T.constant(img.transpose(2, 0, 1))
        skips = []
        for layer, norm in zip(self.enc, self.enc_norm):
            x = layer(x)
            if norm:
                x = norm(x)
            x = T.relu(x)
            skips.append(x)
        for i, (layer, norm) in enumerate(zip(self.dec, self.dec_norm)):
            x = T.upsample2x(x)
            x = T.concat([x, skips[len(self.enc) - 2 - i]], axis=0)
            x = layer(x)
            if norm:
                x = norm(x)
            x = T.relu(x)
        out = self.head(x)                       # (3K + 2, h, w)
        k = self.config.k_bins
        h, w = out.shape[1], out.shape[2]
        assert self.config.in_size // h == 4, "output must sit at 1/4 input resolution"
        coord = T.narrow(out, 0, 0, 3 * k)
        coord = T.reshape(coord, (3, k, h, w))
        coord = T.transpose(coord, (2, 3, 0, 1))  # (h, w, 3, K)
        seg = T.narrow(out, 0, 3 * k, 2)
        seg = T.transpose(seg, (1, 2, 0))         # (h, w, 2)
        return coord, seg


def save_checkpoint(path, net: PoseNet, optimizer=None, step: int = 0,
                    extra: dict | None = None) -> None:
    """Write parameters (+ optimizer state) as float64 tensors with a JSON manifest."""
    path = Path(path)
    params = net.parameters()
    arrays = [p.data for p in params]
    names = [p.name for p in params]
    opt_state = optimizer.state_arrays() if optimizer is not None else []
    manifest = {
        "net_config": asdict(net.config),
        "param_names": names,
        "param_shapes": [list(p.data.shape) for p in params],
        "optimizer": optimizer.describe() if optimizer is not None else None,
        "n_opt_tensors": len(opt_state),
        "step": step,
        "extra": extra or {},
    }
    write_tensors(path, arrays + opt_state)
    Path(str(path) + ".json").write_text(json.dumps(manifest, indent=2))


def load_checkpoint(path, optimizer_factory=None):
    """Rebuild (net, optimizer, step, extra) from a checkpoint pair."""
    path = Path(path)
    manifest = json.loads(Path(str(path) + ".json").read_text())
    cfg_dict = dict(manifest["net_config"])
    cfg_dict["enc_channels"] = tuple(cfg_dict["enc_channels"])
    cfg_dict["dec_channels"] = tuple(cfg_dict["dec_channels"])
    net = PoseNet(NetConfig(**cfg_dict))
    arrays = read_tensors(path)
    params = net.parameters()
    n = len(params)
    if len(arrays) != n + manifest["n_opt_tensors"]:
        raise T.AutodiffError(f"checkpoint {path} holds {len(arrays)} tensors, "
                              f"expected {n + manifest['n_opt_tensors']}")
    for p, a, name in zip(params, arrays[:n], manifest["param_names"]):
        if p.data.shape != a.shape:
            raise T.AutodiffError(f"shape mismatch for {name}: {p.data.shape} vs {a.shape}")
        p.data = a.astype(np.float64)
    optimizer = None
    if optimizer_factory is not None and manifest["optimizer"] is not None:
        optimizer = optimizer_factory(manifest["optimizer"], params)
        optimizer.load_state_arrays(arrays[n:])
    return net, optimizer, manifest["step"], manifest.get("extra", {})
