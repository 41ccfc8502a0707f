#!/usr/bin/env python3
"""Writes a tiny random-weight denoiser (SGSW) and torch float64 outputs for it.

    python3 tests/fixtures/gen_unet_reference.py tests/fixtures

The C++ loader must reproduce `output` for every case within 1e-5 max-abs.
"""
import json
import math
import struct
import sys
from pathlib import Path

import torch
import torch.nn.functional as F

torch.set_default_dtype(torch.float64)


def manifest(arch):
    out = []
    td, B, E = arch["time_dim"], arch["base_width"], len(arch["encoder_depths"])

    def conv(p, cout, cin, k):
        out.append((p + ".weight", [cout, cin, k, k]))
        out.append((p + ".bias", [cout]))

    def block(p, w):
        for l in range(2):
            lp = f"{p}.l{l}"
            if l == 1 or arch["condition_first"]:
                out.append((lp + ".ada.weight", [3 * w, td]))
                out.append((lp + ".ada.bias", [3 * w]))
            else:
                out.append((lp + ".norm.weight", [w]))
                out.append((lp + ".norm.bias", [w]))
            conv(lp + ".conv", w, w, 3)

    conv("stem", B, arch["in_channels"], 3)
    out += [("time_mlp.0.weight", [td, td]), ("time_mlp.0.bias", [td]),
            ("time_mlp.2.weight", [td, td]), ("time_mlp.2.bias", [td])]
    for i in range(E):
        w = B << i
        for b in range(arch["encoder_depths"][i]):
            block(f"enc.{i}.blocks.{b}", w)
        conv(f"enc.{i}.down", 2 * w, w, 3)
    for b in range(arch["middle_depth"]):
        block(f"mid.blocks.{b}", B << E)
    for j in range(E):
        w = B << (E - 1 - j)
        conv(f"dec.{j}.up", w, 2 * w, 3)
        conv(f"dec.{j}.fuse", w, 2 * w, 1)
        for b in range(arch["decoder_depths"][j]):
            block(f"dec.{j}.blocks.{b}", w)
    out += [("head.norm.weight", [B]), ("head.norm.bias", [B])]
    conv("head.conv", arch["in_channels"], B, 3)
    return out


def embed(t, dim):
    half = dim // 2
    k = torch.arange(half, dtype=torch.float64)
    freq = torch.exp(-math.log(10000.0) * k / half)
    return torch.cat([torch.sin(t * freq), torch.cos(t * freq)])


def reference_forward(arch, W, x, t):
    G, E = arch["groups"], len(arch["encoder_depths"])
    temb = F.silu(W["time_mlp.0.weight"] @ embed(t, arch["time_dim"]) + W["time_mlp.0.bias"])
    temb = W["time_mlp.2.weight"] @ temb + W["time_mlp.2.bias"]
    temb = F.silu(temb)

    def conv(p, h, stride=1, pad=1):
        return F.conv2d(h[None], W[p + ".weight"], W[p + ".bias"], stride=stride, padding=pad)[0]

    def norm_act(h, scale, shift):
        n = F.group_norm(h[None], G, eps=1e-5)[0]
        return F.silu(scale[:, None, None] * n + shift[:, None, None])

    def layer(p, h, conditioned):
        C = h.shape[0]
        if conditioned:
            m = W[p + ".ada.weight"] @ temb + W[p + ".ada.bias"]
            scale, shift, gate = m[:C], m[C:2 * C], m[2 * C:]
        else:
            scale, shift, gate = W[p + ".norm.weight"], W[p + ".norm.bias"], torch.ones(C)
        return h + gate[:, None, None] * conv(p + ".conv", norm_act(h, scale, shift))

    def blocks(p, h, depth):
        for b in range(depth):
            h = layer(f"{p}.blocks.{b}.l0", h, arch["condition_first"])
            h = layer(f"{p}.blocks.{b}.l1", h, True)
        return h

    h = conv("stem", x)
    skips = []
    for i in range(E):
        h = blocks(f"enc.{i}", h, arch["encoder_depths"][i])
        skips.append(h)
        h = conv(f"enc.{i}.down", h, stride=2)
    h = blocks("mid", h, arch["middle_depth"])
    for j in range(E):
        h = F.interpolate(h[None], scale_factor=2, mode="nearest")[0]
        h = conv(f"dec.{j}.up", h)
        h = conv(f"dec.{j}.fuse", torch.cat([h, skips[E - 1 - j]]), pad=0)
        h = blocks(f"dec.{j}", h, arch["decoder_depths"][j])
    h = norm_act(h, W["head.norm.weight"], W["head.norm.bias"])
    return conv("head.conv", h)


def write_sgsw(path, arch, alpha_bar, named):
    tensors, payload, offset = [], bytearray(), 0
    for name, shape in manifest(arch):
        vals = named[name].reshape(-1).tolist()
        blob = struct.pack("<%df" % len(vals), *vals)
        tensors.append({"name": name, "shape": shape, "dtype": "f32", "offset": offset, "nbytes": len(blob)})
        payload += blob
        offset += len(blob)
    header = json.dumps({"arch": arch, "alpha_bar": alpha_bar, "tensors": tensors}).encode()
    with open(path, "wb") as f:
        f.write(b"SGSW" + struct.pack("<IQ", 1, len(header)) + header + payload)


def make(out_dir, stem, arch, seed, hw, cases):
    gen = torch.Generator().manual_seed(seed)
    W = {}
    for name, shape in manifest(arch):
        fan_in = math.prod(shape[1:]) if len(shape) > 1 else 1
        scale = 1.0 / math.sqrt(fan_in) if len(shape) > 1 else 0.3
        v = torch.randn(shape, generator=gen) * scale
        if name.endswith("norm.weight"):
            v = v + 1.0
        # the container stores f32; the reference must see the same numbers
        W[name] = v.float().double()

    T = 50
    betas = torch.linspace(1e-4, 0.2, T)
    alpha_bar = torch.cumprod(1 - betas, 0).tolist()
    write_sgsw(out_dir / f"{stem}.sgsw", arch, alpha_bar, W)

    ref = {"shape": [arch["in_channels"], hw, hw], "cases": []}
    for c in range(cases):
        x = torch.randn([arch["in_channels"], hw, hw], generator=gen)
        t = int(torch.randint(1, T + 1, (1,), generator=gen))
        y = reference_forward(arch, W, x, float(t))
        ref["cases"].append({"t": t, "input": x.reshape(-1).tolist(), "output": y.reshape(-1).tolist()})
    (out_dir / f"{stem}_reference.json").write_text(json.dumps(ref))


def main():
    out_dir = Path(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).parent)
    base = {"in_channels": 2, "base_width": 8, "groups": 4, "time_dim": 16,
            "encoder_depths": [1, 1], "middle_depth": 1, "decoder_depths": [1, 1], "condition_first": False}
    make(out_dir, "tiny_unet", base, 1234, 8, 10)
    make(out_dir, "tiny_unet_cond", dict(base, condition_first=True, encoder_depths=[2, 0], decoder_depths=[0, 2]),
         99, 8, 3)


if __name__ == "__main__":
    main()
