#!/usr/bin/env python3
"""Export torchvision InceptionV3 weights for the `inception_v3` FID extractor.

Writes a directory with `meta.json` plus one little-endian f32 file per
tensor, named as in the torchvision state dict. The default destination is
`$SIGAN_CACHE/inception_v3` (`~/.cache/sigan/inception_v3` if unset).

    python scripts/export_inception.py                   # ImageNet weights
    python scripts/export_inception.py --random 7 --out /tmp/w --probe /tmp/w/probe.json

`--random SEED` exports a randomly initialised network (with randomised batch
norm statistics) instead of downloading weights. `--probe FILE` also writes
the pooled features of a fixed synthetic image so the Rust port can be
checked against torchvision.
"""

import argparse
import json
import os
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
import torchvision


def default_out():
    cache = os.environ.get("SIGAN_CACHE") or os.path.join(Path.home(), ".cache", "sigan")
    return Path(cache) / "inception_v3"


def build(random_seed):
    if random_seed is None:
        weights = torchvision.models.Inception_V3_Weights.IMAGENET1K_V1
        return torchvision.models.inception_v3(weights=weights, aux_logits=True), "torchvision IMAGENET1K_V1"
    torch.manual_seed(random_seed)
    net = torchvision.models.inception_v3(weights=None, aux_logits=True, init_weights=True)
    with torch.no_grad():
        for m in net.modules():
            if isinstance(m, torch.nn.BatchNorm2d):
                m.weight.uniform_(0.5, 1.5)
                m.bias.uniform_(-0.2, 0.2)
                m.running_mean.uniform_(-0.2, 0.2)
                m.running_var.uniform_(0.5, 2.0)
    return net, f"random seed {random_seed}"


def probe_image(size=256):
    y, x = np.mgrid[0:size, 0:size].astype(np.float32)
    return np.sin(x / 9.0) * np.cos(y / 13.0) * 0.8 + (x - y) / (4.0 * size)


def features(net, gray):
    x = torch.from_numpy(gray)[None, None]
    x = F.interpolate(x, size=(299, 299), mode="bilinear", align_corners=False)
    x = x.repeat(1, 3, 1, 1)
    # Skip `transform_input`: the pixels are already in [-1, 1].
    h = x
    for name in ["Conv2d_1a_3x3", "Conv2d_2a_3x3", "Conv2d_2b_3x3", "maxpool1", "Conv2d_3b_1x1",
                 "Conv2d_4a_3x3", "maxpool2", "Mixed_5b", "Mixed_5c", "Mixed_5d", "Mixed_6a", "Mixed_6b",
                 "Mixed_6c", "Mixed_6d", "Mixed_6e", "Mixed_7a", "Mixed_7b", "Mixed_7c", "avgpool"]:
        h = getattr(net, name)(h)
    return h.flatten(1)[0]


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", type=Path, default=default_out())
    ap.add_argument("--random", type=int, default=None, metavar="SEED")
    ap.add_argument("--probe", type=Path, default=None)
    args = ap.parse_args()

    net, source = build(args.random)
    net.eval()
    args.out.mkdir(parents=True, exist_ok=True)
    records = []
    for name, t in net.state_dict().items():
        if name.startswith(("AuxLogits.", "fc.")) or name.endswith("num_batches_tracked"):
            continue
        arr = t.detach().cpu().numpy().astype("<f4")
        file = f"{name}.bin"
        arr.tofile(args.out / file)
        records.append({"name": name, "shape": list(arr.shape), "file": file})
    meta = {
        "format_version": 1,
        "kind": "sigan-checkpoint",
        "epoch": 0,
        "step": 0,
        "config": {"source": source},
        "networks": [],
        "tensors": records,
    }
    (args.out / "meta.json").write_text(json.dumps(meta, indent=2))
    print(f"wrote {len(records)} tensors to {args.out}")

    if args.probe:
        gray = probe_image()
        with torch.no_grad():
            f = features(net, gray)
        args.probe.write_text(json.dumps({"size": 256, "features": f.tolist()}))
        print(f"wrote probe features to {args.probe}")


if __name__ == "__main__":
    main()
