#!/usr/bin/env python3
"""Converts VGG16 and LPIPS linear-layer checkpoints into a CLWA weight archive.

The archive holds the 13 convolutions of torchvision's vgg16 ("features.N.weight"
and "features.N.bias") and, when given, the five LPIPS calibration vectors as
"lin0".."lin4" (one nonnegative weight per channel).
"""

import argparse
import struct

import torch


def vgg_tensors(path):
    if path:
        state = torch.load(path, map_location="cpu")
    else:
        import torchvision

        state = torchvision.models.vgg16(weights="IMAGENET1K_V1").state_dict()
    return {k: v for k, v in state.items() if k.startswith("features.")}


def lpips_tensors(path):
    # lpips package layout: "lin{l}.model.1.weight" of shape 1 x C x 1 x 1.
    state = torch.load(path, map_location="cpu")
    out = {}
    for l in range(5):
        out[f"lin{l}"] = state[f"lin{l}.model.1.weight"].flatten()
    return out


def write_archive(path, tensors):
    with open(path, "wb") as f:
        f.write(b"CLWA")
        f.write(struct.pack("<II", 1, len(tensors)))
        for name in sorted(tensors):
            t = tensors[name].detach().to(torch.float32).contiguous()
            encoded = name.encode()
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", t.dim()))
            f.write(struct.pack(f"<{t.dim()}q", *t.shape))
            f.write(t.numpy().astype("<f4").tobytes())


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--vgg", help="vgg16 state dict (.pth); default downloads via torchvision")
    parser.add_argument("--lpips", help="LPIPS vgg linear-layer state dict (.pth)")
    parser.add_argument("--out", required=True, help="output archive, e.g. ~/.cache/colorloss/vgg16.clwa")
    args = parser.parse_args()
    tensors = vgg_tensors(args.vgg)
    if args.lpips:
        tensors.update(lpips_tensors(args.lpips))
    write_archive(args.out, tensors)
    print(f"wrote {len(tensors)} tensors to {args.out}")


if __name__ == "__main__":
    main()
