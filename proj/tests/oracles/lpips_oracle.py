"""Frozen LPIPS reference values from the `lpips` package.

SqueezeNet ImageNet weights are not downloadable here, so the backbone is
the package's own random initialisation (pnet_rand=True) under a fixed
torch seed; the linear heads are the package's shipped v0.1 weights. The
whole network is exported in the C++ tensor-archive format next to the
reference distances, so the C++ metric can be checked against it.

Run: python3 tests/oracles/lpips_oracle.py  (writes tests/fixtures/lpips/)
"""
import json
import pathlib
import struct

import numpy as np
import torch
from PIL import Image

import lpips

OUT = pathlib.Path(__file__).resolve().parents[1] / "fixtures" / "lpips"


def write_archive(path, tensors):
    with open(path, "wb") as f:
        f.write(b"VSTARC01")
        f.write(struct.pack("<Q", len(tensors)))
        for name in sorted(tensors):
            a = np.ascontiguousarray(tensors[name], dtype="<f4")
            shape = list(a.shape)
            if a.ndim == 1:  # biases: [1, C, 1, 1]
                shape = [1, shape[0], 1, 1]
            while len(shape) < 4:
                shape = shape + [1]
            f.write(struct.pack("<Q", len(name)))
            f.write(name.encode())
            for d in shape:
                f.write(struct.pack("<Q", d))
            f.write(a.tobytes())


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(20240601)
    model = lpips.LPIPS(net="squeeze", pretrained=True, pnet_rand=True, verbose=False).eval()

    tensors = {}
    for key, value in model.state_dict().items():
        if key.startswith("net.slice"):
            # net.sliceK.<index>.<rest> -> features.<index>.<rest>
            _, _, index, rest = key.split(".", 3)
            tensors[f"features.{index}.{rest}"] = value.numpy()
        elif key.startswith("lin"):
            k = key.split(".")[0]
            tensors[f"{k}.weight"] = value.numpy()
    write_archive(OUT / "random_squeeze.bin", tensors)

    rng = np.random.default_rng(7)
    images = []
    base = rng.integers(0, 256, size=(48, 48, 3), dtype=np.uint8)
    images.append(base)
    noisy = np.clip(base.astype(int) + rng.integers(-20, 21, size=base.shape), 0, 255).astype(np.uint8)
    images.append(noisy)
    yy, xx = np.mgrid[0:48, 0:48]
    smooth = np.stack([(xx * 5) % 256, (yy * 5) % 256, ((xx + yy) * 3) % 256], axis=-1).astype(np.uint8)
    images.append(smooth)
    for i, im in enumerate(images):
        Image.fromarray(im, "RGB").save(OUT / f"img{i}.png")

    def to_t(im):
        t = torch.from_numpy(im.astype(np.float32) / 127.5 - 1.0).permute(2, 0, 1)[None]
        return t

    pairs = []
    with torch.no_grad():
        for a in range(len(images)):
            for b in range(len(images)):
                d = float(model(to_t(images[a]), to_t(images[b])).item())
                pairs.append({"a": f"img{a}.png", "b": f"img{b}.png", "lpips": d})
    (OUT / "reference.json").write_text(json.dumps({"weights": "random_squeeze.bin", "pairs": pairs}, indent=2) + "\n")


if __name__ == "__main__":
    main()
