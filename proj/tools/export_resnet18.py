#!/usr/bin/env python3
"""Export resnet18 weights as a .fpwa teacher archive.

The archive feeds the `train` subcommand as the frozen teacher for
full-scale benchmarks. Weight sources, in order of preference:

  --weights FILE   a torch state_dict saved with torch.save
  (default)        torchvision's pretrained resnet18 (downloads on first use)
  --random         correctly-shaped random weights, no torch required;
                   only useful for exercising the pipeline

Examples:
  python3 tools/export_resnet18.py --out weights/resnet18.fpwa
  python3 tools/export_resnet18.py --weights r18.pth --out weights/resnet18.fpwa
"""

import argparse
import json
import random
import struct
import sys

MAGIC = b"FPWA"
VERSION = 1

# Channel statistics of the large natural-image corpus the pretrained
# weights were fitted on; inputs must be normalized the same way.
NORM = {"mean": [0.485, 0.456, 0.406], "std": [0.229, 0.224, 0.225]}

STAGES = [(2, 64, 1), (2, 128, 2), (2, 256, 2), (2, 512, 2)]  # blocks, channels, stride
STEM_CHANNELS = 64
IN_CHANNELS = 3


def bn_shapes(prefix, channels):
    return {
        prefix + ".gamma": (channels,),
        prefix + ".beta": (channels,),
        prefix + ".rmean": (channels,),
        prefix + ".rvar": (channels,),
    }


def expected_shapes():
    """Tensor name -> shape for the resnet18 trunk, matching the loader."""
    shapes = {"g1.conv.w": (STEM_CHANNELS, IN_CHANNELS, 7, 7)}
    shapes.update(bn_shapes("g1.bn", STEM_CHANNELS))
    cin = STEM_CHANNELS
    for si, (blocks, cout, stride) in enumerate(STAGES):
        g = f"g{si + 2}"
        for bi in range(blocks):
            p = f"{g}.b{bi}"
            s = stride if bi == 0 else 1
            shapes[p + ".conv1.w"] = (cout, cin, 3, 3)
            shapes.update(bn_shapes(p + ".bn1", cout))
            shapes[p + ".conv2.w"] = (cout, cout, 3, 3)
            shapes.update(bn_shapes(p + ".bn2", cout))
            if s != 1 or cin != cout:
                shapes[p + ".down.conv.w"] = (cout, cin, 1, 1)
                shapes.update(bn_shapes(p + ".down.bn", cout))
            cin = cout
    return shapes


def rename(key):
    """torch state_dict key -> archive tensor name; None drops the entry."""
    if key.startswith("fc.") or key.endswith("num_batches_tracked"):
        return None
    bn_suffix = {
        "weight": "gamma",
        "bias": "beta",
        "running_mean": "rmean",
        "running_var": "rvar",
    }
    if key.startswith("conv1."):
        return "g1.conv.w"
    if key.startswith("bn1."):
        return "g1.bn." + bn_suffix[key.split(".", 1)[1]]
    if key.startswith("layer"):
        parts = key.split(".")  # layer2 . 0 . downsample . 0 . weight
        g = f"g{int(parts[0][5:]) + 1}.b{parts[1]}"
        if parts[2] == "downsample":
            which = "down.conv.w" if parts[3] == "0" else "down.bn." + bn_suffix[parts[4]]
            return f"{g}.{which}"
        if parts[2].startswith("conv"):
            return f"{g}.{parts[2]}.w"
        return f"{g}.{parts[2]}.{bn_suffix[parts[3]]}"
    raise SystemExit(f"unrecognized state_dict key: {key}")


def tensors_from_torch(weights_file):
    try:
        import torch  # noqa: F401  (deferred so --random works without it)
    except ImportError:
        raise SystemExit("torch is not installed; use --weights on a machine that "
                         "has it, or --random for shape-only testing")
    if weights_file:
        state = torch.load(weights_file, map_location="cpu")
        if hasattr(state, "state_dict"):
            state = state.state_dict()
    else:
        from torchvision.models import ResNet18_Weights, resnet18
        state = resnet18(weights=ResNet18_Weights.IMAGENET1K_V1).state_dict()

    tensors = {}
    for key, value in state.items():
        name = rename(key)
        if name is None:
            continue
        data = value.detach().cpu().float().contiguous()
        try:
            buf = data.numpy().astype("<f4", copy=False).tobytes()
        except Exception:
            flat = data.reshape(-1).tolist()
            buf = struct.pack(f"<{len(flat)}f", *flat)
        tensors[name] = (tuple(data.shape), buf)
    return tensors


def tensors_random(seed):
    rng = random.Random(seed)
    tensors = {}
    for name, shape in expected_shapes().items():
        n = 1
        for d in shape:
            n *= d
        if name.endswith(".rvar"):
            values = [1.0] * n
        elif name.endswith(".gamma"):
            values = [1.0] * n
        elif name.endswith((".beta", ".rmean")):
            values = [0.0] * n
        else:
            scale = (2.0 / n) ** 0.5
            values = [rng.gauss(0.0, scale) for _ in range(n)]
        tensors[name] = (shape, struct.pack(f"<{n}f", *values))
    return tensors


def check_complete(tensors):
    expected = expected_shapes()
    missing = sorted(set(expected) - set(tensors))
    extra = sorted(set(tensors) - set(expected))
    if missing or extra:
        raise SystemExit(f"conversion mismatch: missing {missing[:4]}, extra {extra[:4]}")
    for name, (shape, _) in tensors.items():
        if tuple(shape) != expected[name]:
            raise SystemExit(f"{name}: shape {shape}, expected {expected[name]}")


def write_archive(path, meta, tensors):
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        meta_bytes = json.dumps(meta).encode()
        f.write(struct.pack("<Q", len(meta_bytes)))
        f.write(meta_bytes)
        f.write(struct.pack("<Q", len(tensors)))
        for name, (shape, buf) in sorted(tensors.items()):
            name_bytes = name.encode()
            f.write(struct.pack("<I", len(name_bytes)))
            f.write(name_bytes)
            f.write(struct.pack("<I", len(shape)))
            for d in shape:
                f.write(struct.pack("<q", d))
            f.write(struct.pack("<Q", len(buf)))
            f.write(buf)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True, help="archive file to write")
    ap.add_argument("--weights", help="torch state_dict file (default: torchvision download)")
    ap.add_argument("--random", action="store_true",
                    help="random weights instead of pretrained ones (pipeline testing only)")
    ap.add_argument("--input-size", type=int, default=256)
    ap.add_argument("--seed", type=int, default=0, help="seed for --random")
    args = ap.parse_args()

    tensors = tensors_random(args.seed) if args.random else tensors_from_torch(args.weights)
    check_complete(tensors)

    source = "random" if args.random else (args.weights or "torchvision IMAGENET1K_V1")
    meta = {
        "kind": "teacher",
        "arch": "resnet18",
        "input_size": args.input_size,
        "norm": NORM,
        "extra": {"source": source},
    }
    if args.random:
        meta["extra"]["note"] = "randomly initialized; for pipeline testing only"
    write_archive(args.out, meta, tensors)
    total = sum(len(buf) for _, buf in tensors.values())
    print(f"wrote {args.out}: {len(tensors)} tensors, {total / 1e6:.1f} MB of weights")


if __name__ == "__main__":
    sys.exit(main())
