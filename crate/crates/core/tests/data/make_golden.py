"""Writes the golden LTNT and WBND files with Python's struct, json and zlib."""

import json
import struct
import zlib
from pathlib import Path

HERE = Path(__file__).parent


def ltnt():
    h, w, c = 2, 3, 2
    data = [0.5 * i - 2.0 for i in range(h * w * c)]
    body = b"LTNT" + struct.pack("<HIII", 1, h, w, c) + struct.pack(f"<{len(data)}f", *data)
    (HERE / "tiny.ltnt").write_bytes(body)


def wbnd():
    blobs = []
    section = bytearray()

    def put(name, shape, values):
        while len(section) % 8:
            section.append(0)
        raw = struct.pack(f"<{len(values)}f", *values)
        blobs.append({"name": name, "shape": shape, "offset": len(section), "crc32": zlib.crc32(raw)})
        section.extend(raw)
        return name

    conv_w = [(i % 5 - 2) / 4 for i in range(2 * 1 * 3 * 3)]
    layers = [
        {
            "kind": "conv",
            "name": "conv",
            "stride": 1,
            "bn_folded": False,
            "weight": put("conv.weight", [2, 1, 3, 3], conv_w),
            "bias": put("conv.bias", [2], [0.25, -0.5]),
        },
        {
            "kind": "batch_norm",
            "name": "bn",
            "eps": 1e-5,
            "gamma": put("bn.gamma", [2], [1.0, 0.5]),
            "beta": put("bn.beta", [2], [0.0, 0.125]),
            "mean": put("bn.mean", [2], [0.25, -0.25]),
            "var": put("bn.var", [2], [1.0, 4.0]),
        },
        {"kind": "polyact", "name": "act", "a": 0.125, "b": 1.0, "c": 0.0},
        {"kind": "global_avg_pool", "name": "pool"},
        {
            "kind": "linear",
            "name": "head",
            "weight": put("head.weight", [3, 2], [1.0, -1.0, 0.5, 0.5, 0.0, 2.0]),
            "bias": put("head.bias", [3], [0.0, 0.1, -0.1]),
        },
    ]
    manifest = {
        "format_version": 1,
        "name": "tiny",
        "input": {"height": 4, "width": 4, "channels": 1},
        "num_classes": 3,
        "layers": layers,
        "blobs": blobs,
    }
    text = json.dumps(manifest, indent=2).encode()
    out = bytearray(b"WBND" + struct.pack("<HI", 1, len(text)) + text)
    while len(out) % 8:
        out.append(0)
    out.extend(section)
    out.extend(struct.pack("<I", zlib.crc32(bytes(section))))
    (HERE / "tiny.wbnd").write_bytes(bytes(out))


if __name__ == "__main__":
    ltnt()
    wbnd()
