"""Writes yolov5-micro.json: the YOLOv5n layer sequence with widths divided by 8."""
import json
import sys

WIDTH_DIV = 8
base = [64, 128, 256, 512, 1024]
gw = 0.25  # YOLOv5n width multiple
w = [max(2, int(c * gw) // WIDTH_DIV) for c in base]  # [2, 4, 8, 16, 32]


def conv(name, cin, cout, k, s, p=None):
    p = k // 2 if p is None else p
    return {"kind": "ConvBNSiLU", "name": name, "in": cin, "out": cout,
            "kernel": [k, k], "stride": [s, s], "pad": [p, p]}


def c3(name, cin, cout, n, shortcut=True):
    return {"kind": "C3", "name": name, "in": cin, "out": cout, "n": n, "shortcut": shortcut}


layers = [
    conv("l0", 3, w[0], 6, 2, 2),
    conv("l1", w[0], w[1], 3, 2),
    c3("l2", w[1], w[1], 1),
    conv("l3", w[1], w[2], 3, 2),
    c3("l4", w[2], w[2], 2),
    conv("l5", w[2], w[3], 3, 2),
    c3("l6", w[3], w[3], 3),
    conv("l7", w[3], w[4], 3, 2),
    c3("l8", w[4], w[4], 1),
    {"kind": "SPPF", "name": "l9", "in": w[4], "out": w[4], "k": 5},
    conv("l10", w[4], w[3], 1, 1),
    {"kind": "Upsample"},
    {"kind": "Concat", "from": [-1, 6]},
    c3("l13", 2 * w[3], w[3], 1, False),
    conv("l14", w[3], w[2], 1, 1),
    {"kind": "Upsample"},
    {"kind": "Concat", "from": [-1, 4]},
    c3("l17", 2 * w[2], w[2], 1, False),
    conv("l18", w[2], w[2], 3, 2),
    {"kind": "Concat", "from": [-1, 14]},
    c3("l20", 2 * w[2], w[3], 1, False),
    conv("l21", w[3], w[3], 3, 2),
    {"kind": "Concat", "from": [-1, 10]},
    c3("l23", 2 * w[3], w[4], 1, False),
    {"kind": "Detect", "name": "detect", "from": [17, 20, 23], "anchors": 3, "outputs": 85},
]

manifest = {"name": "yolov5-micro", "input": [3, 64, 64], "init": "fan_in",
            "input_range": [0.0, 1.0], "layers": layers}
out = sys.argv[1] if len(sys.argv) > 1 else "yolov5-micro.json"
with open(out, "w") as f:
    head = {k: v for k, v in manifest.items() if k != "layers"}
    f.write(json.dumps(head)[:-1] + ', "layers": [\n')
    f.write(",\n".join("  " + json.dumps(l) for l in layers))
    f.write("\n]}\n")
