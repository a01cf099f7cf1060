"""Writes tiny_head.manifest / tiny_head.bin (d=2, |V|=3) and prints reference
probabilities computed with plain Python floats."""
import json
import math
import struct
from pathlib import Path

HERE = Path(__file__).parent

W = [[0.5, -1.25], [0.75, 0.25]]  # [out, in]
B = [0.125, -0.5]
GAMMA = [1.5, 0.75]
BETA = [0.25, -0.125]
V = [[1.0, -0.5], [-0.75, 1.25], [0.25, 0.5]]
B_OUT = [0.0625, -0.125, 0.25]
EPS = 1e-12

tensors = [
    ("transform.weight", [2, 2], [x for row in W for x in row]),
    ("transform.bias", [2], B),
    ("layernorm.gamma", [2], GAMMA),
    ("layernorm.beta", [2], BETA),
    ("decoder.weight", [3, 2], [x for row in V for x in row]),
    ("decoder.bias", [3], B_OUT),
]

payload = b""
entries = []
for name, shape, values in tensors:
    data = struct.pack("<%df" % len(values), *values)
    entries.append({"name": name, "dtype": "float32", "shape": shape,
                    "offset": len(payload), "bytes": len(data)})
    payload += data

manifest = {
    "format": "lexenrich.bundle.v1",
    "byte_order": "little",
    "payload": "tiny_head.bin",
    "payload_bytes": len(payload),
    "tensors": entries,
    "metadata": {"activation": "gelu", "eps": EPS},
}
(HERE / "tiny_head.bin").write_bytes(payload)
(HERE / "tiny_head.manifest").write_text(json.dumps(manifest, indent=2) + "\n")


def probs(h):
    pre = [W[i][0] * h[0] + W[i][1] * h[1] + B[i] for i in range(2)]
    act = [0.5 * x * (1.0 + math.erf(x / math.sqrt(2.0))) for x in pre]
    mean = sum(act) / 2
    var = sum((a - mean) ** 2 for a in act) / 2
    y = [GAMMA[i] * (act[i] - mean) / math.sqrt(var + EPS) + BETA[i] for i in range(2)]
    logits = [V[t][0] * y[0] + V[t][1] * y[1] + B_OUT[t] for t in range(3)]
    m = max(logits)
    z = sum(math.exp(l - m) for l in logits)
    return [math.exp(l - m) / z for l in logits]


if __name__ == "__main__":
    for h in ([0.5, -1.0], [-0.25, 0.75]):
        print(h, ["%.17g" % p for p in probs(h)])
