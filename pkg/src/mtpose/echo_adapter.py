"""Reference external adapter: answers every request with the suite's ground truth.

Run as ``python -m mtpose.echo_adapter``. Ground truth is looked up in the
``suite.json`` sitting next to each requested image, so the adapter needs no
arguments and behaves exactly like the in-process oracle.
"""

import json
import sys
from pathlib import Path

MODEL_NAME = "oracle"


def _bbox(points):
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    return [min(xs), min(ys), max(xs), max(ys)]


def main(stdin=sys.stdin, stdout=sys.stdout):
    index = {}

    def lookup(image):
        path = Path(image)
        folder = path.parent
        if folder not in index:
            records = json.loads((folder / "suite.json").read_text(encoding="utf-8"))
            index[folder] = {r["image"]: r["keypoints"] for r in records}
        return index[folder].get(path.name)

    for line in stdin:
        line = line.strip()
        if not line:
            continue
        msg = json.loads(line)
        if msg.get("type") == "hello":
            reply = {"type": "hello", "version": 1, "model": MODEL_NAME}
        elif msg.get("type") == "predict":
            kps = lookup(msg["image"])
            if kps is None:
                reply = {"type": "result", "id": msg["id"], "detected": False}
            else:
                reply = {"type": "result", "id": msg["id"], "detected": True,
                         "bbox": _bbox(kps), "keypoints": kps, "confidence": 1.0}
        else:
            print(f"unknown message type {msg.get('type')!r}", file=sys.stderr)
            continue
        stdout.write(json.dumps(reply) + "\n")
        stdout.flush()


if __name__ == "__main__":
    main()
