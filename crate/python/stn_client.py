"""Toy two-arm schedule-tuning client for `tvbo tune`.

A simulated training run picks one of two update rules each epoch. The
tuner decides whether an evaluation pass is worth paying for; rewards are
accuracy gains obtained by differencing evaluations.

    cargo build --release
    python python/stn_client.py --epochs 60 --differencing per-query

per-query: gain since the last evaluated epoch, divided by epochs elapsed.
per-epoch: evaluate the previous epoch too, so the gain covers one epoch.
The second variant costs an extra evaluation per feedback round.
"""

import argparse
import json
import pathlib
import random
import subprocess

ROOT = pathlib.Path(__file__).resolve().parent.parent


class Tuner:
    def __init__(self, binary, init):
        self.proc = subprocess.Popen([binary, "tune"], stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True)
        self.session = init["session"]
        self.seq = init["seq"]
        self.call(init)

    def call(self, msg):
        self.proc.stdin.write(json.dumps(msg) + "\n")
        self.proc.stdin.flush()
        reply = json.loads(self.proc.stdout.readline())
        if reply["type"] == "error":
            raise RuntimeError(f"{reply['code']}: {reply['message']}")
        return reply

    def send(self, kind, **fields):
        self.seq += 1
        return self.call({"type": kind, "session": self.session, "seq": self.seq, **fields})

    def close(self):
        out = self.send("close")
        self.proc.stdin.close()
        self.proc.wait()
        return out


def epoch_gain(arm, epoch, rng):
    # arm 1 is better early, arm 0 catches up later
    early = 0.010 if arm == 1 else 0.004
    late = 0.002 if arm == 1 else 0.005
    base = early if epoch < 25 else late
    return base + rng.gauss(0, 0.001)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--binary", default=str(ROOT / "target" / "release" / "tvbo"))
    ap.add_argument("--epochs", type=int, default=60)
    ap.add_argument("--differencing", choices=["per-query", "per-epoch"], default="per-query")
    ap.add_argument("--scale", type=float, default=100.0, help="reward = scale * accuracy gain")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    init = json.loads((ROOT / "configs" / "tuner_stn_init.json").read_text())
    tuner = Tuner(args.binary, init)
    rng = random.Random(args.seed)

    accuracy = 0.5
    history = [accuracy]  # accuracy after each epoch, index 0 = before training
    last_eval = (0, accuracy)
    evaluations = 0
    for epoch in range(1, args.epochs + 1):
        s = tuner.send("suggest")
        arm = s["index"]
        accuracy += epoch_gain(arm, epoch, rng)
        history.append(accuracy)
        if not s["wants_feedback"]:
            continue
        if args.differencing == "per-query":
            prev_epoch, prev_acc = last_eval
            gain = (accuracy - prev_acc) / (epoch - prev_epoch)
            evaluations += 1
        else:
            gain = accuracy - history[epoch - 1]
            evaluations += 2
        last_eval = (epoch, accuracy)
        tuner.send("observe", round=s["round"], reward=args.scale * gain)
        print(f"epoch {epoch:3d} arm {arm} gain {gain:+.4f} (min superiority {s['min_superiority']:.3f})")

    snap = tuner.send("snapshot")
    done = tuner.close()
    print(f"final accuracy {accuracy:.3f}; feedback rounds {done['cost']}/{done['rounds']}; evaluation passes {evaluations}")
    for c in snap["candidates"]:
        print(f"  arm {c['index']}: mean {c['mean']:+.3f} sd {c['stddev']:.3f}")


if __name__ == "__main__":
    main()
