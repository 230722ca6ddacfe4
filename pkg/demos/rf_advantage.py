"""Train the grey U-Net, the early-fusion U-Net and W-Net on the same phantoms.

The fascia classes share echogenicity, so only the RF carrier tells them
apart. The defaults mirror the acceptance experiment (about half an hour on
one CPU core); pass smaller --epochs/--count for a quick look.

    python demos/rf_advantage.py --work /tmp/rf_adv --epochs 30 --seeds 0,1,2
"""
import argparse
from pathlib import Path

import numpy as np

from wnet.network import ModelConfig
from wnet.phantom import PhantomConfig, generate_dataset
from wnet.training import TrainConfig, multi_seed_report, prepare_data, train
from wnet import metrics


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--work", default="rf_advantage")
    ap.add_argument("--count", type=int, default=80)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--channels", type=int, default=16)
    ap.add_argument("--seeds", default="0,1,2")
    args = ap.parse_args()
    seeds = [int(s) for s in args.seeds.split(",")]
    work = Path(args.work)
    data = work / "data"
    generate_dataset(PhantomConfig(seed=123, split=(0.75, 0.0, 0.25)), args.count, data)

    summary = []
    for m in ("unet-grey", "unet-grey-rf", "wnet"):
        model = ModelConfig(model=m, base_channels=args.channels, rf_base_channels=max(1, args.channels // 4))
        cfg = TrainConfig(data=str(data), model=model, epochs=args.epochs)
        if len(seeds) > 1:
            res = multi_seed_report(cfg, seeds, work / m)
            reps = [p["report"] for p in res["seeds"] if p["report"]]
            print(res["table"], "\n")
        else:
            prepared = prepare_data(cfg)
            rec = train(cfg, prepared)
            reps = [metrics.evaluate_dataset(rec.model, prepared.test)]
            print(metrics.format_report(reps[0], m), "\n")
        fascia = np.mean([(r["iou"][2] + r["iou"][4]) / 2 for r in reps])
        summary.append((m, np.mean([r["miou"] for r in reps]), fascia))

    print("model          mIoU    fascia IoU")
    for m, miou, fascia in summary:
        print(f"{m:<13}  {miou:.3f}   {fascia:.3f}")


if __name__ == "__main__":
    main()
