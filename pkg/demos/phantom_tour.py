"""Generate a few phantoms and show why fascia is hard in grey but easy in RF.

    python demos/phantom_tour.py --out /tmp/phantom_tour
"""
import argparse
from pathlib import Path

import numpy as np

from wnet import render
from wnet.phantom import PhantomConfig, generate_samples


def class_centroid_mhz(samples, c, fs_mhz, nfft=512):
    """Spectral centroid of the RF inside class ``c``, power averaged over every column."""
    power = np.zeros(nfft // 2 + 1)
    for s in samples:
        masked = np.where(s.label == c, s.rf, 0.0)
        power += (np.abs(np.fft.rfft(masked, n=nfft, axis=0)) ** 2).sum(axis=1)
    f = np.fft.rfftfreq(nfft) * fs_mhz
    return float((f * power).sum() / power.sum())


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="phantom_tour")
    ap.add_argument("--count", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    cfg = PhantomConfig(seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    samples = generate_samples(cfg, args.count)

    # the two fascia classes come out equally bright but sit on different carriers
    print("class            grey mean   carrier (MHz)   RF centroid (MHz)")
    names = ["skin", "fat", "fat fascia", "muscle", "muscle fascia"]
    for c, name in enumerate(names, start=1):
        grey = np.mean([s.grey[s.label == c].mean() for s in samples])
        centroid = class_centroid_mhz(samples, c, cfg.fs_mhz)
        print(f"{name:<15}  {grey:9.3f}   {cfg.tissue(c).carrier_mhz:13.1f}   {centroid:17.2f}")

    for s in samples:
        render.write_ppm(render.render_overlay(s.grey, s.label), out / f"{s.id}_overlay.ppm")
        render.write_ppm(render.rf_false_color(s.rf), out / f"{s.id}_rf.ppm")
        render.write_ppm(render.grey_rgb(s.grey), out / f"{s.id}_grey.ppm")
    print(f"images in {out}")


if __name__ == "__main__":
    main()
