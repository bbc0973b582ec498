"""End-to-end tour on a handful of synthetic faces.

Generates a small dataset, trains ParsingNet and then FishFSRNet with the
ParsingNet frozen, saves a checkpoint, and scores the result against
bicubic upsampling.

    python demos/quickstart.py [out_dir] [steps]
"""

import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from fishfsr import ModelConfig
from fishfsr.checkpoint import load_checkpoint
from fishfsr.data import bicubic_resize, generate_dataset, load_dataset, write_ppm
from fishfsr.metrics import parsing_accuracy, sr_metrics
from fishfsr.tensor import Tensor
from fishfsr.train import Models, TrainConfig, train_fishfsrnet, train_parsingnet


def main():
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="fishfsr-"))
    steps = int(sys.argv[2]) if len(sys.argv) > 2 else 300

    manifest = generate_dataset(seed=1, n_samples=4, scale=4, out_dir=out / "data", hr_size=32)
    dataset = load_dataset(manifest)
    print(f"dataset: {len(dataset)} samples, HR {dataset[0].hr.shape[2:]}, LR {dataset[0].lr.shape[2:]}")

    models = Models.build(ModelConfig(scale=4, channels=16))
    print(f"parameters: {models.parsing_params.numel()} ParsingNet + {models.fish_params.numel()} FishFSRNet")

    t = time.perf_counter()
    res = train_parsingnet(TrainConfig(batch_size=4, max_steps=steps, lr=1e-3), dataset, models)
    acc = np.mean([parsing_accuracy(models.predict_parsing(s.lr), s.parsing_gt) for s in dataset])
    print(f"ParsingNet: L1 {res.trace[0]:.4f} -> {res.trace[-1]:.4f}, accuracy {acc:.4f}")

    def progress(step, loss):
        if (step + 1) % 100 == 0:
            print(f"  step {step + 1:5d}  loss {loss:.4f}  {time.perf_counter() - t:.0f}s")

    res = train_fishfsrnet(TrainConfig(batch_size=4, max_steps=steps, lr=1e-3, stage="fishfsrnet"),
                           dataset, models, on_step=progress)
    print(f"FishFSRNet: L1 {res.trace[0]:.4f} -> {res.trace[-1]:.4f}")

    path = models.save(out / "model.fckp", step=steps)
    restored = Models.from_checkpoint(load_checkpoint(path))
    print(f"checkpoint: {path} (stages trained: {sorted(restored.trained)})")

    for s in dataset:
        sr = restored.super_resolve(s.lr)
        up = Tensor(np.clip(bicubic_resize(s.lr.data, *s.hr.shape[2:]), 0, 1))
        p_sr, ssim_sr = sr_metrics(sr, s.hr)
        p_up, ssim_up = sr_metrics(up, s.hr)
        write_ppm(out / f"sr_{s.id}.ppm", sr)
        print(f"  {s.id}: model {p_sr:6.2f} dB / {ssim_sr:.4f}   bicubic {p_up:6.2f} dB / {ssim_up:.4f}")
    print(f"images written under {out}")


if __name__ == "__main__":
    main()
