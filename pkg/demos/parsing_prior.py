"""How much does the SR output lean on the parsing map?

Trains a small model, then super-resolves each sample with the ParsingNet
estimate, the ground-truth mask, an all-zero map, and increasingly rotated
estimates, printing the train-set PSNR for each.

    python demos/parsing_prior.py [steps]
"""

import sys

import numpy as np

from fishfsr import ModelConfig
from fishfsr.data import make_sample, rotate_map, sample_seeds
from fishfsr.metrics import sr_metrics
from fishfsr.tensor import Tensor
from fishfsr.train import Models, TrainConfig, train_fishfsrnet, train_parsingnet


def mean_psnr(models, dataset, maps):
    return np.mean([sr_metrics(models.super_resolve(s.lr, m), s.hr)[0] for s, m in zip(dataset, maps)])


def main():
    steps = int(sys.argv[1]) if len(sys.argv) > 1 else 600
    dataset = [make_sample(f"{i:05d}", s, 4, hr_size=32) for i, s in enumerate(sample_seeds(1, 4))]
    models = Models.build(ModelConfig(scale=4, channels=16))
    train_parsingnet(TrainConfig(batch_size=4, max_steps=500, lr=1e-3), dataset, models)
    train_fishfsrnet(TrainConfig(batch_size=4, max_steps=steps, lr=1e-3, stage="fishfsrnet"), dataset, models)

    estimate = [models.predict_parsing(s.lr) for s in dataset]
    variants = {
        "estimated map": estimate,
        "ground-truth map": [s.parsing_gt for s in dataset],
        "zero map": [Tensor(np.zeros_like(m.data)) for m in estimate],
    }
    for deg in (15, 30, 45, 60, 90):
        variants[f"estimate rotated {deg} deg"] = [rotate_map(m, deg) for m in estimate]

    base = mean_psnr(models, dataset, estimate)
    for name, maps in variants.items():
        value = mean_psnr(models, dataset, maps)
        print(f"{name:26s} {value:6.2f} dB  ({value - base:+.2f})")


if __name__ == "__main__":
    main()
