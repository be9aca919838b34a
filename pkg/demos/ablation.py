"""Which parts matter? Full model vs. no stage 2 vs. a plain autoencoder.

For each benchmark seed this trains three variants and reports micro-AUC:

* full: scene and object contrast, scene classification, then stage 2 with
  mild and wide-range motion augmentation (``ma-+``);
* no stage 2: the same stage-1 model scored by reconstruction alone;
* plain AE: reconstruction loss only (no contrast, no scene head).

Run:  python demos/ablation.py [--seeds 5] [--mode ma-+]
"""
import argparse
import time

import numpy as np

from hscvad.pipeline import evaluate, fit, refine
from hscvad.skeleton import AugmentConfig
from hscvad.synthetic import ScenarioConfig, generate_mixture_dataset
from hscvad.training import TrainConfig

PLAIN = dict(scene_contrast=False, object_contrast=False, linear_classification=False)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--mode", choices=("ma-", "ma-+"), default="ma-+")
    args = ap.parse_args()

    rows = []
    print(f"{'seed':>4}  {'full':>7}  {'no stage 2':>10}  {'plain AE':>8}  {'seconds':>7}")
    for seed in range(args.seeds):
        t0 = time.perf_counter()
        train, test, _ = generate_mixture_dataset(ScenarioConfig(seed=seed))
        state = fit(train, TrainConfig(seed=seed))
        no_ma = evaluate(state, test).auc
        refine(state, train, args.mode, AugmentConfig(seed=seed))
        full = evaluate(state, test).auc
        plain = evaluate(fit(train, TrainConfig(seed=seed, **PLAIN)), test).auc
        rows.append((full, no_ma, plain))
        print(f"{seed:>4}  {full:7.4f}  {no_ma:10.4f}  {plain:8.4f}  {time.perf_counter() - t0:7.1f}")
    med = np.median(np.array(rows), axis=0)
    print(f"{'med':>4}  {med[0]:7.4f}  {med[1]:10.4f}  {med[2]:8.4f}")


if __name__ == "__main__":
    main()
