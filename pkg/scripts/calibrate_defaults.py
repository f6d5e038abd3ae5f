"""Calibration harness for the default desk-scale experiment.

Trains every loss family over several seeds on candidate default settings and
prints the 5-seed median (accuracy, AUROC, OSCR) per family, plus the lambda
robustness spread for the class-inclusion loss.  Used to pick the shipped
defaults; not part of the test suite.
"""

import statistics
import sys
import time
from dataclasses import replace

from osrkit import data, losses, metrics, model as model_mod, trainer

FAMILIES = [
    ("none", "distance", {}),
    ("class_inclusion", "distance", {"lam": 1.0}),
    ("triplet", "distance", {"lam": 1.0}),
    ("hsc", "distance", {"lam": 1.0}),
    ("objectosphere", "softmax", {"lam": 1.0}),
    ("uniformity", "softmax", {"lam": 1.0}),
    ("energy", "softmax", {"lam": 1.0}),
]


def run_once(spec, family, head, loss_kw, seed, epochs, latent, hidden, lr):
    bundle = data.generate(replace(spec, seed=seed))
    net = model_mod.build_model(
        [spec.input_dim] + hidden + [latent], head, bundle.class_count, seed
    )
    loss_cfg = losses.LossConfig(family=family, **loss_kw)
    optim = trainer.OptimConfig(
        epochs=epochs,
        batch_size_known=64,
        batch_size_background=64,
        lr_init=lr,
        warmup_epochs=5,
        momentum=0.9,
        seed=seed,
    )
    trainer.train(bundle, net, loss_cfg, optim)
    samples = metrics.score_bundle(net, bundle)
    return (
        metrics.accuracy(samples),
        metrics.auroc(samples),
        metrics.oscr_ccr_at_fpr(samples, 0.1),
    )


def main():
    kuc_mode = sys.argv[1] if len(sys.argv) > 1 else "ring"
    epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 60
    latent = int(sys.argv[3]) if len(sys.argv) > 3 else 8
    lr = float(sys.argv[4]) if len(sys.argv) > 4 else 0.05
    hidden = [32, 32]
    seeds = [0, 1, 2, 3, 4]
    spec = data.SyntheticSpec(kuc_mode=kuc_mode)
    print(f"kuc_mode={kuc_mode} epochs={epochs} latent={latent} lr={lr} hidden={hidden}")

    t0 = time.time()
    results = {}
    for family, head, loss_kw in FAMILIES:
        per_seed = [
            run_once(spec, family, head, loss_kw, s, epochs, latent, hidden, lr) for s in seeds
        ]
        med = tuple(statistics.median(v[i] for v in per_seed) for i in range(3))
        results[family] = med
        print(f"{family:16s} acc={med[0]:.3f} auroc={med[1]:.3f} oscr={med[2]:.3f}")

    print("\nlambda sweep (class_inclusion):")
    for lam in (0.5, 1.0, 5.0):
        per_seed = [
            run_once(spec, "class_inclusion", "distance", {"lam": lam}, s, epochs, latent, hidden, lr)
            for s in seeds
        ]
        med = tuple(statistics.median(v[i] for v in per_seed) for i in range(3))
        print(f"lambda={lam:4} acc={med[0]:.3f} auroc={med[1]:.3f} oscr={med[2]:.3f}")

    van = results["none"]
    ci = results["class_inclusion"]
    print(f"\nAUROC gap (ci - vanilla): {ci[1] - van[1]:+.3f}  (need >= +0.10)")
    print(f"Accuracy drop (ci - vanilla): {ci[0] - van[0]:+.3f}  (need >= -0.01)")
    for fam in ("uniformity", "energy", "objectosphere", "triplet", "hsc"):
        print(f"AUROC ci - {fam}: {ci[1] - results[fam][1]:+.3f}  (need >= -0.02)")
    print(f"\ntotal time: {time.time() - t0:.1f}s")


if __name__ == "__main__":
    main()
