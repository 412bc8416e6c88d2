"""First contact: train two small classifiers and fool them.

Generates the synthetic 10-class image task, trains one MLP and one
CNN, then crafts adversarial examples against the CNN with the
single-step and the iterated sign attack.  Finishes with a taste of
transferability: images crafted against the MLP, scored on the CNN.

Run from the repository root (takes a few seconds):

    python demos/quickstart.py
"""

import numpy as np

from advkit import (
    ZOO_ENTRIES,
    AttackConfig,
    AttackGoal,
    accuracy,
    eligible_indices,
    fgsm,
    igsm,
    synthetic_dataset,
    train_zoo,
)

EPSILON = 0.1
N_SHOW = 8


def main() -> None:
    train_ds, test_ds = synthetic_dataset(23)
    print(f"dataset: {len(train_ds)} train / {len(test_ds)} test images, "
          f"shape {test_ds.image_shape}, {test_ds.num_classes} classes")

    entries = [e for e in ZOO_ENTRIES if e.name in ("mlp_s", "cnn_s")]
    zoo = train_zoo(train_ds, entries=entries)
    for name, model in zoo.items():
        print(f"trained {name}: clean test accuracy {accuracy(model, test_ds):.3f}")
    mlp, cnn = zoo["mlp_s"], zoo["cnn_s"]

    # work on images both models get right, so every flip is the attack's doing
    pool = eligible_indices([mlp, cnn], test_ds)
    picks = pool[:N_SHOW]
    rng = np.random.default_rng(0)

    print(f"\nuntargeted single-step attack on cnn_s (epsilon={EPSILON})")
    print("  image  true  adv_pred  linf")
    flips = 0
    for i in picks:
        x, y = test_ds.images[i], int(test_ds.labels[i])
        x_adv = fgsm(cnn, x, AttackGoal.untargeted(y), EPSILON)
        pred = cnn.predict(x_adv)
        flips += pred != y
        print(f"  {i:5d}  {y:4d}  {pred:8d}  {np.max(np.abs(x_adv - x)):.3f}")
    print(f"  flipped {flips}/{len(picks)}")

    print(f"\ntargeted iterated attack on cnn_s (epsilon={EPSILON}, "
          f"alpha=0.01, 20 steps)")
    print("  image  true  target  adv_pred  hit")
    config = AttackConfig(EPSILON, 0.01, 20)
    hits = 0
    for i in picks:
        x, y = test_ds.images[i], int(test_ds.labels[i])
        t = int(rng.integers(0, test_ds.num_classes - 1))
        t += t >= y
        trace = igsm(cnn, x, AttackGoal.targeted(t), config)
        pred = cnn.predict(trace.x_adv)
        hits += pred == t
        print(f"  {i:5d}  {y:4d}  {t:6d}  {pred:8d}  {'yes' if pred == t else 'no'}")
    print(f"  reached the target on {hits}/{len(picks)}")

    print("\ntransfer teaser: untargeted images crafted on mlp_s, scored on cnn_s")
    crafted = 0
    carried = 0
    for i in pool[:50]:
        x, y = test_ds.images[i], int(test_ds.labels[i])
        x_adv = fgsm(mlp, x, AttackGoal.untargeted(y), EPSILON)
        crafted += mlp.predict(x_adv) != y
        carried += cnn.predict(x_adv) != y
    print(f"  fools the source on {crafted}/50, carries over to cnn_s on {carried}/50")


if __name__ == "__main__":
    main()
