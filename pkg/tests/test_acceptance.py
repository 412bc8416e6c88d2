"""Acceptance gate: nine end-to-end checks at stated tolerances.

Each test prints one PASS/FAIL line even under pytest's capture so a
full run reads as a scoreboard.  These are the binding checks; the rest
of the suite exists to localize whatever breaks here.
"""

import hashlib
import json

import numpy as np

from advkit import cli
from advkit.attacks import (
    AttackConfig,
    AttackGoal,
    GatingPolicy,
    cw_l2,
    cw_margin,
    fgsm,
    igsm,
    iterative_ensemble_attack,
    loss_ensemble_loss,
    prob_ensemble_loss,
)
from advkit.evaluation import EvalSpec, eligible_indices, iteration_sweep, run_eval
from advkit.layers import (
    conv2d_backward,
    conv2d_forward,
    dense_backward,
    dense_forward,
    grad_check,
    relu_backward,
    relu_forward,
    softmax_cross_entropy,
)
from advkit.models import ModelMeta, TrainedModel, build_architecture, init_params

GRAD_TOL = 1e-6
JENSEN_TOL = 1e-12
LINF_TOL = 1e-12
CW_ORACLE_TOL = 0.05
ARCHITECTURES = ("mlp_s", "mlp_l", "mlp_h", "cnn_s", "cnn_l")
SWEEP_GRID = (1, 2, 5, 10, 20, 40, 80)


def _verdict(capsys, number: int, label: str, ok: bool, detail: str) -> None:
    with capsys.disabled():
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'} - {label} ({detail})")
    assert ok, f"criterion {number} [{label}]: {detail}"


def _raw_model(arch: str, seed: int, shape=(1, 6, 6)) -> TrainedModel:
    spec = build_architecture(arch, shape, 10)
    meta = ModelMeta(f"{arch}-{seed}", "standard", 0.0, seed, 0, 0.0, "probe")
    return TrainedModel(spec, init_params(spec, seed), meta)


def _random_goal(rng, y: int, num_classes: int, targeted: bool) -> AttackGoal:
    if not targeted:
        return AttackGoal.untargeted(y)
    t = int(rng.integers(0, num_classes - 1))
    t += t >= y
    return AttackGoal.targeted(t)


def _min_relu_margin(model: TrainedModel, x) -> float:
    """Smallest |pre-activation| feeding any relu for input ``x``."""
    h = x
    idx = 0
    margin = np.inf
    for layer in model.spec.layers:
        if layer.kind == "dense":
            h = dense_forward(h, model.params[idx], model.params[idx + 1])
            idx += 2
        elif layer.kind == "conv2d":
            h = conv2d_forward(h, model.params[idx], model.params[idx + 1])
            idx += 2
        elif layer.kind == "relu":
            margin = min(margin, float(np.min(np.abs(h))))
            h = relu_forward(h)
        else:
            h = h.reshape(-1)
    return margin


def _smooth_probe(model: TrainedModel, rng, margin: float = 1e-3):
    """Random input whose relu pre-activations all clear ``margin``.

    Central differences are only a valid oracle where the function is
    smooth across the whole stencil; a pre-activation within h of zero
    makes the secant measure the kink, not the gradient.  Points that
    close to the fold are resampled (they are a measure-zero failure of
    the oracle, not of the backward pass).
    """
    for _ in range(100):
        x = rng.uniform(0.0, 1.0, size=(1, 6, 6))
        if _min_relu_margin(model, x) > margin:
            return x
    raise AssertionError("could not find a probe away from relu folds")


# ---------------------------------------------------------------------------
# 1. Gradient fidelity
# ---------------------------------------------------------------------------

def test_criterion_1_gradient_fidelity(capsys):
    worst = 0.0

    for seed in range(50):
        rng = np.random.default_rng(seed)

        x = rng.normal(size=7)
        weights = rng.normal(size=(5, 7))
        bias = rng.normal(size=5)
        probe = rng.normal(size=5)
        grads = dense_backward(x, weights, probe)
        worst = max(
            worst,
            grad_check(lambda v: float(dense_forward(v, weights, bias) @ probe),
                       x, grads.input_grad),
            grad_check(lambda w: float(dense_forward(x, w, bias) @ probe),
                       weights, grads.param_grads[0]),
            grad_check(lambda b: float(dense_forward(x, weights, b) @ probe),
                       bias, grads.param_grads[1]),
        )

        xc = rng.normal(size=(2, 6, 6))
        kernels = rng.normal(size=(3, 2, 3, 3))
        cbias = rng.normal(size=3)
        up = rng.normal(size=(3, 4, 4))
        cgrads = conv2d_backward(xc, kernels, up)
        worst = max(
            worst,
            grad_check(lambda v: float(np.sum(conv2d_forward(v, kernels, cbias) * up)),
                       xc, cgrads.input_grad),
            grad_check(lambda k: float(np.sum(conv2d_forward(xc, k, cbias) * up)),
                       kernels, cgrads.param_grads[0]),
            grad_check(lambda b: float(np.sum(conv2d_forward(xc, kernels, b) * up)),
                       cbias, cgrads.param_grads[1]),
        )

        # keep inputs away from relu's kink, where finite differences lie
        xr = rng.normal(size=20)
        xr = np.where(np.abs(xr) < 1e-3, 0.25, xr)
        ur = rng.normal(size=20)
        worst = max(
            worst,
            grad_check(lambda v: float(relu_forward(v) @ ur), xr,
                       relu_backward(xr, ur)),
        )

        logits = rng.normal(size=10)
        target = np.zeros(10)
        target[int(rng.integers(0, 10))] = 1.0
        _, logit_grad, _ = softmax_cross_entropy(logits, target)
        worst = max(
            worst,
            grad_check(lambda lv: softmax_cross_entropy(lv, target)[0],
                       logits, logit_grad),
        )

    for arch in ARCHITECTURES:
        for seed in range(50):
            model = _raw_model(arch, seed)
            rng = np.random.default_rng(10_000 + seed)
            x = _smooth_probe(model, rng)
            k = int(rng.integers(0, 10))
            _, grad, _ = model.loss_grad_logits(x, k)
            worst = max(
                worst,
                grad_check(lambda v: model.loss_grad_logits(v, k)[0], x, grad),
            )

    _verdict(
        capsys, 1, "gradient fidelity",
        worst < GRAD_TOL,
        f"max rel err {worst:.2e} < {GRAD_TOL:.0e}, h=1e-5, "
        f"50 seeds/layer + 50 seeds x {len(ARCHITECTURES)} architectures",
    )


# ---------------------------------------------------------------------------
# 2. Probability ensemble bounded by loss ensemble
# ---------------------------------------------------------------------------

def test_criterion_2_jensen_bound(capsys):
    rng = np.random.default_rng(99)
    cache = {}

    def model_for(arch, seed):
        if (arch, seed) not in cache:
            cache[(arch, seed)] = _raw_model(arch, seed)
        return cache[(arch, seed)]

    max_gap = -np.inf
    for _ in range(1000):
        m_count = int(rng.integers(1, 5))
        models = [
            model_for(("mlp_s", "mlp_l")[int(rng.integers(0, 2))],
                      int(rng.integers(0, 40)))
            for _ in range(m_count)
        ]
        x = rng.uniform(0.0, 1.0, size=(1, 6, 6))
        k = int(rng.integers(0, 10))
        j_prob = prob_ensemble_loss(models, x, k)
        j_loss, _, _ = loss_ensemble_loss(models, x, k)
        max_gap = max(max_gap, j_prob - j_loss)

    max_eq_gap = 0.0
    for trial in range(200):
        model = model_for("mlp_s", trial % 40)
        members = [model] * int(rng.integers(2, 6))
        x = rng.uniform(0.0, 1.0, size=(1, 6, 6))
        k = int(rng.integers(0, 10))
        j_prob = prob_ensemble_loss(members, x, k)
        j_loss, _, _ = loss_ensemble_loss(members, x, k)
        max_eq_gap = max(max_eq_gap, abs(j_prob - j_loss))

    _verdict(
        capsys, 2, "probability ensemble bounded by loss ensemble",
        max_gap <= JENSEN_TOL and max_eq_gap <= JENSEN_TOL,
        f"max(J_prob - J_loss) {max_gap:.2e} over 1000 triples; "
        f"identical-member gap {max_eq_gap:.2e}",
    )


# ---------------------------------------------------------------------------
# 3. Reduction laws
# ---------------------------------------------------------------------------

def test_criterion_3_reduction_laws(capsys, zoo, data):
    model = zoo["mlp_s"]
    _, test_ds = data
    rng = np.random.default_rng(3)
    single_cfg = AttackConfig(0.1, 0.1, 1)
    multi_cfg = AttackConfig(0.1, 0.01, 10)
    mismatches = 0
    n_images = 100
    for i in range(n_images):
        x, y = test_ds.images[i], int(test_ds.labels[i])
        goal = _random_goal(rng, y, test_ds.num_classes, targeted=i % 2 == 0)
        one_step = igsm(model, x, goal, single_cfg).x_adv
        if not np.array_equal(one_step, fgsm(model, x, goal, 0.1)):
            mismatches += 1
        solo = iterative_ensemble_attack([model], x, goal, multi_cfg).x_adv
        if not np.array_equal(solo, igsm(model, x, goal, multi_cfg).x_adv):
            mismatches += 1
    _verdict(
        capsys, 3, "reduction laws",
        mismatches == 0,
        f"igsm(N=1,alpha=eps)=fgsm and ensemble(M=1)=igsm bit-equal on "
        f"{n_images} images, {mismatches} mismatches",
    )


# ---------------------------------------------------------------------------
# 4. Budget and domain invariants
# ---------------------------------------------------------------------------

def test_criterion_4_linf_and_domain(capsys, zoo, data, small_model, small_data,
                                     linear_2d):
    _, test_ds = data
    epsilon = 0.1
    members = [zoo["mlp_s"], zoo["mlp_l"], zoo["adv_mlp"]]
    gatings = (
        GatingPolicy.always_on(),
        GatingPolicy.loss_threshold(1.0),
        GatingPolicy.preassigned((3, 6, 9)),
    )
    rng = np.random.default_rng(4)
    violations = 0
    runs = 0

    def check(x_adv, x):
        nonlocal violations, runs
        runs += 1
        if float(np.max(np.abs(x_adv - x))) > epsilon + LINF_TOL:
            violations += 1
        if float(x_adv.min()) < 0.0 or float(x_adv.max()) > 1.0:
            violations += 1

    for i in range(60):
        x, y = test_ds.images[i], int(test_ds.labels[i])
        goal = _random_goal(rng, y, test_ds.num_classes, targeted=i % 2 == 0)
        check(fgsm(zoo["cnn_s"], x, goal, epsilon), x)
        check(igsm(zoo["cnn_s"], x, goal, AttackConfig(epsilon, 0.01, 10)).x_adv, x)
        for gating in gatings:
            trace = iterative_ensemble_attack(
                members, x, goal, AttackConfig(epsilon, 0.01, 10), gating
            )
            check(trace.x_adv, x)

    cw_runs = 0
    cw_violations = 0
    sm_test = small_data[1]
    lin_model, lin_test = linear_2d
    jobs = [(small_model, sm_test.images[i], int(sm_test.labels[i]), 10)
            for i in range(12)]
    jobs += [(lin_model, lin_test.images[i], int(lin_test.labels[i]), 2)
             for i in range(10)]
    for model, x, y, num_classes in jobs:
        targeted = cw_runs % 2 == 0 and num_classes > 2
        goal = (AttackGoal.targeted((y + 1) % num_classes) if targeted
                else AttackGoal.untargeted(y))
        res = cw_l2(model, x, goal)
        cw_runs += 1
        if float(res.x_adv.min()) < 0.0 or float(res.x_adv.max()) > 1.0:
            cw_violations += 1
        if res.succeeded:
            margin = cw_margin(
                model.forward_logits(res.x_adv), goal.class_index, 0.0,
                targeted=goal.is_targeted,
            )
            if margin > 0.0:
                cw_violations += 1

    _verdict(
        capsys, 4, "l-inf ball and pixel-domain invariants",
        violations == 0 and cw_violations == 0,
        f"{violations} violations over {runs} sign-attack runs; "
        f"{cw_violations} over {cw_runs} cw_l2 runs (bounds exact, margin <= 0)",
    )


# ---------------------------------------------------------------------------
# 5. Iterated attack strictly beats the single step
# ---------------------------------------------------------------------------

def test_criterion_5_igsm_beats_fgsm(capsys, zoo, data):
    _, test_ds = data
    base = dict(
        sources=(("cnn_s",),),
        victims=("cnn_s",),
        goal_mode="targeted",
        target_rule="random",
        target_seed=42,
        n_images=200,
        image_seed=2,
    )
    fgsm_run = run_eval(
        zoo, test_ds,
        EvalSpec(config=AttackConfig(0.1, 0.01, 1), attack="fgsm", **base),
    )
    igsm_run = run_eval(
        zoo, test_ds,
        EvalSpec(config=AttackConfig(0.1, 0.01, 20), attack="igsm", **base),
    )
    n_fgsm = fgsm_run.cell("cnn_s", "cnn_s").n_success
    n_igsm = igsm_run.cell("cnn_s", "cnn_s").n_success
    n = fgsm_run.cell("cnn_s", "cnn_s").n_images
    _verdict(
        capsys, 5, "igsm strictly beats fgsm white-box on cnn_s",
        n_igsm > n_fgsm,
        f"targeted success {n_igsm}/{n} vs {n_fgsm}/{n} "
        f"(eps=0.1, alpha=0.01, N=20 vs single step)",
    )


# ---------------------------------------------------------------------------
# 6. Minimum-l2 attack against the analytic oracle
# ---------------------------------------------------------------------------

def test_criterion_6_cw_matches_linear_oracle(capsys, linear_2d):
    model, test_ds = linear_2d
    weights, bias = model.params[0], model.params[1]
    w = weights[1] - weights[0]
    b = float(bias[1] - bias[0])
    w_norm = float(np.linalg.norm(w))

    checked = 0
    failures = 0
    worst = 0.0
    for i in range(len(test_ds)):
        if checked == 50:
            break
        x, y = test_ds.images[i], int(test_ds.labels[i])
        if model.predict(x) != y:
            continue
        checked += 1
        d_true = abs(float(w @ x.ravel()) + b) / w_norm
        res = cw_l2(model, x, AttackGoal.untargeted(y))
        if not res.succeeded:
            failures += 1
            continue
        rel = abs(res.delta_l2 - d_true) / d_true
        worst = max(worst, rel)
        if rel > CW_ORACLE_TOL:
            failures += 1
    _verdict(
        capsys, 6, "cw_l2 matches the distance-to-hyperplane oracle",
        checked == 50 and failures == 0,
        f"max rel err {worst:.4f} <= {CW_ORACLE_TOL} on {checked} points, "
        f"{failures} failures (kappa=0)",
    )


# ---------------------------------------------------------------------------
# 7. Hardened model needs a larger iteration budget
# ---------------------------------------------------------------------------

def test_criterion_7_adv_model_needs_more_iterations(capsys, zoo, data):
    _, test_ds = data
    spec = EvalSpec(
        config=AttackConfig(0.1, 0.01, max(SWEEP_GRID)),
        sources=(("cnn_s", "adv_cnn"),),
        victims=("cnn_s", "adv_cnn"),
        attack="ensemble",
        goal_mode="targeted",
        target_rule="random",
        target_seed=42,
        n_images=150,
        image_seed=0,
        gating=GatingPolicy.preassigned((40, 80)),
    )
    sweep = iteration_sweep(zoo, test_ds, spec, SWEEP_GRID)
    n_std = sweep.threshold_iterations("cnn_s")
    n_adv = sweep.threshold_iterations("adv_cnn")
    shown = ["never" if v is None else f"N={v}" for v in (n_std, n_adv)]
    _verdict(
        capsys, 7, "adversarially trained cnn needs more iterations to 90%",
        n_std is not None and n_adv is not None and n_adv > n_std,
        f"cnn_s reaches 90% at {shown[0]}, adv_cnn at {shown[1]} "
        f"over {sweep.n_images} images, grid {list(SWEEP_GRID)}",
    )


# ---------------------------------------------------------------------------
# 8. Ensemble transfers at least as well as every member
# ---------------------------------------------------------------------------

def test_criterion_8_ensemble_transfer_dominates(capsys, zoo, data):
    _, test_ds = data
    members = ("mlp_l", "cnn_s", "cnn_l", "adv_mlp", "adv_cnn")
    spec = EvalSpec(
        config=AttackConfig(0.1, 0.01, 40),
        sources=(members,) + tuple((m,) for m in members),
        victims=("mlp_h",),
        attack="ensemble",
        goal_mode="targeted",
        target_rule="random",
        target_seed=42,
        n_images=120,
        image_seed=0,
    )
    matrix = run_eval(zoo, test_ds, spec)
    ens_label = "+".join(members)
    n_ens = matrix.cell(ens_label, "mlp_h").n_success
    singles = {m: matrix.cell(m, "mlp_h").n_success for m in members}
    n = matrix.cell(ens_label, "mlp_h").n_images
    _verdict(
        capsys, 8, "ensemble transfer >= every member's transfer",
        all(n_ens >= v for v in singles.values()),
        f"ensemble {n_ens}/{n} vs singles "
        + ", ".join(f"{m}={v}" for m, v in singles.items()),
    )


# ---------------------------------------------------------------------------
# 9. Byte-identical pipeline reruns
# ---------------------------------------------------------------------------

def test_criterion_9_pipeline_determinism(capsys, tmp_path):
    out = tmp_path / "out"
    doc = {
        "output_dir": str(out),
        "dataset": {"stem": "data/synth", "seed": 11, "n_train": 300, "n_test": 100},
        "zoo": {"dir": "models", "entries": ["mlp_s", "mlp_l"]},
        "attack": {
            "kind": "igsm", "source": ["mlp_s"], "out_stem": "adv/batch",
            "epsilon": 0.1, "alpha": 0.02, "iterations": 5, "n_images": 8,
        },
        "eval": {
            "kind": "igsm", "sources": [["mlp_s"], ["mlp_l"]],
            "victims": ["mlp_s", "mlp_l"], "report_stem": "reports/matrix",
            "epsilon": 0.1, "alpha": 0.02, "iterations": 5, "n_images": 8,
        },
        "sweep": {
            "members": ["mlp_s", "mlp_l"], "report_stem": "reports/sweep",
            "grid": [1, 3], "epsilon": 0.1, "alpha": 0.02, "n_images": 6,
        },
    }
    config = tmp_path / "run.json"
    config.write_text(json.dumps(doc))

    def run_all(extra=()):
        for command in ("gen-data", "train", "attack", "eval", "sweep"):
            rc = cli.main([command, "--config", str(config), *extra])
            assert rc == 0, f"{command} exited {rc}"

    def digests():
        return {
            str(p.relative_to(out)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(out.rglob("*")) if p.is_file()
        }

    run_all()
    first = digests()
    run_all(extra=("--force",))
    second = digests()
    same = first == second
    _verdict(
        capsys, 9, "pipeline reruns are byte-identical",
        same and len(first) >= 12,
        f"{len(first)} output files (models, datasets, archives, reports) "
        f"compared by sha256 across two runs",
    )
