"""Gradient-sign attacks, a C&W-style minimum-l2 attack, ensemble losses,
and the gated iterative ensemble attack.

Models are duck-typed.  Anything with

    loss_grad_logits(x, class_index) -> (loss, input_grad, logits)
    forward_logits(x) -> logits

can be attacked with the sign-based methods; ``cw_l2`` additionally needs

    logits_and_input_grad(x, logit_grad_fn) -> (logits, input_grad)

where ``logit_grad_fn`` maps the logit vector to an upstream gradient.
Every attack is a pure function of its arguments: no RNG, no hidden
state, bit-identical results on repeated calls.

Sign conventions: a *targeted* attack descends the cross-entropy toward
the target class (minus sign on the update); an *untargeted* attack
ascends the true class's loss (plus sign).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, ContractError, InvariantViolation, ShapeError
from .layers import Tensor, softmax

PIXEL_DOMAIN = (0.0, 1.0)

LINF_SLACK = 1e-12  # tolerance used when auditing the l-inf budget

_ADAM_BETA1 = 0.9
_ADAM_BETA2 = 0.999
_ADAM_EPS = 1e-8
_ATANH_SCALE = 0.999999  # keeps arctanh finite at pixel values 0 and 1


# ---------------------------------------------------------------------------
# Goal / config types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AttackGoal:
    """What counts as a win: reach ``class_index`` (targeted) or leave it
    (untargeted, where class_index is the true class)."""

    mode: str
    class_index: int

    def __post_init__(self):
        if self.mode not in ("targeted", "untargeted"):
            raise ContractError(f"unknown goal mode {self.mode!r}")
        if self.class_index < 0:
            raise ContractError(f"class_index must be >= 0, got {self.class_index}")

    @classmethod
    def targeted(cls, target_class: int) -> "AttackGoal":
        return cls("targeted", int(target_class))

    @classmethod
    def untargeted(cls, true_class: int) -> "AttackGoal":
        return cls("untargeted", int(true_class))

    @property
    def is_targeted(self) -> bool:
        return self.mode == "targeted"


@dataclass(frozen=True)
class AttackConfig:
    """Budget for the sign-based attacks: l-inf radius ``epsilon``,
    per-step size ``alpha``, iteration count, pixel domain."""

    epsilon: float
    alpha: float
    iterations: int
    pixel_domain: tuple[float, float] = PIXEL_DOMAIN

    def __post_init__(self):
        lo, hi = self.pixel_domain
        if not lo < hi:
            raise ConfigError(f"pixel_domain must be ordered, got {self.pixel_domain}")
        if self.epsilon < 0.0 or self.epsilon > hi - lo:
            raise ConfigError(
                f"epsilon must lie in [0, {hi - lo}], got {self.epsilon}"
            )
        if self.alpha < 0.0 or self.alpha > self.epsilon:
            raise ConfigError(
                f"alpha must lie in [0, epsilon={self.epsilon}], got {self.alpha}"
            )
        if self.epsilon > 0.0 and self.alpha == 0.0:
            raise ConfigError("alpha must be positive when epsilon > 0")
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")


@dataclass(frozen=True)
class CWConfig:
    """Solver knobs for cw_l2.  ``kappa`` is the confidence margin; the
    c range and step counts drive the binary search and inner descent."""

    kappa: float = 0.0
    c_init: float = 0.01
    c_min: float = 1e-4
    c_max: float = 1e2
    c_search_steps: int = 6
    inner_steps: int = 500
    step_size: float = 0.01

    def __post_init__(self):
        if self.kappa < 0.0:
            raise ConfigError(f"kappa must be >= 0, got {self.kappa}")
        if not (0.0 < self.c_min <= self.c_init <= self.c_max):
            raise ConfigError(
                f"need 0 < c_min <= c_init <= c_max, got "
                f"({self.c_min}, {self.c_init}, {self.c_max})"
            )
        if self.c_search_steps < 1 or self.inner_steps < 1:
            raise ConfigError("step counts must be >= 1")
        if self.step_size <= 0.0:
            raise ConfigError(f"step_size must be positive, got {self.step_size}")


@dataclass(frozen=True)
class GatingPolicy:
    """Which ensemble members contribute to each update step."""

    kind: str
    tau: float = 0.01
    iters_per_model: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in ("always_on", "loss_threshold", "preassigned"):
            raise ConfigError(f"unknown gating kind {self.kind!r}")
        if self.kind == "loss_threshold" and self.tau <= 0.0:
            raise ConfigError(f"loss_threshold tau must be > 0, got {self.tau}")
        if self.kind == "preassigned":
            if not self.iters_per_model:
                raise ConfigError("preassigned gating needs iters_per_model")
            if any(n < 0 for n in self.iters_per_model):
                raise ConfigError("preassigned iteration counts must be >= 0")

    @classmethod
    def always_on(cls) -> "GatingPolicy":
        return cls("always_on")

    @classmethod
    def loss_threshold(cls, tau: float = 0.01) -> "GatingPolicy":
        return cls("loss_threshold", tau=tau)

    @classmethod
    def preassigned(cls, iters_per_model: Sequence[int]) -> "GatingPolicy":
        return cls("preassigned", iters_per_model=tuple(int(n) for n in iters_per_model))


@dataclass(frozen=True)
class StepRecord:
    """State after update ``step`` (1-based): per-model losses and
    predictions at the new iterate, the mask that produced it, and the
    iterate's distance from the original image."""

    step: int
    losses: tuple[float, ...]
    mask: tuple[bool, ...]
    preds: tuple[int, ...]
    linf: float
    l2: float


@dataclass(frozen=True)
class AttackTrace:
    """Full record of an iterative attack run.

    ``initial_losses``/``initial_preds`` describe the clean input
    (iterate 0); ``steps[t-1]`` describes the iterate after update t.
    """

    x_adv: Tensor
    initial_losses: tuple[float, ...]
    initial_preds: tuple[int, ...]
    steps: tuple[StepRecord, ...] = field(default_factory=tuple)


@dataclass(frozen=True)
class CWResult:
    x_adv: Tensor
    delta_l2: float
    succeeded: bool
    c_used: float


# ---------------------------------------------------------------------------
# Primitive ops
# ---------------------------------------------------------------------------

def sign(t: Tensor) -> Tensor:
    """Elementwise sign with sign(0) = 0."""
    return np.sign(t)


def clip_to_ball(
    x_prop: Tensor,
    x_orig: Tensor,
    epsilon: float,
    pixel_domain: tuple[float, float] = PIXEL_DOMAIN,
) -> Tensor:
    """Clamp ``x_prop`` into the l-inf ball around ``x_orig`` intersected
    with the pixel domain."""
    if x_prop.shape != x_orig.shape:
        raise ShapeError(
            f"clip_to_ball: proposal {x_prop.shape} does not match original {x_orig.shape}"
        )
    if epsilon < 0.0:
        raise ConfigError(f"epsilon must be >= 0, got {epsilon}")
    lo, hi = pixel_domain
    lower = np.maximum(lo, x_orig - epsilon)
    upper = np.minimum(hi, x_orig + epsilon)
    return np.clip(x_prop, lower, upper)


def _check_pixel_domain(x: Tensor, pixel_domain: tuple[float, float]) -> None:
    lo, hi = pixel_domain
    if x.size and (x.min() < lo or x.max() > hi):
        raise ContractError(
            f"input pixels must lie in [{lo}, {hi}], got range "
            f"[{x.min()}, {x.max()}]"
        )


def _signed_step(
    x_cur: Tensor,
    x_orig: Tensor,
    grad: Tensor,
    step_size: float,
    goal: AttackGoal,
    epsilon: float,
    pixel_domain: tuple[float, float],
) -> Tensor:
    """One clipped sign-gradient update; shared by fgsm/igsm/ensemble."""
    direction = -step_size if goal.is_targeted else step_size
    return clip_to_ball(x_cur + direction * sign(grad), x_orig, epsilon, pixel_domain)


def _audit_ball(x_adv: Tensor, x_orig: Tensor, epsilon: float,
                pixel_domain: tuple[float, float]) -> tuple[float, float]:
    """Verify the l-inf/domain invariants; returns (linf, l2) distances."""
    diff = x_adv - x_orig
    linf = float(np.max(np.abs(diff))) if diff.size else 0.0
    l2 = float(np.sqrt(np.sum(diff * diff)))
    lo, hi = pixel_domain
    if linf > epsilon + LINF_SLACK:
        raise InvariantViolation(
            f"l-inf distance {linf} exceeds budget epsilon={epsilon}"
        )
    if x_adv.size and (x_adv.min() < lo or x_adv.max() > hi):
        raise InvariantViolation(
            f"adversarial pixels escaped [{lo}, {hi}]: "
            f"range [{x_adv.min()}, {x_adv.max()}]"
        )
    return linf, l2


# ---------------------------------------------------------------------------
# Single-model sign attacks
# ---------------------------------------------------------------------------

def fgsm(
    model,
    x: Tensor,
    goal: AttackGoal,
    epsilon: float,
    pixel_domain: tuple[float, float] = PIXEL_DOMAIN,
) -> Tensor:
    """Single sign-gradient step of size ``epsilon``."""
    if epsilon < 0.0 or epsilon > pixel_domain[1] - pixel_domain[0]:
        raise ConfigError(f"epsilon out of range: {epsilon}")
    _check_pixel_domain(x, pixel_domain)
    _, grad, _ = model.loss_grad_logits(x, goal.class_index)
    x_adv = _signed_step(x, x, grad, epsilon, goal, epsilon, pixel_domain)
    _audit_ball(x_adv, x, epsilon, pixel_domain)
    return x_adv


def igsm(model, x: Tensor, goal: AttackGoal, config: AttackConfig) -> AttackTrace:
    """Iterated sign-gradient attack: ``iterations`` clipped steps of
    size ``alpha`` inside the epsilon ball."""
    _check_pixel_domain(x, config.pixel_domain)
    x_orig = x.copy()
    loss, grad, logits = model.loss_grad_logits(x_orig, goal.class_index)
    initial_losses = (loss,)
    initial_preds = (int(np.argmax(logits)),)
    steps = []
    x_cur = x_orig
    for t in range(1, config.iterations + 1):
        x_cur = _signed_step(
            x_cur, x_orig, grad, config.alpha, goal, config.epsilon, config.pixel_domain
        )
        loss, grad, logits = model.loss_grad_logits(x_cur, goal.class_index)
        linf, l2 = _audit_ball(x_cur, x_orig, config.epsilon, config.pixel_domain)
        steps.append(
            StepRecord(t, (loss,), (True,), (int(np.argmax(logits)),), linf, l2)
        )
    return AttackTrace(x_cur, initial_losses, initial_preds, tuple(steps))


# ---------------------------------------------------------------------------
# C&W-style minimum-l2 attack
# ---------------------------------------------------------------------------

def cw_margin(
    logits: Tensor, reference_class: int, kappa: float, targeted: bool = False
) -> float:
    """Hinge margin on logits, clamped below at -kappa.

    Untargeted (reference = true class): max(Z_ref - max_others, -kappa);
    targeted (reference = target class): max(max_others - Z_ref, -kappa).
    Non-positive values mean the goal is met (with kappa slack).
    """
    if logits.ndim != 1 or logits.shape[0] < 2:
        raise ContractError(f"cw_margin needs a >=2-class logit vector, got {logits.shape}")
    if not 0 <= reference_class < logits.shape[0]:
        raise ContractError(
            f"reference_class {reference_class} out of range for {logits.shape[0]} classes"
        )
    others = np.delete(logits, reference_class)
    if targeted:
        raw = float(others.max() - logits[reference_class])
    else:
        raw = float(logits[reference_class] - others.max())
    return max(raw, -kappa)


def _cw_margin_logit_grad(
    logits: Tensor, reference_class: int, kappa: float, targeted: bool
) -> Tensor:
    """Subgradient of cw_margin w.r.t. the logits (zero when clamped)."""
    grad = np.zeros_like(logits)
    others = np.delete(logits, reference_class)
    raw = (others.max() - logits[reference_class]) if targeted else (
        logits[reference_class] - others.max()
    )
    if raw <= -kappa:
        return grad
    rival = int(np.argmax(others))
    if rival >= reference_class:
        rival += 1
    if targeted:
        grad[rival] = 1.0
        grad[reference_class] = -1.0
    else:
        grad[reference_class] = 1.0
        grad[rival] = -1.0
    return grad


def cw_l2(model, x: Tensor, goal: AttackGoal, config: CWConfig = CWConfig()) -> CWResult:
    """Minimum-l2 adversarial perturbation via a tanh change of variables.

    Minimizes ||delta||^2 + c * margin with Adam on the tanh-space image,
    binary-searching c toward the smallest value whose solution satisfies
    the margin, and returns the smallest-l2 feasible iterate seen anywhere.
    Never raises on failure: an infeasible run returns succeeded=False
    with x_adv = x.
    """
    _check_pixel_domain(x, PIXEL_DOMAIN)
    reference = goal.class_index
    targeted = goal.is_targeted
    kappa = config.kappa

    def margin_and_grad_fn(logits: Tensor) -> Tensor:
        return _cw_margin_logit_grad(logits, reference, kappa, targeted)

    best_x = None
    best_l2_sq = np.inf
    best_c = 0.0

    # delta = 0 is optimal whenever the clean input already satisfies the goal
    clean_margin = cw_margin(model.forward_logits(x), reference, kappa, targeted)
    if clean_margin <= 0.0:
        return CWResult(x.copy(), 0.0, True, 0.0)

    w_init = np.arctanh((2.0 * x - 1.0) * _ATANH_SCALE)
    c = config.c_init
    c_lo = 0.0
    c_hi = np.inf
    for _ in range(config.c_search_steps):
        w = w_init.copy()
        m = np.zeros_like(w)
        v = np.zeros_like(w)
        found_at_this_c = False
        for t in range(1, config.inner_steps + 1):
            x_adv = (np.tanh(w) + 1.0) / 2.0
            delta = x_adv - x
            l2_sq = float(np.sum(delta * delta))
            logits, margin_input_grad = model.logits_and_input_grad(
                x_adv, margin_and_grad_fn
            )
            if cw_margin(logits, reference, kappa, targeted) <= 0.0:
                found_at_this_c = True
                if l2_sq < best_l2_sq:
                    best_l2_sq = l2_sq
                    best_x = x_adv
                    best_c = c
            obj_grad_x = 2.0 * delta + c * margin_input_grad
            grad_w = obj_grad_x * (1.0 - (2.0 * x_adv - 1.0) ** 2) / 2.0
            m = _ADAM_BETA1 * m + (1.0 - _ADAM_BETA1) * grad_w
            v = _ADAM_BETA2 * v + (1.0 - _ADAM_BETA2) * grad_w * grad_w
            m_hat = m / (1.0 - _ADAM_BETA1 ** t)
            v_hat = v / (1.0 - _ADAM_BETA2 ** t)
            w = w - config.step_size * m_hat / (np.sqrt(v_hat) + _ADAM_EPS)
        if found_at_this_c:
            c_hi = c
            c = max((c_lo + c_hi) / 2.0, config.c_min)
        else:
            c_lo = c
            c = min(c * 10.0, config.c_max) if np.isinf(c_hi) else (c_lo + c_hi) / 2.0
            if c_lo >= config.c_max:
                break

    if best_x is None:
        return CWResult(x.copy(), 0.0, False, 0.0)
    final_margin = cw_margin(model.forward_logits(best_x), reference, kappa, targeted)
    if final_margin > 0.0:
        raise InvariantViolation(
            f"cw_l2 bookkeeping error: stored solution has margin {final_margin} > 0"
        )
    return CWResult(best_x, float(np.sqrt(best_l2_sq)), True, best_c)


# ---------------------------------------------------------------------------
# Ensemble losses and gating
# ---------------------------------------------------------------------------

def prob_ensemble_loss(models: Sequence, x: Tensor, class_index: int) -> float:
    """Negative log of the ensemble-mean softmax probability of
    ``class_index``.  Verification-side companion to loss_ensemble_loss."""
    if not models:
        raise ContractError("prob_ensemble_loss needs at least one model")
    mean_prob = 0.0
    for model in models:
        mean_prob += float(softmax(model.forward_logits(x))[class_index])
    mean_prob /= len(models)
    return -float(np.log(mean_prob))


def loss_ensemble_loss(
    models: Sequence,
    x: Tensor,
    class_index: int,
    mask: Sequence[bool] | None = None,
):
    """Masked mean of per-model cross-entropies and its input gradient.

    Returns (J, per_model_losses, grad) where J = (1/M) sum_k mask_k J_k
    and grad is the same masked mean of per-model input gradients.  The
    per-model losses are always reported for all M models.
    """
    m_count = len(models)
    if m_count == 0:
        raise ContractError("loss_ensemble_loss needs at least one model")
    if mask is None:
        mask_arr = np.ones(m_count, dtype=bool)
    else:
        mask_arr = np.asarray(mask, dtype=bool)
        if mask_arr.shape != (m_count,):
            raise ShapeError(
                f"mask has {mask_arr.shape[0] if mask_arr.ndim == 1 else mask_arr.shape} "
                f"entries for {m_count} models"
            )
    if not mask_arr.any():
        raise ContractError("loss_ensemble_loss mask selects no models")

    losses = []
    grad = np.zeros_like(x)
    total = 0.0
    for k, model in enumerate(models):
        loss_k, grad_k, _ = model.loss_grad_logits(x, class_index)
        losses.append(loss_k)
        if mask_arr[k]:
            total += loss_k
            grad = grad + grad_k
    j_loss = total / m_count
    grad = grad / m_count
    return j_loss, tuple(losses), grad


def update_gating(
    per_model_losses: Sequence[float], policy: GatingPolicy, step: int
) -> np.ndarray:
    """Boolean inclusion mask for the update at 0-based ``step``.

    loss_threshold keeps models whose loss is still >= tau (recomputed
    fresh every step, so a fooled model re-enters if its loss climbs
    back); preassigned keeps model k while step < iters_per_model[k].
    If a rule would empty the mask, the highest-loss model stays active.
    """
    losses = np.asarray(per_model_losses, dtype=np.float64)
    if losses.ndim != 1 or losses.size == 0:
        raise ContractError("per_model_losses must be a non-empty vector")
    if policy.kind == "always_on":
        return np.ones(losses.size, dtype=bool)
    if policy.kind == "loss_threshold":
        mask = losses >= policy.tau
    else:
        if len(policy.iters_per_model) != losses.size:
            raise ContractError(
                f"preassigned gating lists {len(policy.iters_per_model)} models, "
                f"ensemble has {losses.size}"
            )
        mask = np.array([step < n for n in policy.iters_per_model], dtype=bool)
    if not mask.any():
        mask[int(np.argmax(losses))] = True
    return mask


def iterative_ensemble_attack(
    models: Sequence,
    x: Tensor,
    goal: AttackGoal,
    config: AttackConfig,
    policy: GatingPolicy = GatingPolicy.always_on(),
) -> AttackTrace:
    """Iterated sign steps on the gated mean of per-model loss gradients.

    Each update recomputes the gating mask from the current per-model
    losses, averages the active models' input gradients (fixed 1/M
    normalization — the sign step makes the constant immaterial), takes
    one clipped sign step, and records losses/predictions at the new
    iterate for every model, gated or not.
    """
    m_count = len(models)
    if m_count == 0:
        raise ContractError("iterative_ensemble_attack needs at least one model")
    if policy.kind == "preassigned" and len(policy.iters_per_model) != m_count:
        raise ContractError(
            f"preassigned gating lists {len(policy.iters_per_model)} models, "
            f"ensemble has {m_count}"
        )
    _check_pixel_domain(x, config.pixel_domain)
    x_orig = x.copy()

    def measure(x_at):
        losses, grads, preds = [], [], []
        for model in models:
            loss_k, grad_k, logits_k = model.loss_grad_logits(x_at, goal.class_index)
            losses.append(loss_k)
            grads.append(grad_k)
            preds.append(int(np.argmax(logits_k)))
        return losses, grads, preds

    losses, grads, preds = measure(x_orig)
    initial_losses = tuple(losses)
    initial_preds = tuple(preds)
    steps = []
    x_cur = x_orig
    for t in range(1, config.iterations + 1):
        mask = update_gating(losses, policy, t - 1)
        combined = np.zeros_like(x_cur)
        for k in range(m_count):
            if mask[k]:
                combined = combined + grads[k]
        combined = combined / m_count
        x_cur = _signed_step(
            x_cur, x_orig, combined, config.alpha, goal, config.epsilon,
            config.pixel_domain,
        )
        losses, grads, preds = measure(x_cur)
        linf, l2 = _audit_ball(x_cur, x_orig, config.epsilon, config.pixel_domain)
        steps.append(
            StepRecord(t, tuple(losses), tuple(bool(b) for b in mask),
                       tuple(preds), linf, l2)
        )
    return AttackTrace(x_cur, initial_losses, initial_preds, tuple(steps))
