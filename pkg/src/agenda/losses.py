"""The five scalar training objectives and their input-side gradients.

Each loss reduces to a batch mean (per-member losses are summed across the
ensemble), so the debiasing weight keeps the same meaning at any batch
size. Probabilities are clamped at 1e-12 before the log; the clamp count
is reported in the breakdown, and gradients keep the -1/p form at the
clamp so a saturated prediction still pushes back instead of dying.

Gradients here are with respect to the loss *inputs* (probability rows);
composing them with the network backward passes yields the gradients the
trainer applies.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ValidationError

LOG_CLAMP = 1e-12
UNIFORM_PAIR_LOSS = float(np.log(2.0))  # global minimum of the confusion loss


@dataclass
class LossValue:
    """Scalar objective plus a named breakdown of its terms."""

    value: float
    breakdown: dict = field(default_factory=dict)


def _clamped_log(p):
    return np.log(np.maximum(p, LOG_CLAMP))


def _true_class_probs(probs, labels, n_classes_name):
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.ndim != 2:
        raise DimensionError("probability input must be 2-d")
    if labels.shape != (probs.shape[0],):
        raise DimensionError("one label per probability row required")
    if labels.min() < 0 or labels.max() >= probs.shape[1]:
        raise ValidationError(
            "label out of range for %d %s" % (probs.shape[1], n_classes_name)
        )
    return probs[np.arange(probs.shape[0]), labels]


def l_class(probs, y_id):
    """Mean cross-entropy of the classifier rows against identity labels."""
    p_true = _true_class_probs(probs, y_id, "identity classes")
    clamped = int(np.count_nonzero(p_true < LOG_CLAMP))
    value = float(-_clamped_log(p_true).mean())
    return LossValue(value, {"clamped": float(clamped)})


def l_class_grad(probs, y_id):
    probs = np.asarray(probs, dtype=np.float64)
    p_true = _true_class_probs(probs, y_id, "identity classes")
    d = np.zeros_like(probs)
    d[np.arange(probs.shape[0]), y_id] = -1.0 / (
        probs.shape[0] * np.maximum(p_true, LOG_CLAMP)
    )
    return d


def l_g_member(out, y_g):
    """Binary cross-entropy of one ensemble member against attribute labels.

    ``out`` columns are indexed by attribute code, so the probability of
    the true attribute is a plain row gather.
    """
    p_true = _true_class_probs(out, y_g, "attribute classes")
    clamped = int(np.count_nonzero(p_true < LOG_CLAMP))
    value = float(-_clamped_log(p_true).mean())
    return LossValue(value, {"clamped": float(clamped)})


def l_g_member_grad(out, y_g):
    out = np.asarray(out, dtype=np.float64)
    p_true = _true_class_probs(out, y_g, "attribute classes")
    d = np.zeros_like(out)
    d[np.arange(out.shape[0]), y_g] = -1.0 / (
        out.shape[0] * np.maximum(p_true, LOG_CLAMP)
    )
    return d


def l_g(member_outputs, y_g):
    """Sum of per-member attribute cross-entropies over the whole ensemble."""
    if len(member_outputs) < 1:
        raise ValidationError("l_g needs at least one ensemble member")
    breakdown = {}
    total = 0.0
    for k, out in enumerate(member_outputs):
        member = l_g_member(out, y_g)
        breakdown["member_%d" % k] = member.value
        total += member.value
    return LossValue(float(total), breakdown)


def l_a(out):
    """Distance of a member's output pair from maximal confusion.

    Mean over the batch of -(0.5 log o_f + 0.5 log o_m); minimized (at
    log 2) exactly when both probabilities are 0.5.
    """
    out = np.asarray(out, dtype=np.float64)
    if out.ndim != 2 or out.shape[1] != 2:
        raise DimensionError("l_a expects (n, 2) probability rows")
    clamped = int(np.count_nonzero(out < LOG_CLAMP))
    value = float(-(0.5 * _clamped_log(out)).sum(axis=1).mean())
    return LossValue(value, {"clamped": float(clamped)})


def l_a_grad(out):
    out = np.asarray(out, dtype=np.float64)
    return -0.5 / (out.shape[0] * np.maximum(out, LOG_CLAMP))


def l_deb(member_values):
    """Pick the strongest remaining attribute predictor.

    Takes per-member confusion losses (batch means) and returns the max
    plus the index of the member that attains it; ties go to the lowest
    index so reruns are deterministic. Gradients flow only through the
    selected member.
    """
    if len(member_values) < 1:
        raise ValidationError("l_deb needs at least one member value")
    values = np.asarray(
        [v.value if isinstance(v, LossValue) else float(v) for v in member_values]
    )
    k = int(np.argmax(values))
    return LossValue(float(values[k]), {"member": float(k)}), k


def l_br(class_loss, deb_loss, lam):
    """Combined objective: identity term plus ``lam`` times the debias term."""
    if lam < 0:
        raise ValidationError("debiasing weight must be >= 0")
    value = class_loss.value + lam * deb_loss.value
    return LossValue(
        float(value),
        {"l_class": class_loss.value, "l_deb": deb_loss.value, "lambda": float(lam)},
    )
