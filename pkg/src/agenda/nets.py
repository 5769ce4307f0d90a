"""The three learnable components and their hand-derived gradients.

* generator: one linear layer into 256 units with a per-channel PReLU,
  mapping input descriptors to the suppressed embedding.
* classifier: linear + softmax over identity classes.
* discriminator: linear(256->128) + SELU, linear(128->2) + sigmoid, then a
  softmax over the two attribute units. The sigmoid-then-softmax output is
  implemented literally as specified even though it compresses the logits.

Forward passes return ``(output, cache)``; the matching backward consumes
the cache plus an upstream gradient and produces exact analytic gradients
for the parameters and the layer input. All math is float64. Shapes are
taken from the parameter arrays, so tests can build small toy nets while
the factories produce the production sizes.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError, DimensionError, NumericError, StateError

GENERATOR_UNITS = 256
DISCRIMINATOR_HIDDEN = 128
PRELU_INIT_SLOPE = 0.25

# Self-normalizing activation constants from the standard reference.
SELU_LAMBDA = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772


@dataclass
class GeneratorParams:
    weight: np.ndarray  # (in_dim, units)
    bias: np.ndarray  # (units,)
    prelu_slope: np.ndarray  # (units,)


@dataclass
class ClassifierParams:
    weight: np.ndarray  # (units, n_identities)
    bias: np.ndarray  # (n_identities,)


@dataclass
class DiscriminatorParams:
    w1: np.ndarray  # (units, hidden)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden, 2)
    b2: np.ndarray  # (2,)


@dataclass
class EnsembleParams:
    members: list  # of DiscriminatorParams


def _glorot(rng, fan_in, fan_out, shape):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _rng_of(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(ss))


def init_generator(in_dim, seed, units=GENERATOR_UNITS):
    rng = _rng_of(seed)
    return GeneratorParams(
        weight=_glorot(rng, in_dim, units, (in_dim, units)),
        bias=np.zeros(units),
        prelu_slope=np.full(units, PRELU_INIT_SLOPE),
    )


def init_classifier(n_identities, seed, units=GENERATOR_UNITS):
    rng = _rng_of(seed)
    return ClassifierParams(
        weight=_glorot(rng, units, n_identities, (units, n_identities)),
        bias=np.zeros(n_identities),
    )


def init_discriminator(seed, units=GENERATOR_UNITS, hidden=DISCRIMINATOR_HIDDEN):
    rng = _rng_of(seed)
    return DiscriminatorParams(
        w1=_glorot(rng, units, hidden, (units, hidden)),
        b1=np.zeros(hidden),
        w2=_glorot(rng, hidden, 2, (hidden, 2)),
        b2=np.zeros(2),
    )


def init_ensemble(k, seed, units=GENERATOR_UNITS, hidden=DISCRIMINATOR_HIDDEN):
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return EnsembleParams([init_discriminator(c, units, hidden) for c in ss.spawn(k)])


def _check_batch(x, expected_cols, who):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError("%s expects a 2-d batch" % who)
    if x.shape[1] != expected_cols:
        raise DimensionError(
            "%s expects %d columns, got %d" % (who, expected_cols, x.shape[1])
        )
    return x


def _softmax_rows(z):
    shifted = z - z.max(axis=1, keepdims=True)
    ez = np.exp(shifted)
    return ez / ez.sum(axis=1, keepdims=True)


def _softmax_backward(probs, d_probs):
    # dL/dz_j = p_j * (g_j - sum_i g_i p_i) for row-wise softmax.
    inner = (d_probs * probs).sum(axis=1, keepdims=True)
    return probs * (d_probs - inner)


def generator_forward(params, x):
    """PReLU(x @ W + b); returns (batch x units, cache)."""
    x = _check_batch(x, params.weight.shape[0], "generator_forward")
    z = x @ params.weight + params.bias
    neg = z < 0.0
    out = np.where(neg, z * params.prelu_slope, z)
    return out, (x, z, neg)


def generator_backward(params, cache, d_out):
    if cache is None:
        raise StateError("generator_backward called without a cached forward pass")
    x, z, neg = cache
    d_out = np.asarray(d_out, dtype=np.float64)
    if d_out.shape != z.shape:
        raise DimensionError("upstream gradient shape %s != forward output %s" % (d_out.shape, z.shape))
    d_z = np.where(neg, d_out * params.prelu_slope, d_out)
    d_slope = np.where(neg, d_out * z, 0.0).sum(axis=0)
    grads = GeneratorParams(
        weight=x.T @ d_z,
        bias=d_z.sum(axis=0),
        prelu_slope=d_slope,
    )
    return grads, d_z @ params.weight.T


def classifier_forward(params, f_out):
    """softmax(f @ W + b) with max-subtraction; rows sum to 1."""
    f_out = _check_batch(f_out, params.weight.shape[0], "classifier_forward")
    logits = f_out @ params.weight + params.bias
    probs = _softmax_rows(logits)
    return probs, (f_out, probs)


def classifier_backward(params, cache, d_probs):
    if cache is None:
        raise StateError("classifier_backward called without a cached forward pass")
    f_out, probs = cache
    d_probs = np.asarray(d_probs, dtype=np.float64)
    if d_probs.shape != probs.shape:
        raise DimensionError("upstream gradient shape mismatch")
    d_logits = _softmax_backward(probs, d_probs)
    grads = ClassifierParams(
        weight=f_out.T @ d_logits,
        bias=d_logits.sum(axis=0),
    )
    return grads, d_logits @ params.weight.T


def _selu(z):
    return SELU_LAMBDA * np.where(z > 0.0, z, SELU_ALPHA * (np.exp(z) - 1.0))


def discriminator_forward(params, f_out):
    """SELU hidden layer, sigmoid output pair, softmax across the pair.

    Column ``a`` of the result is the predicted probability of attribute
    code ``a`` (0 = female, 1 = male); rows sum to 1.
    """
    f_out = _check_batch(f_out, params.w1.shape[0], "discriminator_forward")
    z1 = f_out @ params.w1 + params.b1
    h = _selu(z1)
    z2 = h @ params.w2 + params.b2
    u = 1.0 / (1.0 + np.exp(-z2))
    out = _softmax_rows(u)
    return out, (f_out, z1, h, u, out)


def discriminator_backward(params, cache, d_out):
    if cache is None:
        raise StateError("discriminator_backward called without a cached forward pass")
    f_out, z1, h, u, out = cache
    d_out = np.asarray(d_out, dtype=np.float64)
    if d_out.shape != out.shape:
        raise DimensionError("upstream gradient shape mismatch")
    d_u = _softmax_backward(out, d_out)
    d_z2 = d_u * u * (1.0 - u)
    d_h = d_z2 @ params.w2.T
    d_z1 = d_h * SELU_LAMBDA * np.where(z1 > 0.0, 1.0, SELU_ALPHA * np.exp(z1))
    grads = DiscriminatorParams(
        w1=f_out.T @ d_z1,
        b1=d_z1.sum(axis=0),
        w2=h.T @ d_z2,
        b2=d_z2.sum(axis=0),
    )
    return grads, d_z1 @ params.w1.T


def param_items(params):
    """(name, array) pairs for one parameter block, in declaration order."""
    if isinstance(params, GeneratorParams):
        return [("weight", params.weight), ("bias", params.bias), ("prelu_slope", params.prelu_slope)]
    if isinstance(params, ClassifierParams):
        return [("weight", params.weight), ("bias", params.bias)]
    if isinstance(params, DiscriminatorParams):
        return [("w1", params.w1), ("b1", params.b1), ("w2", params.w2), ("b2", params.b2)]
    raise TypeError("unsupported parameter container %r" % type(params).__name__)


@dataclass
class AdamState:
    """Adam accumulators for one parameter container.

    The update is ``p -= lr * m_hat / sqrt(v_hat + eps)`` — epsilon sits
    inside the square root.
    """

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = None
    v: dict = None

    def __post_init__(self):
        if self.m is None:
            self.m = {}
        if self.v is None:
            self.v = {}


def adam_step(state, params, grads):
    """One Adam update, mutating ``params`` and ``state`` in place."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for (name, p), (_, g) in zip(param_items(params), param_items(grads)):
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient in parameter block %r" % name)
        if p.shape != g.shape:
            raise DimensionError("gradient shape mismatch for block %r" % name)
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / bc1) / np.sqrt(v / bc2 + state.eps)
    return params, state


CKPT_MAGIC = b"AGND"
CKPT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sIIIIII")


def save_checkpoint(path, generator, classifier, ensemble):
    """Write all trained parameter blocks; float64 little-endian payload."""
    in_dim, units = generator.weight.shape
    n_identities = classifier.weight.shape[1]
    hidden = ensemble.members[0].w1.shape[1] if ensemble.members else DISCRIMINATOR_HIDDEN
    blocks = [generator, classifier] + list(ensemble.members)
    with open(path, "wb") as fh:
        fh.write(
            _CKPT_HEADER.pack(
                CKPT_MAGIC, CKPT_VERSION, in_dim, units, n_identities,
                len(ensemble.members), hidden,
            )
        )
        for block in blocks:
            for _, arr in param_items(block):
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint back into (generator, classifier, ensemble)."""
    with open(path, "rb") as fh:
        head = fh.read(_CKPT_HEADER.size)
        if len(head) < _CKPT_HEADER.size:
            raise DataFormatError("truncated", "checkpoint too short for header")
        magic, version, in_dim, units, n_identities, k, hidden = _CKPT_HEADER.unpack(head)
        if magic != CKPT_MAGIC:
            raise DataFormatError("bad_magic", "bad checkpoint magic %r" % magic)
        if version != CKPT_VERSION:
            raise DataFormatError("version", "unsupported checkpoint version %d" % version)
        payload = fh.read()
    shapes = [(in_dim, units), (units,), (units,), (units, n_identities), (n_identities,)]
    for _ in range(k):
        shapes += [(units, hidden), (hidden,), (hidden, 2), (2,)]
    expected = sum(int(np.prod(s)) for s in shapes) * 8
    if len(payload) != expected:
        raise DataFormatError(
            "truncated",
            "checkpoint payload: expected %d bytes, got %d" % (expected, len(payload)),
        )
    flat = np.frombuffer(payload, dtype="<f8")
    arrays = []
    pos = 0
    for shape in shapes:
        size = int(np.prod(shape))
        arrays.append(flat[pos : pos + size].reshape(shape).copy())
        pos += size
    generator = GeneratorParams(arrays[0], arrays[1], arrays[2])
    classifier = ClassifierParams(arrays[3], arrays[4])
    members = []
    for i in range(k):
        base = 5 + 4 * i
        members.append(DiscriminatorParams(*arrays[base : base + 4]))
    return generator, classifier, EnsembleParams(members)
