"""Four-stage adversarial training loop over generator, classifier, ensemble.

Stage schedule per episode i (0-based):

1. (episode 0 only) initialize generator + classifier, train ``t_fc`` steps
   on the identity loss at rate ``alpha1``.
2. (whenever ``i % t_ep == 0``) re-initialize the whole ensemble and train
   every member for ``t_gtrain`` steps on the attribute loss at ``alpha2``;
   generator and classifier frozen.
3. train generator + classifier for ``t_deb`` steps on the combined loss at
   ``alpha3``; ensemble frozen, and only the strongest member's confusion
   term steers the generator.
4. train member ``i % k`` on its attribute loss at ``alpha2`` for up to
   ``t_plat`` steps, checking validation accuracy before each update and
   stopping once it exceeds ``g_thresh``; generator and classifier frozen.

Determinism: every random draw comes from a Philox stream derived from the
run seed with a fixed spawn key, namespaced below. Batch streams are keyed
by (episode, stage) so ablations with the same seed consume identical
batches in matching stages. Adam state is fresh at each stage entry.
"""

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from . import losses, nets
from .dataio import (
    DescriptorDataset,
    coerce_kv,
    format_float,
    read_kv_config,
    split_by_identity,
    write_csv_report,
)
from .errors import NumericError, ValidationError

# Spawn-key namespaces under the run seed.
NS_INIT_MC = 0  # generator + classifier initialization
NS_INIT_E = 1  # (NS_INIT_E, reinit_counter) per ensemble re-initialization
NS_BATCHES = 2  # (NS_BATCHES, episode, stage) per batch stream
NS_SPLIT = 3  # validation split


@dataclass
class TrainConfig:
    """All hyperparameters of the training loop.

    Defaults are the desk-scale configuration (descriptor dim 64, ~10k
    records): full-scale runs in the source protocol used t_fc=66000,
    t_gtrain=30000, t_deb=1200, t_plat=2000, batch 400 with alpha1=1e-5;
    the iteration counts here keep roughly those ratios at ~1/30 size.
    ``t_ep`` defaults to ``k`` (one full round-robin over members between
    ensemble re-initializations) when left unset.
    """

    lam: float = 10.0
    k: int = 5
    t_fc: int = 2000
    t_gtrain: int = 600
    t_deb: int = 200
    t_plat: int = 300
    t_ep: int = None
    n_ep: int = 20
    g_thresh: float = 0.9
    alpha1: float = 1e-3
    alpha2: float = 1e-3
    alpha3: float = 1e-4
    batch_size: int = 128
    seed: int = 0
    validation_fraction: float = 0.1

    def resolved_t_ep(self):
        return self.k if self.t_ep is None else self.t_ep

    def validate(self):
        counts = {
            "k": self.k, "t_fc": self.t_fc, "t_gtrain": self.t_gtrain,
            "t_deb": self.t_deb, "t_plat": self.t_plat,
            "t_ep": self.resolved_t_ep(), "n_ep": self.n_ep,
        }
        for name, value in counts.items():
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ValidationError("%s must be an integer >= 1, got %r" % (name, value))
        for name, rate in (("alpha1", self.alpha1), ("alpha2", self.alpha2), ("alpha3", self.alpha3)):
            if not rate > 0:
                raise ValidationError("%s must be > 0" % name)
        if self.lam < 0:
            raise ValidationError("lam must be >= 0")
        if not 0.5 < self.g_thresh <= 1.0:
            raise ValidationError("g_thresh must be in (0.5, 1]")
        if self.batch_size < 2 or self.batch_size % 2 != 0:
            raise ValidationError("batch_size must be even and >= 2 (attribute balancing)")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValidationError("validation_fraction must be in (0, 1)")

    @classmethod
    def field_types(cls):
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        types["t_ep"] = int
        return types

    @classmethod
    def from_file(cls, path):
        return cls(**coerce_kv(read_kv_config(path), cls.field_types()))

    def to_kv(self):
        pairs = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if f.name == "t_ep":
                value = self.resolved_t_ep()
            pairs.append((f.name, value))
        return pairs


@dataclass
class LogRecord:
    episode: int
    stage: int
    iteration: int
    l_class: float = None
    l_deb: float = None
    l_br: float = None
    member_k: int = None
    val_acc: float = None


CSV_COLUMNS = ("episode", "stage", "iteration", "l_class", "l_deb", "l_br", "member_k", "val_acc")


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    def append(self, **kw):
        self.records.append(LogRecord(**kw))

    def stage_sequence(self):
        """(episode, stage, member_k) per logged iteration, for replay checks."""
        return [(r.episode, r.stage, r.member_k) for r in self.records]

    def rows(self):
        for r in self.records:
            yield (
                r.episode, r.stage, r.iteration,
                format_float(r.l_class), format_float(r.l_deb), format_float(r.l_br),
                "" if r.member_k is None else r.member_k,
                format_float(r.val_acc),
            )

    def write_csv(self, path, comments=()):
        write_csv_report(path, comments, CSV_COLUMNS, self.rows())


def balanced_batches(dataset, batch_size, seed):
    """Endless stream of index batches with equal counts per attribute.

    Each epoch reshuffles both attribute pools from a stream derived from
    ``seed``; an epoch covers the larger pool once, and a pool exhausted
    mid-epoch is refilled by sampling that attribute's records with
    replacement.
    """
    if batch_size < 2 or batch_size % 2 != 0:
        raise ValidationError("batch_size must be even and >= 2")
    attrs = dataset.attributes
    pool1 = np.flatnonzero(attrs == 1)
    pool0 = np.flatnonzero(attrs == 0)
    if len(pool0) == 0 or len(pool1) == 0:
        raise ValidationError("both attribute values must be present for balanced batches")
    half = batch_size // 2
    per_epoch = math.ceil(max(len(pool0), len(pool1)) / half)
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    while True:
        rng = np.random.Generator(np.random.Philox(ss.spawn(1)[0]))
        shuffled1 = rng.permutation(pool1)
        shuffled0 = rng.permutation(pool0)
        for b in range(per_epoch):
            batch = []
            for pool, shuffled in ((pool1, shuffled1), (pool0, shuffled0)):
                take = shuffled[b * half : (b + 1) * half]
                if len(take) < half:
                    take = np.concatenate(
                        [take, rng.choice(pool, size=half - len(take), replace=True)]
                    )
                batch.append(take)
            yield np.concatenate(batch)


def _check_finite(value, stage, episode, iteration):
    if not np.isfinite(value):
        raise NumericError(
            "non-finite loss (%r) at stage %d, episode %d, iteration %d"
            % (value, stage, episode, iteration)
        )


def _call_hook(hook, event, episode, stage, gen, cls, ensemble):
    if hook is not None:
        hook(event, episode, stage, gen, cls, ensemble)


def train(dataset, config, stage_hook=None):
    """Run the full schedule; returns (generator, classifier, ensemble, log).

    ``stage_hook(event, episode, stage, gen, cls, ensemble)`` is invoked
    with event "start"/"end" around every executed stage; it must treat the
    parameters as read-only.
    """
    config.validate()
    if len(np.unique(dataset.identities)) < 2:
        raise ValidationError("training needs at least 2 identities")
    if len(np.unique(dataset.attributes)) < 2:
        raise ValidationError("training needs both attribute values")

    train_idx, val_idx = split_by_identity(
        dataset, config.validation_fraction,
        np.random.SeedSequence(config.seed, spawn_key=(NS_SPLIT,)),
    )
    train_ds = dataset.subset(train_idx)
    val_ds = dataset.subset(val_idx)
    if len(np.unique(train_ds.identities)) < 2 or len(np.unique(train_ds.attributes)) < 2:
        raise ValidationError("training split lost an identity or attribute class")

    class_ids = np.unique(train_ds.identities)
    y_id_all = np.searchsorted(class_ids, train_ds.identities)
    y_g_all = train_ds.attributes.astype(np.int64)
    val_attrs = val_ds.attributes.astype(np.int64)

    t_ep = config.resolved_t_ep()
    init_mc = np.random.SeedSequence(config.seed, spawn_key=(NS_INIT_MC,))
    ss_gen, ss_cls = init_mc.spawn(2)
    gen = nets.init_generator(train_ds.dim, ss_gen)
    cls = nets.init_classifier(len(class_ids), ss_cls)
    ensemble = nets.EnsembleParams([])
    log = TrainLog()
    reinit_counter = 0

    def batches_for(episode, stage):
        ss = np.random.SeedSequence(config.seed, spawn_key=(NS_BATCHES, episode, stage))
        return balanced_batches(train_ds, config.batch_size, ss)

    for episode in range(config.n_ep):
        if episode == 0:
            _call_hook(stage_hook, "start", episode, 1, gen, cls, ensemble)
            adam_gen = nets.AdamState(lr=config.alpha1)
            adam_cls = nets.AdamState(lr=config.alpha1)
            stream = batches_for(episode, 1)
            for n in range(config.t_fc):
                idx = next(stream)
                x, y_id = train_ds.vectors[idx], y_id_all[idx]
                f_out, gcache = nets.generator_forward(gen, x)
                probs, ccache = nets.classifier_forward(cls, f_out)
                lc = losses.l_class(probs, y_id)
                _check_finite(lc.value, 1, episode, n)
                cgrads, d_f = nets.classifier_backward(
                    cls, ccache, losses.l_class_grad(probs, y_id)
                )
                ggrads, _ = nets.generator_backward(gen, gcache, d_f)
                nets.adam_step(adam_gen, gen, ggrads)
                nets.adam_step(adam_cls, cls, cgrads)
                log.append(episode=episode, stage=1, iteration=n, l_class=lc.value)
            _call_hook(stage_hook, "end", episode, 1, gen, cls, ensemble)

        if episode % t_ep == 0:
            _call_hook(stage_hook, "start", episode, 2, gen, cls, ensemble)
            ss_e = np.random.SeedSequence(config.seed, spawn_key=(NS_INIT_E, reinit_counter))
            reinit_counter += 1
            fresh = nets.init_ensemble(config.k, ss_e, units=gen.weight.shape[1])
            ensemble.members = fresh.members
            adams = [nets.AdamState(lr=config.alpha2) for _ in range(config.k)]
            stream = batches_for(episode, 2)
            for n in range(config.t_gtrain):
                idx = next(stream)
                x, y_g = train_ds.vectors[idx], y_g_all[idx]
                f_out, _ = nets.generator_forward(gen, x)
                for member, adam in zip(ensemble.members, adams):
                    out, dcache = nets.discriminator_forward(member, f_out)
                    lg = losses.l_g_member(out, y_g)
                    _check_finite(lg.value, 2, episode, n)
                    mgrads, _ = nets.discriminator_backward(
                        member, dcache, losses.l_g_member_grad(out, y_g)
                    )
                    nets.adam_step(adam, member, mgrads)
                log.append(episode=episode, stage=2, iteration=n)
            _call_hook(stage_hook, "end", episode, 2, gen, cls, ensemble)

        _call_hook(stage_hook, "start", episode, 3, gen, cls, ensemble)
        adam_gen = nets.AdamState(lr=config.alpha3)
        adam_cls = nets.AdamState(lr=config.alpha3)
        stream = batches_for(episode, 3)
        for n in range(config.t_deb):
            idx = next(stream)
            x, y_id = train_ds.vectors[idx], y_id_all[idx]
            f_out, gcache = nets.generator_forward(gen, x)
            probs, ccache = nets.classifier_forward(cls, f_out)
            lc = losses.l_class(probs, y_id)
            member_outs = [nets.discriminator_forward(m, f_out) for m in ensemble.members]
            la_values = [losses.l_a(out) for out, _ in member_outs]
            ld, kstar = losses.l_deb(la_values)
            lbr = losses.l_br(lc, ld, config.lam)
            _check_finite(lbr.value, 3, episode, n)
            cgrads, d_f = nets.classifier_backward(
                cls, ccache, losses.l_class_grad(probs, y_id)
            )
            if config.lam > 0:
                out_k, dcache_k = member_outs[kstar]
                # Ensemble weights stay frozen; only the input gradient of
                # the strongest member's confusion term reaches the generator.
                _, d_f_deb = nets.discriminator_backward(
                    ensemble.members[kstar], dcache_k,
                    config.lam * losses.l_a_grad(out_k),
                )
                d_f = d_f + d_f_deb
            ggrads, _ = nets.generator_backward(gen, gcache, d_f)
            nets.adam_step(adam_gen, gen, ggrads)
            nets.adam_step(adam_cls, cls, cgrads)
            log.append(
                episode=episode, stage=3, iteration=n,
                l_class=lc.value, l_deb=ld.value, l_br=lbr.value, member_k=kstar,
            )
        _call_hook(stage_hook, "end", episode, 3, gen, cls, ensemble)

        k = episode % config.k
        member = ensemble.members[k]
        _call_hook(stage_hook, "start", episode, 4, gen, cls, ensemble)
        adam = nets.AdamState(lr=config.alpha2)
        stream = batches_for(episode, 4)
        f_val, _ = nets.generator_forward(gen, val_ds.vectors)  # generator frozen here
        for n in range(config.t_plat):
            val_out, _ = nets.discriminator_forward(member, f_val)
            acc = float(np.mean(np.argmax(val_out, axis=1) == val_attrs))
            log.append(episode=episode, stage=4, iteration=n, member_k=k, val_acc=acc)
            if acc > config.g_thresh:
                break
            idx = next(stream)
            x, y_g = train_ds.vectors[idx], y_g_all[idx]
            f_out, _ = nets.generator_forward(gen, x)
            out, dcache = nets.discriminator_forward(member, f_out)
            lg = losses.l_g_member(out, y_g)
            _check_finite(lg.value, 4, episode, n)
            mgrads, _ = nets.discriminator_backward(
                member, dcache, losses.l_g_member_grad(out, y_g)
            )
            nets.adam_step(adam, member, mgrads)
        _call_hook(stage_hook, "end", episode, 4, gen, cls, ensemble)

    return gen, cls, ensemble, log


def transform(gen, dataset, chunk=65536):
    """Re-embed every record through the generator; labels pass through."""
    if dataset.dim != gen.weight.shape[0]:
        raise ValidationError(
            "dataset dim %d does not match generator input dim %d"
            % (dataset.dim, gen.weight.shape[0])
        )
    pieces = []
    for start in range(0, dataset.n, chunk):
        block = dataset.vectors[start : start + chunk]
        out, _ = nets.generator_forward(gen, block)
        pieces.append(out)
    return DescriptorDataset(
        dataset.identities.copy(),
        dataset.attributes.copy(),
        np.concatenate(pieces) if pieces else np.empty((0, gen.weight.shape[1])),
    )
