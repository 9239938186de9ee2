"""Cycle-consistent counterfactual GAN on 18-dimensional feature vectors.

Two fully connected generators translate between the LOW and HIGH domains
(``gen_lh``, ``gen_hl``); two discriminators (``disc_l``, ``disc_h``) judge
realism per domain.  The generator objective is

    adversarial (least squares)
    + lambda_cycle * mean |G_hl(G_lh(x_low)) - x_low|  (+ the symmetric term)
    + lambda_counterfactual * CE(clf(G_lh(x_low)), HIGH)  (+ CE(clf(G_hl(x_high)), LOW))
    + lambda_identity * mean |G_lh(x_high) - x_high|  (+ symmetric; off by default)

with the classifier frozen.  Everything lives in the classifier's z-score space.
"""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .classifier import MlpModel
from .data import HIGH, LOW, N_FEATURES, Dataset, NormStats, check_feature_vector
from .errors import EngageError, TrainingDiverged
from .nn import MLP, Adam, cross_entropy, finite_difference_check

MODEL_VERSION = "cfgan-v1"


class Direction(str, enum.Enum):
    LOW_TO_HIGH = "LOW_TO_HIGH"
    HIGH_TO_LOW = "HIGH_TO_LOW"

    @classmethod
    def towards(cls, target_class: int) -> "Direction":
        return cls.LOW_TO_HIGH if target_class == HIGH else cls.HIGH_TO_LOW


@dataclass(frozen=True)
class GanConfig:
    lambda_cycle: float = 10.0
    lambda_counterfactual: float = 1.0
    lambda_identity: float = 0.0
    learning_rate: float = 2e-4
    beta1: float = 0.5
    epochs: int = 200
    batch_size: int = 64
    seed: int = 0
    gen_hidden: tuple[int, ...] = (64, 64)
    disc_hidden: tuple[int, ...] = (64,)
    residual: bool = True

    def __post_init__(self):
        object.__setattr__(self, "gen_hidden", tuple(int(h) for h in self.gen_hidden))
        object.__setattr__(self, "disc_hidden", tuple(int(h) for h in self.disc_hidden))
        checks = {
            "lambda_cycle": self.lambda_cycle >= 0,
            "lambda_counterfactual": self.lambda_counterfactual >= 0,
            "lambda_identity": self.lambda_identity >= 0,
            "learning_rate": self.learning_rate >= 0,
            "beta1": 0 <= self.beta1 < 1,
            "epochs": self.epochs >= 1,
            "batch_size": self.batch_size >= 1,
            "gen_hidden": all(h >= 1 for h in self.gen_hidden),
            "disc_hidden": all(h >= 1 for h in self.disc_hidden),
        }
        for name, ok in checks.items():
            if not ok:
                raise EngageError("invalid-config", f"GanConfig.{name} out of range: {getattr(self, name)!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gen_hidden"] = list(self.gen_hidden)
        d["disc_hidden"] = list(self.disc_hidden)
        return d


@dataclass(eq=False)
class CfGanModel:
    gen_lh: MLP
    gen_hl: MLP
    disc_l: MLP
    disc_h: MLP
    config: GanConfig
    norm_stats: NormStats
    loss_traces: dict[str, list[float]] = field(default_factory=dict)

    def generator(self, direction: Direction) -> MLP:
        return self.gen_lh if Direction(direction) is Direction.LOW_TO_HIGH else self.gen_hl

    def transform(self, Z: np.ndarray, direction: Direction) -> np.ndarray:
        """Batch translation of normalized vectors ``Z`` (n, 18)."""
        return self.generator(direction)(np.atleast_2d(Z))


def init_model(config: GanConfig, norm_stats: NormStats, rng: np.random.Generator | None = None) -> CfGanModel:
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    gsizes = [N_FEATURES, *config.gen_hidden, N_FEATURES]
    dsizes = [N_FEATURES, *config.disc_hidden, 1]
    return CfGanModel(
        gen_lh=MLP(gsizes, rng, residual=config.residual),
        gen_hl=MLP(gsizes, rng, residual=config.residual),
        disc_l=MLP(dsizes, rng),
        disc_h=MLP(dsizes, rng),
        config=config,
        norm_stats=norm_stats,
    )


def counterfactual(model, fv, direction: Direction = Direction.LOW_TO_HIGH) -> np.ndarray:
    """Translate one normalized vector; the input is never modified."""
    z = check_feature_vector(fv)
    return model.transform(z[None, :].copy(), Direction(direction))[0]


# -- objectives -------------------------------------------------------------------


def _l1(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    d = pred - target
    return float(np.abs(d).mean()), np.sign(d) / d.size


def _lsq(pred: np.ndarray, target: float) -> tuple[float, np.ndarray]:
    d = pred - target
    return float((d * d).mean()), 2.0 * d / d.size


def generator_objective(model: CfGanModel, clf: MlpModel, xl: np.ndarray, xh: np.ndarray):
    """Generator loss components and gradients w.r.t. both generators' parameters.

    Returns ``(losses, grads_lh, grads_hl)``; ``losses['total']`` is the
    weighted objective whose gradient is returned.
    """
    cfg = model.config
    G_lh, G_hl, D_l, D_h = model.gen_lh, model.gen_hl, model.disc_l, model.disc_h

    fake_h, c_fh = G_lh.forward(xl)
    rec_l, c_rl = G_hl.forward(fake_h)
    fake_l, c_fl = G_hl.forward(xh)
    rec_h, c_rh = G_lh.forward(fake_l)

    # adversarial
    dh, c_dh = D_h.forward(fake_h)
    dl, c_dl = D_l.forward(fake_l)
    adv_h, g_dh = _lsq(dh, 1.0)
    adv_l, g_dl = _lsq(dl, 1.0)
    g_fake_h, _ = D_h.backward(c_dh, g_dh)
    g_fake_l, _ = D_l.backward(c_dl, g_dl)

    # counterfactual: frozen classifier must assign the target class
    lam_cf = cfg.lambda_counterfactual
    logit_h, c_ch = clf.net.forward(fake_h)
    logit_l, c_cl = clf.net.forward(fake_l)
    cf_h, g_lh_logit = cross_entropy(logit_h, np.full(len(xl), HIGH))
    cf_l, g_hl_logit = cross_entropy(logit_l, np.full(len(xh), LOW))
    g_fake_h = g_fake_h + lam_cf * clf.net.backward(c_ch, g_lh_logit)[0]
    g_fake_l = g_fake_l + lam_cf * clf.net.backward(c_cl, g_hl_logit)[0]

    # cycle
    lam_c = cfg.lambda_cycle
    cyc_l, g_rec_l = _l1(rec_l, xl)
    cyc_h, g_rec_h = _l1(rec_h, xh)
    gx, grads_hl_cyc = G_hl.backward(c_rl, lam_c * g_rec_l)
    g_fake_h = g_fake_h + gx
    gx, grads_lh_cyc = G_lh.backward(c_rh, lam_c * g_rec_h)
    g_fake_l = g_fake_l + gx

    _, grads_lh = G_lh.backward(c_fh, g_fake_h)
    _, grads_hl = G_hl.backward(c_fl, g_fake_l)
    grads_lh = [a + b for a, b in zip(grads_lh, grads_lh_cyc)]
    grads_hl = [a + b for a, b in zip(grads_hl, grads_hl_cyc)]

    idt = 0.0
    if cfg.lambda_identity > 0:
        lam_i = cfg.lambda_identity
        id_h, c_ih = G_lh.forward(xh)
        id_l, c_il = G_hl.forward(xl)
        idt_h, g_ih = _l1(id_h, xh)
        idt_l, g_il = _l1(id_l, xl)
        idt = idt_h + idt_l
        grads_lh = [a + b for a, b in zip(grads_lh, G_lh.backward(c_ih, lam_i * g_ih)[1])]
        grads_hl = [a + b for a, b in zip(grads_hl, G_hl.backward(c_il, lam_i * g_il)[1])]

    losses = {
        "adversarial": adv_h + adv_l,
        "cycle": cyc_l + cyc_h,
        "counterfactual": cf_h + cf_l,
        "identity": idt,
    }
    losses["total"] = (
        losses["adversarial"] + lam_c * losses["cycle"] + lam_cf * losses["counterfactual"]
        + cfg.lambda_identity * idt
    )
    return losses, grads_lh, grads_hl


def discriminator_objective(model: CfGanModel, xl: np.ndarray, xh: np.ndarray,
                            fake_l: np.ndarray | None = None, fake_h: np.ndarray | None = None):
    """Least-squares discriminator loss ``0.5*(D(real)-1)^2 + 0.5*D(fake)^2`` per domain.

    Returns ``(loss, grads_disc_l, grads_disc_h)``.
    """
    if fake_h is None:
        fake_h = model.gen_lh(xl)
    if fake_l is None:
        fake_l = model.gen_hl(xh)
    total = 0.0
    out = []
    for D, real, fake in ((model.disc_l, xl, fake_l), (model.disc_h, xh, fake_h)):
        d_real, c_real = D.forward(real)
        d_fake, c_fake = D.forward(fake)
        l_real, g_real = _lsq(d_real, 1.0)
        l_fake, g_fake = _lsq(d_fake, 0.0)
        total += 0.5 * (l_real + l_fake)
        _, gr = D.backward(c_real, 0.5 * g_real)
        _, gf = D.backward(c_fake, 0.5 * g_fake)
        out.append([a + b for a, b in zip(gr, gf)])
    return total, out[0], out[1]


# -- training -------------------------------------------------------------------------

TRACE_KEYS = ("adversarial", "cycle", "counterfactual", "identity", "generator", "discriminator")


def _check_partition(ds: Dataset, clf: MlpModel, what: str) -> np.ndarray:
    if len(ds) == 0:
        raise EngageError("empty-dataset", f"{what} partition is empty")
    if ds.norm_stats is None or ds.norm_stats != clf.norm_stats:
        raise EngageError("invalid-input", f"{what} partition must be normalized with the classifier's NormStats")
    return ds.X


def train_gan(low_set: Dataset, high_set: Dataset, clf: MlpModel, config: GanConfig = GanConfig(),
              progress=None) -> CfGanModel:
    """Alternating updates: per batch one discriminator step, then one generator step.

    Batches pair the two domains by independent seeded shuffles; the smaller
    domain wraps around so every epoch sees each sample of the larger one once.
    ``loss_traces`` records the per-epoch mean of each loss component.
    """
    XL = _check_partition(low_set, clf, "low")
    XH = _check_partition(high_set, clf, "high")
    rng = np.random.default_rng(config.seed)
    model = init_model(config, clf.norm_stats, rng)
    gen_params = model.gen_lh.params + model.gen_hl.params
    disc_params = model.disc_l.params + model.disc_h.params
    opt_g = Adam(gen_params, lr=config.learning_rate, beta1=config.beta1)
    opt_d = Adam(disc_params, lr=config.learning_rate, beta1=config.beta1)
    traces: dict[str, list[float]] = {k: [] for k in TRACE_KEYS}

    n = max(len(XL), len(XH))
    n_batches = int(np.ceil(n / config.batch_size))
    for epoch in range(config.epochs):
        order_l = np.resize(rng.permutation(len(XL)), n)
        order_h = np.resize(rng.permutation(len(XH)), n)
        sums = dict.fromkeys(TRACE_KEYS, 0.0)
        for b in range(n_batches):
            sl = slice(b * config.batch_size, (b + 1) * config.batch_size)
            xl, xh = XL[order_l[sl]], XH[order_h[sl]]

            d_loss, g_dl, g_dh = discriminator_objective(model, xl, xh)
            opt_d.step(g_dl + g_dh)

            losses, g_lh, g_hl = generator_objective(model, clf, xl, xh)
            opt_g.step(g_lh + g_hl)

            for k in ("adversarial", "cycle", "counterfactual", "identity"):
                sums[k] += losses[k]
            sums["generator"] += losses["total"]
            sums["discriminator"] += d_loss
        for k in TRACE_KEYS:
            traces[k].append(sums[k] / n_batches)
        if not all(np.isfinite(traces[k][-1]) for k in TRACE_KEYS) or not all(
            np.all(np.isfinite(p)) for p in gen_params + disc_params
        ):
            for k in TRACE_KEYS:
                traces[k].pop()
            model.loss_traces = traces
            raise TrainingDiverged(epoch)
        if progress is not None:
            progress(epoch, {k: traces[k][-1] for k in TRACE_KEYS})
    model.loss_traces = traces
    return model


def grad_check(model: CfGanModel, clf: MlpModel, xl: np.ndarray, xh: np.ndarray, step: float = 1e-4,
               n_coords: int | None = 100, seed: int = 0) -> dict[str, float]:
    """Worst relative error per network: generators on the generator objective,
    discriminators on the discriminator objective (with fakes held fixed)."""
    probe = CfGanModel(model.gen_lh.copy(), model.gen_hl.copy(), model.disc_l.copy(), model.disc_h.copy(),
                       model.config, model.norm_stats)
    rng = np.random.default_rng(seed)
    _, g_lh, g_hl = generator_objective(probe, clf, xl, xh)
    gen_loss = lambda: generator_objective(probe, clf, xl, xh)[0]["total"]  # noqa: E731
    fake_h, fake_l = probe.gen_lh(xl), probe.gen_hl(xh)
    _, g_dl, g_dh = discriminator_objective(probe, xl, xh, fake_l=fake_l, fake_h=fake_h)
    disc_loss = lambda: discriminator_objective(probe, xl, xh, fake_l=fake_l, fake_h=fake_h)[0]  # noqa: E731
    return {
        "gen_lh": finite_difference_check(gen_loss, probe.gen_lh.params, g_lh, step, n_coords, rng),
        "gen_hl": finite_difference_check(gen_loss, probe.gen_hl.params, g_hl, step, n_coords, rng),
        "disc_l": finite_difference_check(disc_loss, probe.disc_l.params, g_dl, step, n_coords, rng),
        "disc_h": finite_difference_check(disc_loss, probe.disc_h.params, g_dh, step, n_coords, rng),
    }


# -- evaluation ----------------------------------------------------------------------


def flip_rate(model, clf: MlpModel, eval_set: Dataset | np.ndarray) -> float:
    """Fraction of samples whose counterfactual, taken towards the class opposite
    to the classifier's prediction, is classified differently.

    ``model`` only needs a ``transform(Z, direction)`` method, so stubs work.
    """
    Z = eval_set.X if isinstance(eval_set, Dataset) else np.atleast_2d(np.asarray(eval_set, dtype=np.float64))
    if len(Z) == 0:
        raise EngageError("empty-dataset", "flip rate of an empty evaluation set")
    pred = clf.predict_class(Z)
    cf = np.empty_like(Z)
    for cls in (LOW, HIGH):
        m = pred == cls
        if m.any():
            cf[m] = model.transform(Z[m], Direction.towards(1 - cls))
    return float(np.mean(clf.predict_class(cf) != pred))


def cycle_error(model: CfGanModel, Z_low: np.ndarray, Z_high: np.ndarray) -> float:
    """Mean per-sample L1 (summed over features) of translate-and-back reconstruction."""
    parts = []
    if len(Z_low):
        parts.append(np.abs(model.gen_hl(model.gen_lh(Z_low)) - Z_low).sum(axis=1))
    if len(Z_high):
        parts.append(np.abs(model.gen_lh(model.gen_hl(Z_high)) - Z_high).sum(axis=1))
    return float(np.concatenate(parts).mean())


def mean_interclass_l1(Z_low: np.ndarray, Z_high: np.ndarray) -> float:
    """Mean L1 distance over all (LOW, HIGH) pairs."""
    total = 0.0
    for z in Z_low:
        total += np.abs(Z_high - z).sum()
    return float(total / (len(Z_low) * len(Z_high)))


# -- persistence ------------------------------------------------------------------------


def model_to_dict(model: CfGanModel, extra: dict | None = None) -> dict:
    return {
        "version": MODEL_VERSION,
        "config": model.config.to_dict(),
        "norm_stats": model.norm_stats.to_dict(),
        "networks": {
            "gen_lh": model.gen_lh.to_dict(),
            "gen_hl": model.gen_hl.to_dict(),
            "disc_l": model.disc_l.to_dict(),
            "disc_h": model.disc_h.to_dict(),
        },
        "loss_traces": {k: [float(v) for v in vs] for k, vs in model.loss_traces.items()},
        "extra": extra or {},
    }


def model_from_dict(d: dict) -> CfGanModel:
    if d.get("version") != MODEL_VERSION:
        raise EngageError("invalid-file", f"expected model version {MODEL_VERSION!r}, got {d.get('version')!r}")
    try:
        nets = {k: MLP.from_dict(d["networks"][k]) for k in ("gen_lh", "gen_hl", "disc_l", "disc_h")}
        config = GanConfig(**d["config"])
    except (KeyError, TypeError) as exc:
        raise EngageError("invalid-file", f"malformed cfgan model: {exc}") from None
    for k in ("gen_lh", "gen_hl"):
        if nets[k].sizes[0] != N_FEATURES or nets[k].sizes[-1] != N_FEATURES:
            raise EngageError("invalid-file", f"{k} must map 18 -> 18")
    return CfGanModel(**nets, config=config, norm_stats=NormStats.from_dict(d["norm_stats"]),
                      loss_traces={k: list(v) for k, v in d.get("loss_traces", {}).items()})


def save_model(model: CfGanModel, path, extra: dict | None = None) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model, extra), sort_keys=True) + "\n", encoding="utf-8")


def load_model(path) -> CfGanModel:
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
