"""Synthetic two-domain transfer lab.

Two "languages" are linear projections of a shared latent Gaussian mixture:
x = A_domain z with z = mu_label + sigma * eps. The target mixing matrix is
an orthonormalized perturbation of the source one, so a single scalar gamma
controls the domain gap. A small tanh MLP is pretrained as an autoencoder on
unlabeled data from both domains, then fine-tuned (encoder + linear softmax
head) on source-only, target-only, and both-domain labeled data from the
same pretrained weights. The three checkpoints feed the interpolation grid.

Everything is deterministic given (config, seed): all randomness comes from
counter-based Philox streams keyed by (seed, purpose), so adding more seeds
or skipping stages never perturbs other streams. Weights live in float32
ParameterSets; forward/backward/optimizer arithmetic runs in float64.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .aggregate import aggregate_records, normalize_by_reference
from .grid import (
    EvaluationRecord,
    EvaluatorBinding,
    GridSpec,
    ResultCache,
    build_grid_1d,
    build_grid_2d,
    evaluate_grid_1d,
    evaluate_grid_2d,
)
from .tensor_store import ParameterSet, save_checkpoint

OBJECTIVES = ("mse_reconstruction", "cross_entropy")
ROLES = ("src", "tgt", "bilingual")


@dataclass(frozen=True)
class ToyTaskConfig:
    """Synthetic task and training protocol knobs."""

    n_classes: int = 5
    latent_dim: int = 8
    obs_dim: int = 32
    hidden_dim: int = 32
    shift_gamma: float = 0.3
    noise_sigma: float = 0.5
    n_unlabeled: int = 4000
    n_train: int = 2000
    n_dev: int = 1000
    pretrain_epochs: int = 20
    finetune_epochs: int = 10
    batch_size: int = 64
    learning_rate: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if self.latent_dim < 1 or self.obs_dim < 1 or self.hidden_dim < 1:
            raise ValueError("dimensions must be positive")
        if self.latent_dim > self.obs_dim:
            raise ValueError("latent_dim must be <= obs_dim")
        if self.shift_gamma < 0:
            raise ValueError("shift_gamma must be nonnegative")
        if self.noise_sigma <= 0:
            raise ValueError("noise_sigma must be positive")
        for name in ("n_unlabeled", "n_train", "n_dev", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.pretrain_epochs < 0 or self.finetune_epochs < 0:
            raise ValueError("epoch counts must be nonnegative")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @staticmethod
    def from_dict(d: Mapping) -> "ToyTaskConfig":
        known = {f.name for f in dataclasses.fields(ToyTaskConfig)}
        bad = set(d) - known
        if bad:
            raise ValueError(f"unknown config fields: {sorted(bad)}")
        return ToyTaskConfig(**d)

    @staticmethod
    def from_file(path) -> "ToyTaskConfig":
        return ToyTaskConfig.from_dict(json.loads(Path(path).read_text("utf-8")))


@dataclass(frozen=True)
class ToyDataset:
    """Inputs (n x D), integer labels in [0, K), and identifying tags."""

    inputs: np.ndarray
    labels: np.ndarray
    domain: str  # "src" or "tgt"
    split: str  # "unlabeled", "train" or "dev"

    def __len__(self):
        return self.inputs.shape[0]


def stream(seed: int, purpose: str) -> np.random.Generator:
    """Independent Philox stream keyed by (seed, purpose)."""
    digest = hashlib.sha256(f"interplab:{seed}:{purpose}".encode("utf-8")).digest()
    key = np.frombuffer(digest[:16], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def orthonormal_cols(m: np.ndarray) -> np.ndarray:
    """QR-orthonormalized columns with the nonnegative-diag(R) sign convention."""
    q, r = np.linalg.qr(np.asarray(m, dtype=np.float64))
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def _balanced_labels(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    counts = [n // k + (1 if c < n % k else 0) for c in range(k)]
    labels = np.repeat(np.arange(k, dtype=np.int64), counts)
    rng.shuffle(labels)
    return labels


def generate_task(cfg: ToyTaskConfig) -> dict[str, dict[str, ToyDataset]]:
    """Draw the full {src, tgt} x {unlabeled, train, dev} dataset family.

    Source and target share the latent draw (labels and noise) per index, so
    shift_gamma = 0 yields bit-identical domains. Deterministic given the
    config's seed.
    """
    rng = stream(cfg.seed, "data")
    k, d, big_d = cfg.n_classes, cfg.latent_dim, cfg.obs_dim
    mu = rng.standard_normal((k, d))
    a_src = orthonormal_cols(rng.standard_normal((big_d, d)))
    g = rng.standard_normal((big_d, d))
    if cfg.shift_gamma == 0.0:
        a_tgt = a_src.copy()
    else:
        a_tgt = orthonormal_cols(a_src + cfg.shift_gamma * g)

    out: dict[str, dict[str, ToyDataset]] = {"src": {}, "tgt": {}}
    for split, n in (("unlabeled", cfg.n_unlabeled), ("train", cfg.n_train), ("dev", cfg.n_dev)):
        labels = _balanced_labels(n, k, rng)
        eps = rng.standard_normal((n, d))
        z = mu[labels] + cfg.noise_sigma * eps
        for domain, a in (("src", a_src), ("tgt", a_tgt)):
            out[domain][split] = ToyDataset(
                inputs=z @ a.T, labels=labels.copy(), domain=domain, split=split
            )
    return out


def _arch(cfg: ToyTaskConfig) -> str:
    return f"mlp-D{cfg.obs_dim}-h{cfg.hidden_dim}-K{cfg.n_classes}"


def init_weights(cfg: ToyTaskConfig) -> ParameterSet:
    """Shared encoder + head initialization (1/sqrt(fan_in) Gaussian, zero biases)."""
    rng = stream(cfg.seed, "init")
    big_d, h, k = cfg.obs_dim, cfg.hidden_dim, cfg.n_classes
    tensors = {
        "encoder.w1": rng.standard_normal((big_d, h)) / np.sqrt(big_d),
        "encoder.b1": np.zeros(h),
        "encoder.w2": rng.standard_normal((h, h)) / np.sqrt(h),
        "encoder.b2": np.zeros(h),
        "head.w": rng.standard_normal((h, k)) / np.sqrt(h),
        "head.b": np.zeros(k),
    }
    meta = {"role": "init", "seed": str(cfg.seed), "arch": _arch(cfg)}
    return ParameterSet(tensors, meta)


def init_decoder_weights(cfg: ToyTaskConfig) -> dict[str, np.ndarray]:
    """Decoder tensors for autoencoder pretraining; drawn from their own stream."""
    rng = stream(cfg.seed, "init.decoder")
    h, big_d = cfg.hidden_dim, cfg.obs_dim
    return {
        "decoder.w": rng.standard_normal((h, big_d)) / np.sqrt(h),
        "decoder.b": np.zeros(big_d),
    }


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def forward(weights: ParameterSet, inputs) -> tuple[np.ndarray, dict]:
    """Run the MLP; returns (output, activation cache).

    With decoder tensors present the output is the reconstruction (n x D);
    otherwise it is the row-stochastic class-probability matrix (n x K).
    A single 1D input returns the matching single output row.
    """
    x = np.asarray(inputs, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    w1 = weights["encoder.w1"].astype(np.float64)
    if x.shape[1] != w1.shape[0]:
        raise ValueError(f"input dim {x.shape[1]} != encoder input dim {w1.shape[0]}")
    b1 = weights["encoder.b1"].astype(np.float64)
    w2 = weights["encoder.w2"].astype(np.float64)
    b2 = weights["encoder.b2"].astype(np.float64)
    h1 = np.tanh(x @ w1 + b1)
    h2 = np.tanh(h1 @ w2 + b2)
    cache = {"x": x, "h1": h1, "h2": h2}
    if "decoder.w" in weights:
        recon = h2 @ weights["decoder.w"].astype(np.float64) + weights["decoder.b"].astype(np.float64)
        cache["mode"] = "reconstruction"
        out = recon
    elif "head.w" in weights:
        logits = h2 @ weights["head.w"].astype(np.float64) + weights["head.b"].astype(np.float64)
        probs = _softmax(logits)
        cache["mode"] = "classification"
        cache["probs"] = probs
        out = probs
    else:
        raise ValueError("weights contain neither decoder.* nor head.* tensors")
    return (out[0] if single else out), cache


def compute_loss(weights: ParameterSet, inputs, targets, objective: str) -> float:
    """Mean objective over the batch; the quantity `backward` differentiates."""
    if objective not in OBJECTIVES:
        raise ValueError(f"objective must be one of {OBJECTIVES}, got {objective!r}")
    out, cache = forward(weights, np.atleast_2d(np.asarray(inputs, dtype=np.float64)))
    if objective == "mse_reconstruction":
        if cache["mode"] != "reconstruction":
            raise ValueError("mse_reconstruction needs decoder weights")
        t = np.asarray(targets, dtype=np.float64)
        return float(np.mean((out - t) ** 2))
    if cache["mode"] != "classification":
        raise ValueError("cross_entropy needs head weights")
    y = np.asarray(targets, dtype=np.int64)
    n = out.shape[0]
    return float(-np.mean(np.log(out[np.arange(n), y])))


def backward(weights: ParameterSet, inputs, targets, objective: str) -> ParameterSet:
    """Analytic gradients of the mean objective, same names/shapes as weights."""
    if objective not in OBJECTIVES:
        raise ValueError(f"objective must be one of {OBJECTIVES}, got {objective!r}")
    x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    out, cache = forward(weights, x)
    n = x.shape[0]
    h1, h2 = cache["h1"], cache["h2"]
    grads: dict[str, np.ndarray] = {}
    if objective == "mse_reconstruction":
        if cache["mode"] != "reconstruction":
            raise ValueError("mse_reconstruction needs decoder weights")
        t = np.asarray(targets, dtype=np.float64)
        d_out = 2.0 * (out - t) / out.size  # d(mean squared error)/d(recon)
        grads["decoder.w"] = h2.T @ d_out
        grads["decoder.b"] = d_out.sum(axis=0)
        d_h2 = d_out @ weights["decoder.w"].astype(np.float64).T
    else:
        if cache["mode"] != "classification":
            raise ValueError("cross_entropy needs head weights")
        y = np.asarray(targets, dtype=np.int64)
        d_logits = cache["probs"].copy()
        d_logits[np.arange(n), y] -= 1.0
        d_logits /= n
        grads["head.w"] = h2.T @ d_logits
        grads["head.b"] = d_logits.sum(axis=0)
        d_h2 = d_logits @ weights["head.w"].astype(np.float64).T
    d_z2 = d_h2 * (1.0 - h2**2)
    grads["encoder.w2"] = h1.T @ d_z2
    grads["encoder.b2"] = d_z2.sum(axis=0)
    d_h1 = d_z2 @ weights["encoder.w2"].astype(np.float64).T
    d_z1 = d_h1 * (1.0 - h1**2)
    grads["encoder.w1"] = x.T @ d_z1
    grads["encoder.b1"] = d_z1.sum(axis=0)
    return ParameterSet(grads)


@dataclass
class AdamState:
    """First/second moment accumulators, float64, keyed like the weights."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def init_adam_state(weights: ParameterSet) -> AdamState:
    return AdamState(
        m={n: np.zeros(weights[n].shape, dtype=np.float64) for n in weights.names()},
        v={n: np.zeros(weights[n].shape, dtype=np.float64) for n in weights.names()},
    )


def adam_step(
    weights: ParameterSet,
    grads: ParameterSet,
    state: AdamState,
    t: int,
    learning_rate: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[ParameterSet, AdamState]:
    """One bias-corrected Adam update; returns fresh weights and state."""
    if t < 1:
        raise ValueError(f"step index t must be >= 1, got {t}")
    new_w: dict[str, np.ndarray] = {}
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    for name in weights.names():
        g = grads[name].astype(np.float64)
        m = beta1 * state.m[name] + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        w = weights[name].astype(np.float64) - learning_rate * m_hat / (np.sqrt(v_hat) + eps)
        new_w[name] = w.astype(np.float32)
        new_m[name] = m
        new_v[name] = v
    return ParameterSet(new_w, weights.meta), AdamState(m=new_m, v=new_v)


def _train(
    weights: ParameterSet,
    inputs: np.ndarray,
    targets,
    objective: str,
    epochs: int,
    cfg: ToyTaskConfig,
    shuffle_purpose: str,
) -> ParameterSet:
    rng = stream(cfg.seed, shuffle_purpose)
    state = init_adam_state(weights)
    t = 0
    n = inputs.shape[0]
    target_arr = np.asarray(targets)
    for _ in range(epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            g = backward(weights, inputs[idx], target_arr[idx], objective)
            t += 1
            weights, state = adam_step(weights, g, state, t, cfg.learning_rate)
    return weights


def pretrain_autoencoder(
    init: ParameterSet,
    unlabeled_inputs: np.ndarray,
    cfg: ToyTaskConfig,
) -> ParameterSet:
    """Reconstruction pretraining of the encoder on mixed-domain inputs.

    A decoder is created internally and thrown away; the returned set is the
    trained encoder plus the untouched head from `init`. Zero epochs return
    tensors identical to `init`. Meta records the reconstruction MSE over the
    mixture before and after training.
    """
    inputs = np.asarray(unlabeled_inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[0] == 0:
        raise ValueError("unlabeled inputs must be a non-empty n x D matrix")
    enc = {n: init[n] for n in init.names() if n.startswith("encoder.")}
    auto = ParameterSet({**enc, **init_decoder_weights(cfg)})
    mse_initial = compute_loss(auto, inputs, inputs, "mse_reconstruction")
    auto = _train(auto, inputs, inputs, "mse_reconstruction",
                  cfg.pretrain_epochs, cfg, "shuffle.pretrain")
    mse_final = compute_loss(auto, inputs, inputs, "mse_reconstruction")
    tensors = {n: auto[n] for n in auto.names() if n.startswith("encoder.")}
    tensors.update({n: init[n] for n in init.names() if n.startswith("head.")})
    meta = dict(init.meta)
    meta["role"] = "pretrained"
    meta["pretrain_mse_initial"] = f"{mse_initial:.9g}"
    meta["pretrain_mse_final"] = f"{mse_final:.9g}"
    return ParameterSet(tensors, meta)


def finetune(
    pretrained: ParameterSet,
    train_sets: Sequence[ToyDataset],
    cfg: ToyTaskConfig,
    role: str,
) -> ParameterSet:
    """Cross-entropy fine-tuning of encoder + head from the shared pretrained set.

    For the bilingual role pass both domains' train sets; each epoch trains on
    the shuffled concatenation. Meta records the training role.
    """
    if role not in ROLES:
        raise ValueError(f"role must be one of {ROLES}, got {role!r}")
    if len(train_sets) == 0 or sum(len(ds) for ds in train_sets) == 0:
        raise ValueError("training data must be non-empty")
    inputs = np.concatenate([np.asarray(ds.inputs, dtype=np.float64) for ds in train_sets])
    labels = np.concatenate([np.asarray(ds.labels, dtype=np.int64) for ds in train_sets])
    meta = dict(pretrained.meta)
    meta["role"] = role
    weights = pretrained.with_meta(meta)
    return _train(weights, inputs, labels, "cross_entropy",
                  cfg.finetune_epochs, cfg, f"shuffle.finetune.{role}")


def evaluate_accuracy(weights: ParameterSet, dev: ToyDataset) -> float:
    """Fraction of argmax-correct predictions (ties go to the lowest class index)."""
    if len(dev) == 0:
        raise ValueError("dev set is empty")
    probs, _ = forward(weights, dev.inputs)
    preds = np.argmax(probs, axis=1)
    return float(np.mean(preds == dev.labels))


def encoder_variant_config(cfg: ToyTaskConfig, variant: str) -> ToyTaskConfig:
    """Exploratory small/large encoder variants for flatness comparisons."""
    if variant == "small":
        return dataclasses.replace(cfg, hidden_dim=16, pretrain_epochs=10)
    if variant == "large":
        return dataclasses.replace(cfg, hidden_dim=64, pretrain_epochs=40)
    raise ValueError(f"variant must be 'small' or 'large', got {variant!r}")


@dataclass
class ExperimentResult:
    """Everything one multi-seed run produces, ready for reporting."""

    config: ToyTaskConfig
    seeds: list[int]
    checkpoints: dict[int, dict[str, ParameterSet]]  # seed -> role -> weights
    records: list[EvaluationRecord]  # normalized
    aggregates: dict[str, list]  # "one_d:per_pair", "one_d:pooled", "two_d:pooled"


def run_transfer_experiment(
    cfg: ToyTaskConfig,
    n_seeds: int = 5,
    out_dir=None,
    cache_dir=None,
    grid_1d: GridSpec | None = None,
    grid_2d: GridSpec | None = None,
    progress: Callable[[str], None] | None = None,
) -> ExperimentResult:
    """Full protocol: generate, pretrain, fine-tune three roles per seed, then
    sweep both 1D paths (mono -> bilingual from either side) and the 2D plane,
    normalize by the matching bilingual run, and aggregate.

    Checkpoints are written to `<out_dir>/seed-<k>/{src,tgt,bi}.lscp` when an
    output directory is given.
    """
    if n_seeds < 1:
        raise ValueError("n_seeds must be >= 1")
    grid1 = build_grid_1d(grid_1d if grid_1d is not None else GridSpec())
    grid2 = build_grid_2d(grid_2d if grid_2d is not None else GridSpec(kind="two_d"))
    cache = ResultCache(cache_dir) if cache_dir is not None else None
    say = progress if progress is not None else lambda msg: None

    seeds = [cfg.seed + i for i in range(n_seeds)]
    checkpoints: dict[int, dict[str, ParameterSet]] = {}
    records: list[EvaluationRecord] = []
    for i, s in enumerate(seeds):
        cfg_s = dataclasses.replace(cfg, seed=s)
        say(f"seed {s} ({i + 1}/{n_seeds}): generating data")
        data = generate_task(cfg_s)
        init = init_weights(cfg_s)
        mixture = np.concatenate(
            [data["src"]["unlabeled"].inputs, data["tgt"]["unlabeled"].inputs]
        )
        say(f"seed {s} ({i + 1}/{n_seeds}): pretraining")
        pre = pretrain_autoencoder(init, mixture, cfg_s)
        say(f"seed {s} ({i + 1}/{n_seeds}): fine-tuning src/tgt/bilingual")
        theta_src = finetune(pre, [data["src"]["train"]], cfg_s, "src")
        theta_tgt = finetune(pre, [data["tgt"]["train"]], cfg_s, "tgt")
        theta_bi = finetune(pre, [data["src"]["train"], data["tgt"]["train"]], cfg_s, "bilingual")
        checkpoints[s] = {"src": theta_src, "tgt": theta_tgt, "bi": theta_bi}
        if out_dir is not None:
            seed_dir = Path(out_dir) / f"seed-{s}"
            seed_dir.mkdir(parents=True, exist_ok=True)
            for role, ps in checkpoints[s].items():
                save_checkpoint(ps, seed_dir / f"{role}.lscp")

        fwd = EvaluatorBinding(
            evaluate=evaluate_accuracy,
            source_dev=data["src"]["dev"],
            target_dev=data["tgt"]["dev"],
            metric="acc",
            source_id=f"seed{s}:src-dev",
            target_id=f"seed{s}:tgt-dev",
        )
        rev = EvaluatorBinding(
            evaluate=evaluate_accuracy,
            source_dev=data["tgt"]["dev"],
            target_dev=data["src"]["dev"],
            metric="acc",
            source_id=f"seed{s}:tgt-dev",
            target_id=f"seed{s}:src-dev",
        )
        say(f"seed {s} ({i + 1}/{n_seeds}): sweeping grids")
        records += evaluate_grid_1d(theta_src, theta_bi, grid1, fwd,
                                    pair=("src", "tgt"), task="toyclass", seed=s, cache=cache)
        records += evaluate_grid_1d(theta_tgt, theta_bi, grid1, rev,
                                    pair=("tgt", "src"), task="toyclass", seed=s, cache=cache)
        records += evaluate_grid_2d(theta_bi, theta_src, theta_tgt, grid2, fwd,
                                    pair=("src", "tgt"), task="toyclass", seed=s, cache=cache)

    normalized = normalize_by_reference(records)
    one_d = [r for r in normalized if r.kind == "one_d"]
    two_d = [r for r in normalized if r.kind == "two_d"]
    aggregates = {
        "one_d:per_pair": aggregate_records(one_d, "per_pair"),
        "one_d:pooled": aggregate_records(one_d, "pooled"),
        "two_d:pooled": aggregate_records(two_d, "pooled"),
    }
    return ExperimentResult(
        config=cfg, seeds=seeds, checkpoints=checkpoints,
        records=normalized, aggregates=aggregates,
    )
