"""Encoder-classifier: embeddings, guided-attention layers, pooling, training.

The encoder is a stack of post-norm layers (guided multi-head attention,
add & norm, position-wise feed-forward, add & norm) over learned token
embeddings plus fixed sinusoidal position encodings. Classification pools
the encoder output with a masked mean over valid positions and applies an
affine map. Training is plain Adam with a fixed learning rate; everything
is deterministic under a fixed seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .attention import HeadConfig, HeadWeights, multi_head
from .autodiff import Tensor
from .corpus import (
    Batch,
    Sentence,
    Vocabulary,
    build_vocab,
    label_index,
    make_batches,
    vocabulary_hash,
)
from .errors import ConfigError, DegenerateRowError, TrainingDivergedError
from .masks import GUIDED_ROLES

DEFAULT_LAYER_GRID = (2, 4, 6, 8)
DEFAULT_EXTRA_HEAD_GRID = (1, 3)


@dataclass(frozen=True)
class ModelConfig:
    """Hyperparameters; ``guided_roles`` lists the role of each guided head."""

    layers: int = 2
    guided_roles: tuple[str, ...] = GUIDED_ROLES
    extra_regular_heads: int = 1
    d_model: int = 48
    ff_width: int = 96
    dropout: float = 0.1
    learning_rate: float = 1e-3
    epochs: int = 10
    seed: int = 0
    max_len: int = 32
    num_classes: int = 2
    batch_size: int = 32

    @property
    def heads(self) -> int:
        return len(self.guided_roles) + self.extra_regular_heads

    @property
    def guided_heads(self) -> int:
        return len(self.guided_roles)

    def validate(self) -> None:
        if self.layers < 0:
            raise ConfigError(f"layers must be >= 0, got {self.layers}")
        if self.extra_regular_heads < 0:
            raise ConfigError(f"extra_regular_heads must be >= 0, got {self.extra_regular_heads}")
        if self.heads < 1:
            raise ConfigError("model needs at least one attention head")
        if self.d_model % self.heads != 0:
            raise ConfigError(f"d_model {self.d_model} not divisible by {self.heads} heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.learning_rate < 0.0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.max_len < 1 or self.num_classes < 2 or self.batch_size < 1:
            raise ConfigError("max_len, num_classes and batch_size must be positive (classes >= 2)")
        HeadConfig(self.d_model, self.heads, self.guided_roles)  # role/shape validation

    def head_config(self) -> HeadConfig:
        return HeadConfig(self.d_model, self.heads, self.guided_roles)

    def mask_roles(self) -> tuple[str, ...]:
        """Distinct roles whose masks a batch must carry."""
        return tuple(dict.fromkeys(self.guided_roles))

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["guided_roles"] = list(self.guided_roles)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(d)
        if "guided_roles" in kwargs:
            kwargs["guided_roles"] = tuple(kwargs["guided_roles"])
        return cls(**kwargs)


def format_config(cfg: ModelConfig) -> str:
    """Render the human-editable ``key = value`` config file."""
    lines = []
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if f.name == "guided_roles":
            value = ", ".join(value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def parse_config(text: str) -> ModelConfig:
    """Parse the ``key = value`` config format (``#`` starts a comment)."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = stripped.partition("=")
        raw[key.strip()] = value.strip()
    return config_from_strings(raw)


def config_from_strings(raw: dict[str, str]) -> ModelConfig:
    """Build a config from string values, e.g. parsed files or CLI overrides."""
    typed: dict[str, object] = {}
    by_name = {f.name: f for f in fields(ModelConfig)}
    for key, value in raw.items():
        if key not in by_name:
            raise ConfigError(f"unknown config key {key!r}")
        if key == "guided_roles":
            typed[key] = tuple(r.strip() for r in value.split(",") if r.strip()) if value else ()
        elif by_name[key].type in ("int", int):
            typed[key] = int(value)
        elif by_name[key].type in ("float", float):
            typed[key] = float(value)
        else:
            typed[key] = value
    return ModelConfig(**typed)


# ---------------------------------------------------------------------------
# Parameters and forward pass
# ---------------------------------------------------------------------------


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    return rng.normal(0.0, math.sqrt(2.0 / (fan_in + fan_out)), size=(fan_in, fan_out))


def init_params(cfg: ModelConfig, vocab_size: int, rng: np.random.Generator) -> dict[str, Tensor]:
    """Named parameter tensors in a fixed order (fixed RNG consumption)."""
    d, dk, h = cfg.d_model, cfg.d_model // cfg.heads, cfg.heads
    params: dict[str, Tensor] = {}

    def add(name, data):
        params[name] = ad.parameter(data, name)

    add("embed.token", rng.normal(0.0, 1.0 / math.sqrt(d), size=(vocab_size, d)))
    for i in range(cfg.layers):
        for head in range(h):
            add(f"layer{i}.head{head}.wq", _xavier(rng, d, dk))
            add(f"layer{i}.head{head}.wk", _xavier(rng, d, dk))
            add(f"layer{i}.head{head}.wv", _xavier(rng, d, dk))
        add(f"layer{i}.attn.wo", _xavier(rng, h * dk, d))
        add(f"layer{i}.norm1.gain", np.ones(d))
        add(f"layer{i}.norm1.bias", np.zeros(d))
        add(f"layer{i}.ff.w1", _xavier(rng, d, cfg.ff_width))
        add(f"layer{i}.ff.b1", np.zeros(cfg.ff_width))
        add(f"layer{i}.ff.w2", _xavier(rng, cfg.ff_width, d))
        add(f"layer{i}.ff.b2", np.zeros(d))
        add(f"layer{i}.norm2.gain", np.ones(d))
        add(f"layer{i}.norm2.bias", np.zeros(d))
    add("classifier.w", _xavier(rng, d, cfg.num_classes))
    add("classifier.b", np.zeros(cfg.num_classes))
    return params


def layer_weights(params: dict[str, Tensor], layer: int, heads: int) -> HeadWeights:
    return HeadWeights(
        wq=[params[f"layer{layer}.head{h}.wq"] for h in range(heads)],
        wk=[params[f"layer{layer}.head{h}.wk"] for h in range(heads)],
        wv=[params[f"layer{layer}.head{h}.wv"] for h in range(heads)],
        wo=params[f"layer{layer}.attn.wo"],
    )


def sinusoidal_encoding(n: int, d_model: int) -> np.ndarray:
    """Fixed sin/cos position encoding: sin on even dims, cos on odd dims."""
    positions = np.arange(n)[:, None]
    dims = np.arange(d_model)[None, :]
    angles = positions / np.power(10000.0, (2 * (dims // 2)) / d_model)
    enc = np.empty((n, d_model))
    enc[:, 0::2] = np.sin(angles[:, 0::2])
    enc[:, 1::2] = np.cos(angles[:, 1::2])
    return enc


def embed(batch: Batch, params: dict[str, Tensor], cfg: ModelConfig) -> Tensor:
    """Scaled token embeddings plus sinusoidal position encodings."""
    tok = ad.embedding(params["embed.token"], batch.token_ids)
    scaled = ad.mul(tok, math.sqrt(cfg.d_model))
    return ad.add(scaled, Tensor(sinusoidal_encoding(batch.token_ids.shape[1], cfg.d_model)))


def encoder_forward(
    x: Tensor,
    batch: Batch,
    params: dict[str, Tensor],
    cfg: ModelConfig,
    rng: np.random.Generator | None = None,
    training: bool = False,
) -> Tensor:
    """Apply the full encoder stack; ``layers = 0`` passes the input through."""
    head_cfg = cfg.head_config()
    rate = cfg.dropout if training else 0.0
    for i in range(cfg.layers):
        attn_out, _ = multi_head(
            x,
            layer_weights(params, i, cfg.heads),
            head_cfg,
            batch.role_masks,
            batch.pad_mask,
            dropout_rate=rate,
            rng=rng,
        )
        x = ad.layer_norm(
            ad.add(x, attn_out), params[f"layer{i}.norm1.gain"], params[f"layer{i}.norm1.bias"]
        )
        hidden = ad.relu(ad.add(ad.matmul(x, params[f"layer{i}.ff.w1"]), params[f"layer{i}.ff.b1"]))
        if rate > 0.0:
            hidden = ad.dropout(hidden, rate, rng)
        ff_out = ad.add(ad.matmul(hidden, params[f"layer{i}.ff.w2"]), params[f"layer{i}.ff.b2"])
        x = ad.layer_norm(
            ad.add(x, ff_out), params[f"layer{i}.norm2.gain"], params[f"layer{i}.norm2.bias"]
        )
    return x


def classify(encoded: Tensor, lengths: np.ndarray, params: dict[str, Tensor]) -> Tensor:
    """Masked mean over valid positions, then affine map to class scores."""
    n = encoded.shape[-2]
    valid = (np.arange(n)[None, :] < np.asarray(lengths)[:, None]).astype(np.float64)
    pooled = ad.masked_mean(encoded, valid)
    return ad.add(ad.matmul(pooled, params["classifier.w"]), params["classifier.b"])


def forward_batch(
    batch: Batch,
    params: dict[str, Tensor],
    cfg: ModelConfig,
    rng: np.random.Generator | None = None,
    training: bool = False,
) -> Tensor:
    x = embed(batch, params, cfg)
    encoded = encoder_forward(x, batch, params, cfg, rng=rng, training=training)
    return classify(encoded, batch.lengths, params)


# ---------------------------------------------------------------------------
# Optimization
# ---------------------------------------------------------------------------


class Adam:
    """Adam with a fixed learning rate and bias correction."""

    def __init__(self, params: dict[str, Tensor], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * (g * g)
            m_hat = self.m[name] / (1 - b1**self.t)
            v_hat = self.v[name] / (1 - b2**self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# ---------------------------------------------------------------------------
# Training and evaluation
# ---------------------------------------------------------------------------


@dataclass
class Checkpoint:
    """Trained model state: config, named arrays, vocabulary, class names."""

    config: ModelConfig
    params: dict[str, np.ndarray]
    vocab: Vocabulary
    class_names: list[str]
    metadata: dict = field(default_factory=dict)

    def param_tensors(self) -> dict[str, Tensor]:
        return {name: Tensor(data) for name, data in self.params.items()}


@dataclass
class EvalMetrics:
    accuracy: float  # percent
    loss: float
    correct: int
    total: int


def diagnose_nonfinite(batch: Batch, params: dict[str, Tensor], cfg: ModelConfig) -> str:
    """Name the first non-finite tensor: parameters, then a staged forward re-run.

    The re-run is dropout-free, so a divergence that only materializes under
    a particular dropout draw falls through to the generic ``loss`` answer.
    """
    for name, p in params.items():
        if not np.all(np.isfinite(p.data)):
            return name
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            return f"grad({name})"

    def bad(t: Tensor) -> bool:
        return not np.all(np.isfinite(t.data))

    stage = "embed.output"
    try:
        x = embed(batch, params, cfg)
        if bad(x):
            return stage
        head_cfg = cfg.head_config()
        for i in range(cfg.layers):
            stage = f"layer{i}.attention.output"
            attn_out, _ = multi_head(
                x, layer_weights(params, i, cfg.heads), head_cfg, batch.role_masks, batch.pad_mask
            )
            if bad(attn_out):
                return stage
            stage = f"layer{i}.norm1.output"
            x = ad.layer_norm(
                ad.add(x, attn_out), params[f"layer{i}.norm1.gain"], params[f"layer{i}.norm1.bias"]
            )
            if bad(x):
                return stage
            stage = f"layer{i}.ff.output"
            hidden = ad.relu(
                ad.add(ad.matmul(x, params[f"layer{i}.ff.w1"]), params[f"layer{i}.ff.b1"])
            )
            ff_out = ad.add(ad.matmul(hidden, params[f"layer{i}.ff.w2"]), params[f"layer{i}.ff.b2"])
            if bad(ff_out):
                return stage
            stage = f"layer{i}.norm2.output"
            x = ad.layer_norm(
                ad.add(x, ff_out), params[f"layer{i}.norm2.gain"], params[f"layer{i}.norm2.bias"]
            )
            if bad(x):
                return stage
        stage = "classifier.logits"
        logits = classify(x, batch.lengths, params)
        if bad(logits):
            return stage
    except DegenerateRowError:
        return stage
    return "loss"


def train(
    cfg: ModelConfig,
    train_sentences: list[Sentence],
    dev_sentences: list[Sentence],
    vocab: Vocabulary | None = None,
) -> Checkpoint:
    """Train with Adam on cross-entropy; keep the best-dev-accuracy epoch.

    Fully deterministic under ``cfg.seed``: one RNG stream drives parameter
    initialization and dropout, a second (derived from the same seed) drives
    the batch shuffle.
    """
    cfg.validate()
    if not train_sentences or not dev_sentences:
        raise ConfigError("train and dev splits must be non-empty")
    if vocab is None:
        vocab = build_vocab(train_sentences)
    classes = label_index(train_sentences)
    if not classes:
        raise ConfigError("training data carries no labels")
    if any(s.label is None for s in train_sentences):
        raise ConfigError("every training sentence must carry a label")
    if len(classes) > cfg.num_classes:
        raise ConfigError(f"{len(classes)} labels exceed num_classes={cfg.num_classes}")
    for s in dev_sentences:
        if s.label is not None and s.label not in classes:
            raise ConfigError(f"dev label {s.label!r} unseen in training data")

    roles = cfg.mask_roles()
    train_batches = make_batches(
        train_sentences, vocab, cfg.batch_size, cfg.max_len, roles,
        seed=cfg.seed, shuffle=True, labels=classes,
    )
    dev_batches = make_batches(
        dev_sentences, vocab, cfg.batch_size, cfg.max_len, roles,
        seed=cfg.seed, shuffle=False, labels=classes,
    )

    rng = np.random.default_rng(cfg.seed)
    params = init_params(cfg, len(vocab), rng)
    optimizer = Adam(params, cfg.learning_rate)

    history: list[dict] = []
    best_acc, best_epoch, best_params = -1.0, -1, None
    for epoch in range(1, cfg.epochs + 1):
        total_loss, total_examples = 0.0, 0
        for batch in train_batches:
            ad.zero_grads(params)
            try:
                logits = forward_batch(batch, params, cfg, rng=rng, training=True)
                loss = ad.cross_entropy(logits, batch.labels)
            except DegenerateRowError:
                # batch masks are feasible by construction, so this is numeric blow-up
                raise TrainingDivergedError(diagnose_nonfinite(batch, params, cfg)) from None
            if not np.isfinite(loss.data):
                raise TrainingDivergedError(diagnose_nonfinite(batch, params, cfg))
            ad.backward(loss, params)
            optimizer.step()
            total_loss += loss.item() * batch.size
            total_examples += batch.size
        dev = _evaluate_batches(dev_batches, params, cfg)
        history.append(
            {
                "epoch": epoch,
                "train_loss": total_loss / total_examples,
                "dev_loss": dev.loss,
                "dev_acc": dev.accuracy,
            }
        )
        if dev.accuracy > best_acc:
            best_acc, best_epoch = dev.accuracy, epoch
            best_params = {name: p.data.copy() for name, p in params.items()}

    class_names = [name for name, _ in sorted(classes.items(), key=lambda kv: kv[1])]
    return Checkpoint(
        config=cfg,
        params=best_params,
        vocab=vocab,
        class_names=class_names,
        metadata={
            "seed": cfg.seed,
            "best_epoch": best_epoch,
            "history": history,
            "vocab_hash": vocabulary_hash(vocab),
        },
    )


def _evaluate_batches(batches: list[Batch], params: dict[str, Tensor], cfg: ModelConfig) -> EvalMetrics:
    total_loss, correct, total = 0.0, 0, 0
    for batch in batches:
        logits = forward_batch(batch, params, cfg, training=False)
        labeled = batch.labels >= 0
        if not np.any(labeled):
            continue
        loss = ad.cross_entropy(Tensor(logits.data[labeled]), batch.labels[labeled])
        predictions = logits.data[labeled].argmax(axis=1)
        correct += int((predictions == batch.labels[labeled]).sum())
        count = int(labeled.sum())
        total += count
        total_loss += loss.item() * count
    if total == 0:
        raise ConfigError("evaluation data carries no labels")
    return EvalMetrics(accuracy=100.0 * correct / total, loss=total_loss / total, correct=correct, total=total)


def evaluate(ckpt: Checkpoint, sentences: list[Sentence]) -> EvalMetrics:
    """Accuracy (%) and mean loss of a checkpoint on labeled sentences."""
    cfg = ckpt.config
    recorded = ckpt.metadata.get("vocab_hash")
    if recorded is not None and vocabulary_hash(ckpt.vocab) != recorded:
        raise ConfigError("vocabulary hash mismatch: checkpoint vocabulary differs from training")
    classes = {name: i for i, name in enumerate(ckpt.class_names)}
    for s in sentences:
        if s.label is not None and s.label not in classes:
            raise ConfigError(f"label {s.label!r} unknown to this checkpoint")
    batches = make_batches(
        sentences, ckpt.vocab, cfg.batch_size, cfg.max_len, cfg.mask_roles(),
        seed=cfg.seed, shuffle=False, labels=classes,
    )
    return _evaluate_batches(batches, ckpt.param_tensors(), cfg)
