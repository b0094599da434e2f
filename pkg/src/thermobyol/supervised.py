"""Adam optimizer, supervised fine-tuning with early stopping, prediction."""

from dataclasses import dataclass

import numpy as np

from .augment import apply_affine, sample_params
from .errors import ConfigInvalid, EmptyDataset, MissingGradient
from .layers import softmax, sparse_cross_entropy
from .tensor import Tensor, backward


@dataclass
class AdamConfig:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def validate(self):
        if self.learning_rate <= 0 or self.epsilon <= 0:
            raise ConfigInvalid("learning_rate and epsilon must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigInvalid("betas must lie in [0,1)")


@dataclass
class TrainConfig:
    max_epochs: int = 100
    batch_size: int = 64
    early_stop_patience: int = 10
    freeze_encoder: bool = False
    augment_training: bool = True

    def validate(self):
        if self.early_stop_patience < 1 or self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigInvalid("patience, batch_size, max_epochs must be positive")


class Adam:
    """Standard Adam with bias correction over a fixed parameter list."""

    def __init__(self, params, cfg: AdamConfig = None):
        self.cfg = cfg or AdamConfig()
        self.cfg.validate()
        self.params = list(params)
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, grads):
        """Apply one update from a {Parameter: gradient} map."""
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        for i, p in enumerate(self.params):
            g = grads.get(p)
            if g is None:
                raise MissingGradient(f"no gradient for {p.name}")
            g = np.asarray(g, dtype=p.data.dtype)
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            p.assign(p.data - c.learning_rate * m_hat / (np.sqrt(v_hat) + c.epsilon))


def adam_step(params, grads, opt: Adam):
    """Functional wrapper kept for symmetry with the rest of the API."""
    opt.step(grads)
    return params, opt


def _stack_pixels(samples):
    return np.stack([s.pixels for s in samples])


def _batch_forward(encoder, head, pixels, mode):
    feats = encoder.forward(Tensor(pixels), mode)
    return head.forward(feats)


def evaluate_classifier(encoder, head, samples, batch_size=64):
    """Mean cross-entropy and accuracy on a labeled sample list, eval mode."""
    losses, correct = [], 0
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        labels = np.array([s.label for s in chunk])
        logits = _batch_forward(encoder, head, _stack_pixels(chunk), "eval")
        losses.append(float(sparse_cross_entropy(logits, labels).data) * len(chunk))
        correct += int((logits.data.argmax(axis=1) == labels).sum())
    n = len(samples)
    return sum(losses) / n, correct / n


def train_classifier(encoder, head, train_set, val_set, tcfg: TrainConfig,
                     acfg: AdamConfig, spec, rng):
    """Fine-tune encoder+head on labeled samples with best-epoch
    checkpointing on validation loss.

    Returns ((encoder, head), history) where history rows are
    (epoch, train_loss, val_loss, val_accuracy). The returned parameters are
    the best-validation-loss snapshot.
    """
    tcfg.validate()
    if not train_set or not val_set:
        raise EmptyDataset("train and validation sets must be non-empty")
    params = list(head.trainable_parameters())
    if not tcfg.freeze_encoder:
        params += encoder.trainable_parameters()
    opt = Adam(params, acfg)
    enc_mode = "eval" if tcfg.freeze_encoder else "train"

    def snapshot():
        state = {}
        for mod in (encoder, head):
            for name, p in mod.named_parameters().items():
                state[name] = p.data.copy()
        return state

    def restore(state):
        for mod in (encoder, head):
            for name, p in mod.named_parameters().items():
                p.assign(state[name])

    best = {"loss": np.inf, "state": snapshot(), "epoch": 0}
    history = []
    since_improve = 0
    n = len(train_set)
    for epoch in range(1, tcfg.max_epochs + 1):
        order = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, tcfg.batch_size):
            chunk = [train_set[i] for i in order[start : start + tcfg.batch_size]]
            labels = np.array([s.label for s in chunk])
            if spec is not None and tcfg.augment_training:
                pixels = np.stack(
                    [apply_affine(s.pixels, sample_params(spec, rng)) for s in chunk]
                )
            else:
                pixels = _stack_pixels(chunk)
            logits = _batch_forward(encoder, head, pixels, enc_mode)
            loss = sparse_cross_entropy(logits, labels)
            grads = backward(loss)
            opt.step(grads)
            epoch_losses.append(float(loss.data) * len(chunk))
        train_loss = sum(epoch_losses) / n
        val_loss, val_acc = evaluate_classifier(encoder, head, val_set, tcfg.batch_size)
        history.append((epoch, train_loss, val_loss, val_acc))
        if val_loss < best["loss"]:
            best = {"loss": val_loss, "state": snapshot(), "epoch": epoch}
            since_improve = 0
        else:
            since_improve += 1
            if since_improve >= tcfg.early_stop_patience:
                break
    restore(best["state"])
    return (encoder, head), history


def predict(encoder, head, pixels, batch_size=64):
    """Class probabilities and argmax labels for a [N,3,H,W] batch."""
    probs = []
    for start in range(0, len(pixels), batch_size):
        logits = _batch_forward(encoder, head, pixels[start : start + batch_size], "eval")
        probs.append(softmax(logits).data)
    probs = np.concatenate(probs)
    return probs, probs.argmax(axis=1)
