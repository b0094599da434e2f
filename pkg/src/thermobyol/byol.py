"""Self-supervised pretraining: online/target network pair, EMA target
update, stop-gradient, cosine-distance loss, and the pretraining loop with
the component-ablation toggles.
"""

from dataclasses import dataclass, replace

import numpy as np

from .augment import AugmentationSpec, augment_pair
from .errors import ConfigInvalid, EmptyDataset, ShapeMismatch
from .models import ConvEncoder, EncoderConfig, MLPHead, MLPHeadConfig
from .supervised import Adam, AdamConfig
from .tensor import Tensor, backward, l2_normalize


@dataclass
class BYOLConfig:
    tau: float = 0.99
    symmetrize_loss: bool = False
    use_target_network: bool = True
    use_momentum: bool = True
    use_predictor: bool = True
    projection_dim: int = 256
    epochs: int = 20
    batch_size: int = 64
    learning_rate: float = 0.001

    def validate(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigInvalid(f"tau must lie in [0,1], got {self.tau}")
        if self.projection_dim < 1 or self.epochs < 1 or self.batch_size < 1:
            raise ConfigInvalid("projection_dim, epochs, batch_size must be positive")


@dataclass
class BYOLState:
    online_encoder: ConvEncoder
    online_projector: MLPHead
    predictor: MLPHead
    target_encoder: ConvEncoder
    target_projector: MLPHead
    config: BYOLConfig
    step_count: int = 0

    def online_parameters(self):
        params = (
            self.online_encoder.trainable_parameters()
            + self.online_projector.trainable_parameters()
        )
        if self.config.use_predictor:
            params += self.predictor.trainable_parameters()
        return params

    def target_parameters(self):
        return self.target_encoder.parameters() + self.target_projector.parameters()

    def _pairs(self):
        """(online, target) parameter pairs, running stats included."""
        online = dict(self.online_encoder.named_parameters())
        online.update(self.online_projector.named_parameters())
        target = dict(self.target_encoder.named_parameters())
        target.update(self.target_projector.named_parameters())
        out = []
        for oname, tname in zip(sorted(online), sorted(target)):
            out.append((online[oname], target[tname]))
        return out


def _copy_values(dst_module, src_module):
    dst = dst_module.named_parameters()
    src = src_module.named_parameters()
    for dname, sname in zip(sorted(dst), sorted(src)):
        dst[dname].assign(src[sname].data)


def init_byol(enc_cfg: EncoderConfig, mlp_cfg: MLPHeadConfig, cfg: BYOLConfig, rng) -> BYOLState:
    """Online networks initialized randomly; target starts as an exact copy
    of the online encoder+projector and carries no predictor."""
    cfg.validate()
    proj_cfg = replace(mlp_cfg, output_dim=cfg.projection_dim)
    pred_cfg = MLPHeadConfig(hidden_dim=mlp_cfg.hidden_dim, output_dim=cfg.projection_dim)
    enc = ConvEncoder(enc_cfg, rng, prefix="online.encoder")
    proj = MLPHead(proj_cfg, enc.feature_dim, rng, prefix="online.projector")
    pred = MLPHead(pred_cfg, cfg.projection_dim, rng, prefix="online.predictor")
    tenc = ConvEncoder(enc_cfg, rng, prefix="target.encoder", trainable=False)
    tproj = MLPHead(proj_cfg, enc.feature_dim, rng, prefix="target.projector", trainable=False)
    _copy_values(tenc, enc)
    _copy_values(tproj, proj)
    return BYOLState(enc, proj, pred, tenc, tproj, cfg)


def byol_loss(z_online: Tensor, z_target: Tensor) -> Tensor:
    """Mean over the batch of 2 - 2*cos(z_online, z_target); the target is
    treated as a constant (no gradient flows into it)."""
    zo = z_online.reshape(1, -1) if z_online.rank == 1 else z_online
    zt = z_target.reshape(1, -1) if z_target.rank == 1 else z_target
    if zo.shape != zt.shape:
        raise ShapeMismatch(f"projection shapes disagree: {zo.shape} vs {zt.shape}")
    zo_n = l2_normalize(zo)
    zt_n = l2_normalize(zt.detach())
    n = zo.shape[0]
    return 2.0 - (zo_n * zt_n).sum() * (2.0 / n)


def _online_branch(state: BYOLState, view: Tensor, mode: str) -> Tensor:
    z = state.online_projector.forward(state.online_encoder.forward(view, mode))
    if state.config.use_predictor:
        z = state.predictor.forward(z)
    return z


def _target_branch(state: BYOLState, view: Tensor) -> Tensor:
    # eval-mode batchnorm: the target is a frozen function within a step
    if state.config.use_target_network:
        z = state.target_projector.forward(state.target_encoder.forward(view, "eval"))
    else:
        z = state.online_projector.forward(state.online_encoder.forward(view, "eval"))
    return z.detach()


def forward_pair(state: BYOLState, v: Tensor, v_prime: Tensor, mode: str = "train") -> Tensor:
    """Loss of one augmented pair; symmetrized variant averages the
    role-swapped term when enabled."""
    if v.shape != v_prime.shape:
        raise ShapeMismatch(f"views disagree: {v.shape} vs {v_prime.shape}")
    loss = byol_loss(_online_branch(state, v, mode), _target_branch(state, v_prime))
    if state.config.symmetrize_loss:
        swapped = byol_loss(_online_branch(state, v_prime, mode), _target_branch(state, v))
        loss = (loss + swapped) * 0.5
    return loss


def ema_update(state: BYOLState) -> BYOLState:
    """xi <- tau*xi + (1-tau)*theta for every target scalar (running stats
    included); momentum ablation replaces this by a direct copy."""
    tau = state.config.tau if state.config.use_momentum else 0.0
    for online, target in state._pairs():
        target.assign(tau * target.data + (1.0 - tau) * online.data)
    state.step_count += 1
    return state


def pretrain(state: BYOLState, images, spec: AugmentationSpec, adam_cfg: AdamConfig, rng):
    """Run the BYOL loop over an unlabeled image collection.

    `images` is a list of [3,H,W] arrays; labels are never consulted.
    Returns (online encoder, per-epoch mean loss list).
    """
    if len(images) == 0:
        raise EmptyDataset("pretraining needs a non-empty image collection")
    cfg = state.config
    opt = Adam(state.online_parameters(), adam_cfg)
    history = []
    n = len(images)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            batch_idx = order[start : start + cfg.batch_size]
            views_a, views_b = [], []
            for i in batch_idx:
                va, vb = augment_pair(images[i], spec, rng)
                views_a.append(va)
                views_b.append(vb)
            v = Tensor(np.stack(views_a))
            v_prime = Tensor(np.stack(views_b))
            loss = forward_pair(state, v, v_prime, mode="train")
            grads = backward(loss)
            opt.step(grads)
            ema_update(state)
            losses.append(float(loss.data))
        history.append(float(np.mean(losses)))
    return state.online_encoder, history
