"""Absolute and relative pose regressors.

* :class:`AprModel` - observation -> pose; teacher and decoder for the PAE.
* :class:`ImageRprModel` - siamese encoder over (query, reference) observations.
* :class:`PaeRprModel` - query observation + PAE-encoded reference pose, concatenated.
* :class:`TransformerRprModel` - the same inputs fused by a pre-LN transformer
  encoder with two learned read-out tokens.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .nn import (
    MLP,
    Linear,
    Module,
    Parameter,
    ShapeError,
    Tensor,
    TransformerConfig,
    TransformerEncoder,
    as_tensor,
    concat,
    no_grad,
    relu,
    stack,
)
from .pae import LatentPair, PaeModel
from .pose_core import Pose, RelativePose, batch_pose_loss, quat_normalize
from .scene_sim import PairSet, SampleSet, derive_seed
from .training import TrainConfig, TrainHistory, fit

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModelConfig:
    obs_dim: int = 192
    encoder_sizes: tuple = (512, 512, 256)
    latent_dim: int = 256
    regressor_hidden: int = 256
    num_layers: int = 2
    num_heads: int = 4
    mlp_hidden: int = 2048
    dropout_rate: float = 0.1
    head_hidden: int = 256
    s_x_init: float = 0.0
    s_q_init: float = -3.0

    @property
    def transformer(self) -> TransformerConfig:
        return TransformerConfig(self.num_layers, self.num_heads, self.latent_dim,
                                 self.mlp_hidden, self.dropout_rate)

    @staticmethod
    def from_dict(d: dict) -> ModelConfig:
        d = dict(d)
        d["encoder_sizes"] = tuple(d["encoder_sizes"])
        return ModelConfig(**d)


class ObservationEncoder(Module):
    """Observation MLP followed by two ReLU heads giving translation/rotation latents."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.obs_dim = config.obs_dim
        self.backbone = MLP([config.obs_dim, *config.encoder_sizes], rng, final_activation=True)
        width = config.encoder_sizes[-1]
        self.head_x = Linear(width, config.latent_dim, rng)
        self.head_q = Linear(width, config.latent_dim, rng)

    def forward(self, obs) -> LatentPair:
        obs = as_tensor(obs)
        if obs.shape[-1] != self.obs_dim:
            raise ShapeError(f"observation length {obs.shape[-1]} != {self.obs_dim}")
        h = self.backbone(obs)
        return LatentPair(relu(self.head_x(h)), relu(self.head_q(h)))


class _Uncertain(Module):
    """Base for models carrying learned log-variance weights s_x, s_q."""

    kind = ""

    def _init_uncertainty(self, config: ModelConfig):
        self.s_x = Parameter(np.float64(config.s_x_init))
        self.s_q = Parameter(np.float64(config.s_q_init))

    def meta(self) -> dict:
        return {"config": asdict(self.config)}

    def _cast(self, x):
        return np.asarray(x, dtype=self.dtype)


class AprModel(_Uncertain):
    kind = "apr"

    def __init__(self, config: ModelConfig, seed: int = 0):
        super().__init__()
        self.config = config
        rng = np.random.default_rng(derive_seed(seed, "apr-init"))
        self.encoder = ObservationEncoder(config, rng)
        hid = config.regressor_hidden
        self.regressor_x = MLP([config.latent_dim, hid, hid, 3], rng)
        self.regressor_q = MLP([config.latent_dim, hid, hid, 4], rng)
        self._init_uncertainty(config)

    def latents(self, obs) -> LatentPair:
        return self.encoder(self._cast(obs) if not isinstance(obs, Tensor) else obs)

    def decode(self, z_x, z_q) -> tuple[Tensor, Tensor]:
        z_x, z_q = as_tensor(z_x), as_tensor(z_q)
        if z_x.shape[-1] != self.config.latent_dim or z_q.shape[-1] != self.config.latent_dim:
            raise ShapeError(f"latent width must be {self.config.latent_dim}")
        return self.regressor_x(z_x), self.regressor_q(z_q)

    def forward(self, obs):
        z = self.latents(obs)
        x, q = self.decode(z.z_x, z.z_q)
        return z, x, q

    def predict(self, obs) -> tuple[np.ndarray, np.ndarray]:
        """Batched positions and unit quaternions, float64."""
        with no_grad():
            _, x, q = self(np.atleast_2d(obs))
        return x.data.astype(np.float64), quat_normalize(q.data.astype(np.float64))


def apr_forward(model: AprModel, obs) -> tuple[LatentPair, Pose]:
    with no_grad():
        z, x, q = model(np.atleast_2d(obs))
    pose = Pose(x.data[0].astype(np.float64), quat_normalize(q.data[0].astype(np.float64)))
    return LatentPair(z.z_x.data[0].copy(), z.z_q.data[0].copy()), pose


def decode_latents(model: AprModel, latents: LatentPair) -> Pose:
    with no_grad():
        x, q = model.decode(np.atleast_2d(latents.z_x).astype(model.dtype),
                            np.atleast_2d(latents.z_q).astype(model.dtype))
    return Pose(x.data[0].astype(np.float64), quat_normalize(q.data[0].astype(np.float64)))


class ImageRprModel(_Uncertain):
    kind = "img"

    def __init__(self, config: ModelConfig, seed: int = 0):
        super().__init__()
        self.config = config
        rng = np.random.default_rng(derive_seed(seed, "rpr-img-init"))
        self.encoder = ObservationEncoder(config, rng)
        hid, c = config.regressor_hidden, config.latent_dim
        self.regressor_x = MLP([2 * c, hid, hid, 3], rng)
        self.regressor_q = MLP([2 * c, hid, hid, 4], rng)
        self._init_uncertainty(config)

    def forward(self, query, reference):
        query, reference = self._cast(query), self._cast(reference)
        if query.shape != reference.shape:
            raise ShapeError(f"query {query.shape} and reference {reference.shape} differ")
        zq = self.encoder(query)
        zr = self.encoder(reference)
        dx = self.regressor_x(concat([zq.z_x, zr.z_x], axis=-1))
        dq = self.regressor_q(concat([zq.z_q, zr.z_q], axis=-1))
        return dx, dq

    def predict(self, query, reference) -> tuple[np.ndarray, np.ndarray]:
        with no_grad():
            dx, dq = self(np.atleast_2d(query), np.atleast_2d(reference))
        return dx.data.astype(np.float64), quat_normalize(dq.data.astype(np.float64))


def _check_pae(pae: PaeModel, config: ModelConfig):
    if pae.config.latent_dim != config.latent_dim:
        raise ShapeError(f"PAE latent width {pae.config.latent_dim} != model width {config.latent_dim}")


class PaeRprModel(_Uncertain):
    kind = "pae"

    def __init__(self, config: ModelConfig, pae: PaeModel, seed: int = 0):
        super().__init__()
        _check_pae(pae, config)
        self.config = config
        rng = np.random.default_rng(derive_seed(seed, "rpr-pae-init"))
        self.encoder = ObservationEncoder(config, rng)
        self.pae = pae.freeze().eval()
        c, hid = config.latent_dim, config.regressor_hidden
        self.ref_head_x = Linear(c, c, rng)
        self.ref_head_q = Linear(c, c, rng)
        self.regressor_x = MLP([2 * c, hid, hid, 3], rng)
        self.regressor_q = MLP([2 * c, hid, hid, 4], rng)
        self._init_uncertainty(config)

    def forward(self, query, ref_positions, ref_orientations, scene_index):
        zq = self.encoder(self._cast(query))
        zp = self.pae(ref_positions, ref_orientations, scene_index)
        rx = relu(self.ref_head_x(zp.z_x))
        rq = relu(self.ref_head_q(zp.z_q))
        dx = self.regressor_x(concat([zq.z_x, rx], axis=-1))
        dq = self.regressor_q(concat([zq.z_q, rq], axis=-1))
        return dx, dq

    def predict(self, query, ref_positions, ref_orientations, scene_index):
        with no_grad():
            dx, dq = self(np.atleast_2d(query), ref_positions, ref_orientations, scene_index)
        return dx.data.astype(np.float64), quat_normalize(dq.data.astype(np.float64))


class TransformerRprModel(_Uncertain):
    """Sequence [z_x^img, z_q^img, z_x^pae, z_q^pae, t_trans, t_rot] through a
    pre-LN encoder; the two token outputs feed separate GELU heads.

    A learned per-slot embedding is added to the sequence so the encoder can
    tell image latents from pose latents.
    """

    kind = "tf"
    SEQUENCE_LENGTH = 6

    def __init__(self, config: ModelConfig, pae: PaeModel, seed: int = 0,
                 tokens=("t_trans", "t_rot")):
        super().__init__()
        if tuple(tokens) != ("t_trans", "t_rot"):
            raise ValueError("the transformer RPR needs exactly the t_trans and t_rot tokens")
        _check_pae(pae, config)
        self.config = config
        rng = np.random.default_rng(derive_seed(seed, "rpr-tf-init"))
        c = config.latent_dim
        self.encoder = ObservationEncoder(config, rng)
        self.pae = pae.freeze().eval()
        self.t_trans = Parameter(rng.normal(0.0, 0.02, size=c))
        self.t_rot = Parameter(rng.normal(0.0, 0.02, size=c))
        self.slot_embedding = Parameter(rng.normal(0.0, 0.02, size=(self.SEQUENCE_LENGTH, c)))
        self.transformer = TransformerEncoder(config.transformer, rng)
        self.head_trans = MLP([c, config.head_hidden, 3], rng, activation="gelu")
        self.head_rot = MLP([c, config.head_hidden, 4], rng, activation="gelu")
        self._init_uncertainty(config)

    def sequence(self, query, ref_positions, ref_orientations, scene_index) -> Tensor:
        zi = self.encoder(self._cast(query))
        zp = self.pae(ref_positions, ref_orientations, scene_index)
        b = zi.z_x.shape[0]
        ones = np.ones((b, 1), dtype=self.dtype)
        tokens = [zi.z_x, zi.z_q, zp.z_x, zp.z_q, ones * self.t_trans, ones * self.t_rot]
        seq = stack(tokens, axis=1)
        if seq.shape[1:] != (self.SEQUENCE_LENGTH, self.config.latent_dim):
            raise ShapeError(f"bad transformer input shape {seq.shape}")
        return seq

    def forward(self, query, ref_positions, ref_orientations, scene_index):
        seq = self.sequence(query, ref_positions, ref_orientations, scene_index) + self.slot_embedding
        out = self.transformer(seq)
        return self.head_trans(out[:, 4]), self.head_rot(out[:, 5])

    predict = PaeRprModel.predict


def image_rpr_forward(model: ImageRprModel, query, reference) -> RelativePose:
    dx, dq = model.predict(query, reference)
    return RelativePose(dx[0], dq[0])


def pae_rpr_forward(model: PaeRprModel | TransformerRprModel, query, reference_pose: Pose,
                    scene_index: int) -> RelativePose:
    dx, dq = model.predict(query, reference_pose.position[None], reference_pose.orientation[None],
                           [scene_index])
    return RelativePose(dx[0], dq[0])


MODEL_KINDS = {"apr": AprModel, "img": ImageRprModel, "pae": PaeRprModel, "tf": TransformerRprModel}


@dataclass
class TrainedModel:
    model: Module
    history: TrainHistory = field(default_factory=TrainHistory)


def train_regressor(kind: str, dataset: SampleSet, config: ModelConfig, train_config: TrainConfig,
                    pairs: PairSet | None = None, pae: PaeModel | None = None,
                    encoder_init: ObservationEncoder | None = None) -> TrainedModel:
    """Train one of the four regressors with the uncertainty-weighted pose loss.

    ``apr`` regresses absolute poses of ``dataset``; the RPR kinds regress the
    ground-truth relative poses in ``pairs`` (indices into ``dataset``).
    ``encoder_init`` copies trained observation-encoder weights (e.g. the APR's)
    into the new model before training; the copy is then trained independently.
    """
    dtype = np.dtype(train_config.dtype)
    seed = train_config.seed
    obs = dataset.observations.astype(dtype)
    if kind == "apr":
        if len(dataset) == 0:
            raise ValueError("train_regressor: empty dataset")
        model = AprModel(config, seed).astype(dtype)
        gt_x, gt_q = dataset.positions.astype(dtype), dataset.orientations.astype(dtype)

        def batch_loss(idx):
            _, x, q = model(obs[idx])
            return batch_pose_loss(x, q, gt_x[idx], gt_q[idx], model.s_x, model.s_q)

        n = len(dataset)
    elif kind in ("img", "pae", "tf"):
        if pairs is None or len(pairs) == 0:
            raise ValueError("train_regressor: empty pair set")
        if kind == "img":
            model = ImageRprModel(config, seed).astype(dtype)
        else:
            if pae is None:
                raise ValueError(f"kind {kind!r} needs a trained PAE")
            cls = PaeRprModel if kind == "pae" else TransformerRprModel
            model = cls(config, pae, seed).astype(dtype)
        qi, ri = pairs.query, pairs.reference
        gt_x, gt_q = pairs.dx.astype(dtype), pairs.dq.astype(dtype)

        def batch_loss(idx):
            if kind == "img":
                dx, dq = model(obs[qi[idx]], obs[ri[idx]])
            else:
                r = ri[idx]
                dx, dq = model(obs[qi[idx]], dataset.positions[r], dataset.orientations[r],
                               dataset.scene_index[r])
            return batch_pose_loss(dx, dq, gt_x[idx], gt_q[idx], model.s_x, model.s_q)

        n = len(pairs)
    else:
        raise ValueError(f"unknown regressor kind {kind!r}")
    if encoder_init is not None:
        model.encoder.load_state_dict(encoder_init.state_dict())
    history = fit(model, n, batch_loss, train_config, tag=f"rpr-{kind}" if kind != "apr" else "apr")
    return TrainedModel(model, history)
