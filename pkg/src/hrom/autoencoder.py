"""Nonlinear manifold chart: small dense autoencoder on reduced coordinates.

The chart maps latent vectors z through the decoder net to reduced
coordinates and then through the weighted basis to full states; the encoder
runs the same pipeline backwards. Training is plain minibatch Adam on the
mean-squared reconstruction error of the reduced coordinates, seeded and
fully deterministic.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DataError, PreconditionError, TrainingError
from .snapshots import _relative_errors, filter_state

MODEL_MAGIC = b"HROMAE01"

_ACT_CODES = {"linear": 0, "elu": 1}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}


def pack_layers(layers):
    """Flatten [(W, b, act), ...] into kernel-ready (flat, dims, acts)."""
    dims = [layers[0][0].shape[1]]
    acts = []
    chunks = []
    for w, b, act in layers:
        if w.shape[0] != b.shape[0]:
            raise PreconditionError("bias length must match weight rows")
        if w.shape[1] != dims[-1]:
            raise PreconditionError("layer dimensions do not chain")
        dims.append(w.shape[0])
        acts.append(_ACT_CODES[act])
        chunks.append(np.ascontiguousarray(w, dtype=np.float64).ravel())
        chunks.append(np.asarray(b, dtype=np.float64))
    return (np.concatenate(chunks), np.asarray(dims, dtype=np.int64),
            np.asarray(acts, dtype=np.int64))


@dataclass
class AutoencoderModel:
    encoder: list                  # [(W, b, activation), ...]
    decoder: list
    _packs: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not np.isfinite(np.concatenate(
                [w.ravel() for w, _, _ in self.encoder + self.decoder])).all():
            raise DataError("autoencoder weights contain non-finite entries")

    @property
    def filtered_dim(self):
        return self.encoder[0][0].shape[1]

    @property
    def latent_dim(self):
        return self.encoder[-1][0].shape[0]

    def _pack(self, which):
        if which not in self._packs:
            layers = self.encoder if which == "enc" else self.decoder
            self._packs[which] = pack_layers(layers)
        return self._packs[which]

    @property
    def encoder_pack(self):
        return self._pack("enc")

    @property
    def decoder_pack(self):
        return self._pack("dec")

    def encode_coords(self, y):
        flat, dims, acts = self.encoder_pack
        return kernels.mlp_forward(flat, dims, acts, np.asarray(y, dtype=np.float64))

    def decode_coords(self, z):
        flat, dims, acts = self.decoder_pack
        return kernels.mlp_forward(flat, dims, acts, np.asarray(z, dtype=np.float64))


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 3000
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0
    validation_fraction: float = 0.1
    latent_dim: int = 4
    hidden: tuple = (32, 32, 32, 32, 32)
    activation: str = "elu"

    def __post_init__(self):
        if self.epochs <= 0 or self.batch_size <= 0 or self.learning_rate <= 0:
            raise PreconditionError("epochs, batch size and learning rate must be positive")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise PreconditionError("validation fraction must lie in [0, 1)")


def decode(model, basis, z):
    """Full-state decode: weighted basis applied to the decoder output."""
    z = np.asarray(z, dtype=np.float64)
    y = model.decode_coords(z) if model is not None else z
    if y.shape[0] != basis.r_rsvd:
        raise PreconditionError("decoder output does not match basis columns")
    return kernels.decode_rows(basis.wu, y)


def encode(model, basis, state):
    """Latent coordinates of a raw state."""
    y = filter_state(basis, state)
    return model.encode_coords(y) if model is not None else y


def decoder_jacobian(model, z):
    """Exact Jacobian of the decoder net at z (forward-mode through the layers)."""
    flat, dims, acts = model.decoder_pack
    _, jac = kernels.mlp_jacobian(flat, dims, acts, np.asarray(z, dtype=np.float64))
    return jac


def _init_layers(sizes, final_act, rng, activation):
    layers = []
    for i in range(len(sizes) - 1):
        fan_in = sizes[i]
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(sizes[i + 1], sizes[i]))
        b = rng.uniform(-bound, bound, size=sizes[i + 1])
        act = activation if i < len(sizes) - 2 else final_act
        layers.append([w, b, act])
    return layers


def _forward(layers, x):
    pres = []
    outs = [x]
    for w, b, act in layers:
        z = w @ outs[-1] + b[:, None]
        pres.append(z)
        outs.append(_apply_act(z, act))
    return pres, outs


def _apply_act(z, act):
    if act == "linear":
        return z
    return np.where(z > 0.0, z, np.exp(np.minimum(z, 0.0)) - 1.0)


def _act_slope(z, act):
    if act == "linear":
        return None
    return np.where(z > 0.0, 1.0, np.exp(np.minimum(z, 0.0)))


def _backward(layers, pres, outs, dout):
    grads = []
    da = dout
    for (w, _, act), z, a_prev in zip(reversed(layers), reversed(pres), reversed(outs[:-1])):
        slope = _act_slope(z, act)
        dz = da if slope is None else da * slope
        grads.append((dz @ a_prev.T, dz.sum(axis=1)))
        da = w.T @ dz
    grads.reverse()
    return grads, da


def train_autoencoder(y_train, config):
    """Train encoder/decoder nets on reduced-coordinate columns ``y_train`` (p, n).

    Returns ``(model, history)`` where history carries per-epoch train and
    validation losses. The best-validation weights are returned. A scalar
    standardization fitted on the training columns is folded back into the
    first encoder / last decoder layer, so the returned model consumes and
    produces unscaled coordinates.
    """
    y = np.asarray(y_train, dtype=np.float64)
    if y.ndim != 2 or y.shape[1] == 0:
        raise PreconditionError("y_train must be a (p, n) matrix with n >= 1")
    p, n = y.shape
    r = config.latent_dim
    if not r < p:
        raise PreconditionError(f"latent dim {r} must be below filtered dim {p}")

    rng = np.random.Generator(np.random.Philox(int(config.seed)))
    shift = y.mean(axis=1)
    scale = float(np.sqrt(np.mean((y - shift[:, None]) ** 2)))
    if scale == 0.0:
        scale = 1.0
    ys = (y - shift[:, None]) / scale

    n_val = int(round(config.validation_fraction * n))
    perm = rng.permutation(n)
    val_idx, tr_idx = perm[:n_val], perm[n_val:]
    if tr_idx.size == 0:
        raise PreconditionError("validation split leaves no training columns")
    y_tr, y_val = ys[:, tr_idx], ys[:, val_idx]

    sizes_enc = [p, *config.hidden, r]
    sizes_dec = [r, *config.hidden[::-1], p]
    enc = _init_layers(sizes_enc, "linear", rng, config.activation)
    dec = _init_layers(sizes_dec, "linear", rng, config.activation)
    params = [lay for lay in enc + dec]

    adam_m = [[np.zeros_like(w), np.zeros_like(b)] for w, b, _ in params]
    adam_v = [[np.zeros_like(w), np.zeros_like(b)] for w, b, _ in params]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0

    def loss_of(cols):
        if cols.shape[1] == 0:
            return 0.0
        _, e_out = _forward(enc, cols)
        _, d_out = _forward(dec, e_out[-1])
        return float(np.mean((d_out[-1] - cols) ** 2))

    best = None
    best_loss = np.inf
    history = {"train_loss": [], "val_loss": []}
    n_tr = y_tr.shape[1]

    for epoch in range(config.epochs):
        order = rng.permutation(n_tr)
        for start in range(0, n_tr, config.batch_size):
            batch = y_tr[:, order[start:start + config.batch_size]]
            e_pre, e_out = _forward(enc, batch)
            d_pre, d_out = _forward(dec, e_out[-1])
            resid = d_out[-1] - batch
            dout = (2.0 / resid.size) * resid
            dec_grads, dz = _backward(dec, d_pre, d_out, dout)
            enc_grads, _ = _backward(enc, e_pre, e_out, dz)
            step += 1
            for lay, (gw, gb), mm, vv in zip(params, enc_grads + dec_grads,
                                             adam_m, adam_v):
                for k, g in ((0, gw), (1, gb)):
                    mm[k] = beta1 * mm[k] + (1 - beta1) * g
                    vv[k] = beta2 * vv[k] + (1 - beta2) * g * g
                    mhat = mm[k] / (1 - beta1 ** step)
                    vhat = vv[k] / (1 - beta2 ** step)
                    lay[k] = lay[k] - config.learning_rate * mhat / (np.sqrt(vhat) + eps)
        tr_loss = loss_of(y_tr)
        val_loss = loss_of(y_val) if n_val else tr_loss
        if not (np.isfinite(tr_loss) and np.isfinite(val_loss)):
            raise TrainingError(f"training loss diverged at epoch {epoch}", epoch=epoch)
        history["train_loss"].append(tr_loss)
        history["val_loss"].append(val_loss)
        if val_loss < best_loss:
            best_loss = val_loss
            best = [[w.copy(), b.copy(), act] for w, b, act in params]

    enc_best = best[:len(enc)]
    dec_best = best[len(enc):]
    # fold the standardization back: model maps unscaled y <-> z
    w0, b0, a0 = enc_best[0]
    enc_best[0] = [w0 / scale, b0 - (w0 / scale) @ shift, a0]
    wl, bl, al = dec_best[-1]
    dec_best[-1] = [wl * scale, bl * scale + shift, al]

    model = AutoencoderModel(
        encoder=[(w, b, act) for w, b, act in enc_best],
        decoder=[(w, b, act) for w, b, act in dec_best])
    return model, history


def reconstruction_error_nonlinear(model, basis, snapshot_set):
    """AE-REC: relative L2 error of encode-decode round trips in raw state space."""
    if snapshot_set.n_columns == 0:
        raise PreconditionError("snapshot set is empty")

    def reconstruct(raw):
        return decode(model, basis, encode(model, basis, raw))

    totals, fields, skipped = _relative_errors(basis, snapshot_set, reconstruct)
    return {
        "mean_rel_l2": float(totals.mean()),
        "max_rel_l2": float(totals.max()),
        "mean_rel_l2_per_field": fields.mean(axis=0).tolist(),
        "max_rel_l2_per_field": fields.max(axis=0).tolist(),
        "skipped_zero_norm": skipped,
        "per_column": totals,
    }


def save_model(path, model):
    """Versioned binary model file: magic, layer counts, dims/activations, weights."""
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<QQ", len(model.encoder), len(model.decoder)))
        for w, b, act in model.encoder + model.decoder:
            fh.write(struct.pack("<QQB", w.shape[1], w.shape[0], _ACT_CODES[act]))
        for w, b, act in model.encoder + model.decoder:
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.asarray(b, dtype="<f8").tobytes())


def load_model(path):
    with open(path, "rb") as fh:
        if fh.read(8) != MODEL_MAGIC:
            raise DataError(f"{path}: bad model magic")
        n_enc, n_dec = struct.unpack("<QQ", fh.read(16))
        specs = []
        for _ in range(n_enc + n_dec):
            din, dout, act = struct.unpack("<QQB", fh.read(17))
            if act not in _ACT_NAMES:
                raise DataError(f"{path}: unknown activation tag {act}")
            specs.append((din, dout, _ACT_NAMES[act]))
        layers = []
        for din, dout, act in specs:
            w = np.frombuffer(fh.read(8 * din * dout), dtype="<f8").reshape(dout, din)
            b = np.frombuffer(fh.read(8 * dout), dtype="<f8")
            layers.append((w.copy(), b.copy(), act))
        if fh.read(1):
            raise DataError(f"{path}: trailing bytes after model payload")
    return AutoencoderModel(encoder=layers[:n_enc], decoder=layers[n_enc:])
