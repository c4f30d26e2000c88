"""Regression model zoo: transformed MSE, joint bias learning, and variants.

A model has a point branch ``f`` fit in transformed target space and
(except for plain transformed MSE) a ratio branch ``z`` whose squared-error
target is a stop-gradded function of ``f`` and the raw target.  Because of
the stop-gradient barrier the two objectives optimize independently; at the
optimum the combined prediction ``z / kappa(f)`` recovers the conditional
mean of the raw target for any positive slope function ``kappa``, which is
what removes the retransformation bias.

Scheme vocabulary (also the config strings):

* ``tmse``       - squared error on T(y), naive back-transform at predict time;
* ``transun``    - tmse plus a multiplicative ratio branch,
                   target y / (|T^-1(f)| + eps), prediction z * (|T^-1(f)| + eps);
* ``gts``        - any point loss (mse/mae/mspe/mape) plus a linear-transformation
                   branch with target y * kappa(f), prediction z / kappa(f);
* ``scheme_s0``  - additive variant, target y - T^-1(f), prediction T^-1(f) + z;
* ``scheme_s1``  - inverted-ratio variant, target T^-1(f)/y, prediction T^-1(f)/z
                   (converges to 1/E[1/y]: biased on purpose, kept for comparison).

Architectures are either a single learnable scalar per branch (constant
features) or hashed-embedding + ReLU-MLP towers with optional parameter
sharing of the embedding tables and the first MLP layers.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, replace

import numpy as np

from .diffcore import (
    DivergenceError,
    ParamStore,
    Tape,
    adagrad_decay_step,
    backward,
    forward,
    sgd_step,
)
from .synthdata import RngStream
from .transforms import TargetTransform

__all__ = [
    "SCHEMES",
    "POINT_LOSS_KINDS",
    "KAPPA_KINDS",
    "DELTA_GUARD",
    "FeatureField",
    "SharingPlan",
    "ArchSpec",
    "OptimizerSpec",
    "RegressorSpec",
    "Dataset",
    "TrainedRegressor",
    "train",
    "kappa_values",
    "LossProbe",
    "tmse_loss",
    "transun_bias_loss",
    "transun_total_loss",
    "gts_loss",
    "point_loss",
    "scheme_loss",
    "MODEL_FILE_MAGIC",
]

SCHEMES = ("tmse", "transun", "gts", "scheme_s0", "scheme_s1")
POINT_LOSS_KINDS = ("mse", "mae", "mspe", "mape")
KAPPA_KINDS = ("inv_abs_inverse", "inv_abs", "abs")

#: Guard for mspe/mape denominators and the s1 division; distinct from the
#: user-facing epsilon of the ratio branch.
DELTA_GUARD = 1e-8

_INIT_SCALE = 0.05  # uniform(-0.05, 0.05) weight init

MODEL_FILE_MAGIC = b"TSUN"
_MODEL_FILE_VERSION = 1


# ---------------------------------------------------------------------------
# specs


@dataclass(frozen=True)
class FeatureField:
    """One input feature: hashed categorical or quantile-binned continuous."""

    name: str
    kind: str  # categorical | continuous
    buckets: int

    def __post_init__(self):
        if self.kind not in ("categorical", "continuous"):
            raise ValueError(f"unknown feature kind {self.kind!r}")
        if self.buckets < 1:
            raise ValueError("buckets must be >= 1")


@dataclass(frozen=True)
class SharingPlan:
    """Which leading pieces of the point branch the ratio branch reuses."""

    embedding: bool = False
    mlp_layers: int = 0

    def __post_init__(self):
        if self.mlp_layers < 0:
            raise ValueError("mlp_layers must be >= 0")
        if self.mlp_layers > 0 and not self.embedding:
            raise ValueError("sharing MLP layers requires sharing the embedding first")

    @property
    def label(self) -> str:
        if not self.embedding:
            return "none"
        if self.mlp_layers == 0:
            return "embedding"
        return f"embedding+{self.mlp_layers}mlp"

    @staticmethod
    def parse(text: str) -> "SharingPlan":
        s = text.strip().lower()
        if s == "none":
            return SharingPlan()
        if s == "embedding":
            return SharingPlan(embedding=True)
        if s.startswith("embedding+") and s.endswith("mlp"):
            return SharingPlan(embedding=True, mlp_layers=int(s[len("embedding+"):-len("mlp")]))
        raise ValueError(f"cannot parse sharing plan {text!r}")


@dataclass(frozen=True)
class ArchSpec:
    """Branch architecture; no features means a single scalar per branch."""

    features: tuple = ()
    embedding_dim: int = 4
    mlp_dims: tuple = (16, 12, 8)
    sharing: SharingPlan = SharingPlan()

    def __post_init__(self):
        if self.features and (self.embedding_dim < 1 or not self.mlp_dims):
            raise ValueError("feature mode needs embedding_dim >= 1 and at least one MLP layer")
        if any(d < 1 for d in self.mlp_dims):
            raise ValueError("mlp dims must be positive")
        if self.sharing.mlp_layers > len(self.mlp_dims):
            raise ValueError("cannot share more MLP layers than the MLP has")

    @property
    def scalar_mode(self) -> bool:
        return not self.features


@dataclass(frozen=True)
class OptimizerSpec:
    kind: str = "sgd"  # sgd | adagrad_decay
    lr: float = 0.04
    decay: float = 0.9
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("sgd", "adagrad_decay"):
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if self.lr <= 0:
            raise ValueError("lr must be positive")


@dataclass(frozen=True)
class RegressorSpec:
    """Full model recipe: scheme, transform, losses, architecture, training."""

    scheme: str
    transform: TargetTransform
    point_loss: str = "mse"
    kappa: str = "inv_abs_inverse"
    epsilon: float = 1.0
    architecture: ArchSpec = ArchSpec()
    optimizer: OptimizerSpec = OptimizerSpec()
    batch_size: int = 1024
    epochs: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.point_loss not in POINT_LOSS_KINDS:
            raise ValueError(f"unknown point loss {self.point_loss!r}")
        if self.kappa not in KAPPA_KINDS:
            raise ValueError(f"unknown kappa kind {self.kappa!r}")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.scheme == "transun" and (self.point_loss != "mse" or self.kappa != "inv_abs_inverse"):
            raise ValueError("transun fixes point_loss=mse and kappa=inv_abs_inverse")
        if self.scheme in ("tmse", "scheme_s0", "scheme_s1"):
            # these schemes are defined on the squared point loss and have a
            # fixed (or no) slope function; normalize so spec hashes are
            # insensitive to the ignored fields
            object.__setattr__(self, "point_loss", "mse")
            object.__setattr__(self, "kappa", "inv_abs_inverse")

    @property
    def dual_branch(self) -> bool:
        return self.scheme != "tmse"

    def canonical_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "transform": {"kind": self.transform.kind, "slope": self.transform.slope},
            "point_loss": self.point_loss,
            "kappa": self.kappa,
            "epsilon": self.epsilon,
            "architecture": {
                "features": [{"name": f.name, "kind": f.kind, "buckets": f.buckets}
                             for f in self.architecture.features],
                "embedding_dim": self.architecture.embedding_dim,
                "mlp_dims": list(self.architecture.mlp_dims),
                "sharing": self.architecture.sharing.label,
            },
            "optimizer": {"kind": self.optimizer.kind, "lr": self.optimizer.lr,
                          "decay": self.optimizer.decay, "eps": self.optimizer.eps},
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "seed": self.seed,
        }

    def spec_hash(self) -> bytes:
        text = json.dumps(self.canonical_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).digest()

    @property
    def label(self) -> str:
        base = {"tmse": "tmse", "transun": "transun", "scheme_s0": "s0", "scheme_s1": "s1"}
        if self.scheme == "gts":
            return f"gts[{self.point_loss},{self.kappa}]({self.transform.label})"
        return f"{base[self.scheme]}({self.transform.label})"


@dataclass
class Dataset:
    """Bucketized features (N,F int64; F may be zero) plus raw targets."""

    features: np.ndarray
    targets: np.ndarray
    fields: tuple = ()

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.int64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.features.ndim != 2 or self.targets.ndim != 1:
            raise ValueError("features must be (N,F), targets (N,)")
        if len(self.features) != len(self.targets):
            raise ValueError("features and targets disagree on row count")
        if self.features.shape[1] != len(self.fields):
            raise ValueError("feature columns must match declared fields")

    def __len__(self) -> int:
        return len(self.targets)

    @classmethod
    def fixed_x(cls, targets) -> "Dataset":
        """Constant-input dataset (the scalar-branch training mode)."""
        y = np.asarray(targets, dtype=np.float64)
        return cls(features=np.zeros((len(y), 0), dtype=np.int64), targets=y, fields=())


# ---------------------------------------------------------------------------
# kappa and scheme targets (value-level mirrors of the tape emission)


def kappa_values(kind: str, u, t: TargetTransform, eps: float):
    """Positive slope values for a vector of point-branch outputs."""
    u = np.asarray(u, dtype=np.float64)
    if kind == "inv_abs_inverse":
        return 1.0 / (np.abs(t.safe_invert_array(u)) + eps)
    if kind == "inv_abs":
        return 1.0 / (np.abs(u) + eps)
    if kind == "abs":
        return np.maximum(np.abs(u), eps)
    raise ValueError(f"unknown kappa kind {kind!r}")


def _scheme_target_values(spec: RegressorSpec, y: np.ndarray, f_vals: np.ndarray) -> np.ndarray:
    t = spec.transform
    if spec.scheme in ("transun", "gts"):
        return y * kappa_values(spec.kappa, f_vals, t, spec.epsilon)
    if spec.scheme == "scheme_s0":
        return y - t.safe_invert_array(f_vals)
    if spec.scheme == "scheme_s1":
        return t.safe_invert_array(f_vals) / (np.abs(y) + DELTA_GUARD)
    raise ValueError(f"scheme {spec.scheme!r} has no ratio target")


def predict_from_outputs(spec: RegressorSpec, f_vals, z_vals=None):
    """Original-space predictions from branch outputs; returns (preds, guard_hits)."""
    t = spec.transform
    f_vals = np.asarray(f_vals, dtype=np.float64)
    if spec.scheme == "tmse":
        return t.safe_invert_array(f_vals), 0
    z_vals = np.asarray(z_vals, dtype=np.float64)
    if spec.scheme == "transun":
        return z_vals * (np.abs(t.safe_invert_array(f_vals)) + spec.epsilon), 0
    if spec.scheme == "gts":
        return z_vals / kappa_values(spec.kappa, f_vals, t, spec.epsilon), 0
    if spec.scheme == "scheme_s0":
        return t.safe_invert_array(f_vals) + z_vals, 0
    if spec.scheme == "scheme_s1":
        hits = int(np.sum(np.abs(z_vals) < DELTA_GUARD))
        guarded = np.where(z_vals >= 0, np.maximum(z_vals, DELTA_GUARD),
                           np.minimum(z_vals, -DELTA_GUARD))
        return t.safe_invert_array(f_vals) / guarded, hits
    raise ValueError(f"unknown scheme {spec.scheme!r}")


# ---------------------------------------------------------------------------
# parameter layout and branch construction


@dataclass
class _Block:
    name: str
    base: int
    size: int
    branch: str  # "f" or "z"


class Layout:
    """Slot allocation for one or two branches over a flat parameter vector."""

    def __init__(self, arch: ArchSpec, dual: bool):
        self.arch = arch
        self.dual = dual
        self.blocks: list[_Block] = []
        self._cursor = 0
        self.f_parts = self._alloc_branch("f", share_from=None)
        self.z_parts = self._alloc_branch("z", share_from=self.f_parts) if dual else None
        self.total = self._cursor

    def _alloc(self, name: str, size: int, branch: str) -> int:
        base = self._cursor
        self.blocks.append(_Block(name, base, size, branch))
        self._cursor += size
        return base

    def _alloc_branch(self, branch: str, share_from):
        arch = self.arch
        parts: dict = {}
        if arch.scalar_mode:
            parts["scalar"] = self._alloc(f"{branch}.scalar", 1, branch)
            return parts
        share = arch.sharing if (branch == "z" and share_from is not None) else SharingPlan()
        if share.embedding and share_from is not None:
            parts["embed"] = share_from["embed"]
        else:
            parts["embed"] = [
                self._alloc(f"{branch}.embed.{f.name}", f.buckets * arch.embedding_dim, branch)
                for f in arch.features
            ]
        in_dim = len(arch.features) * arch.embedding_dim
        layers = []
        for li, width in enumerate(arch.mlp_dims):
            if share_from is not None and li < share.mlp_layers:
                layers.append(share_from["layers"][li])
            else:
                layers.append({
                    "w": self._alloc(f"{branch}.mlp{li}.w", width * in_dim, branch),
                    "b": self._alloc(f"{branch}.mlp{li}.b", width, branch),
                    "in": in_dim, "out": width,
                })
            in_dim = width
        parts["layers"] = layers
        parts["head_w"] = self._alloc(f"{branch}.head.w", in_dim, branch)
        parts["head_b"] = self._alloc(f"{branch}.head.b", 1, branch)
        parts["head_in"] = in_dim
        return parts

    def branch_slots(self, branch: str) -> np.ndarray:
        idx = [np.arange(b.base, b.base + b.size) for b in self.blocks if b.branch == branch]
        return np.concatenate(idx) if idx else np.zeros(0, dtype=np.int64)

    def z_neutral_slot(self) -> int | None:
        """Slot initialized to 1.0 so the initial multiplicative correction is neutral."""
        if not self.dual:
            return None
        if self.arch.scalar_mode:
            return self.z_parts["scalar"]
        return self.z_parts["head_b"]


def init_params(layout: Layout, seed: int) -> ParamStore:
    """Seeded init: scalars and embeddings uniform(-0.05, 0.05), MLP weight
    matrices fan-scaled (a flat +-0.05 through several ReLU layers attenuates
    per-row signal to ~1e-6, leaving the towers unable to learn features),
    biases zero, and the ratio branch's output bias 1.0 so the initial
    multiplicative correction is neutral."""
    rng = RngStream(seed).child("init")
    values = (rng.uniform(layout.total) * 2.0 - 1.0) * _INIT_SCALE
    for block in layout.blocks:
        if ".mlp" in block.name or ".head" in block.name:
            if block.name.endswith(".b"):
                values[block.base : block.base + block.size] = 0.0
            else:
                fan = _fan_bound(layout, block.name)
                values[block.base : block.base + block.size] = (
                    rng.uniform(block.size) * 2.0 - 1.0) * fan
    neutral = layout.z_neutral_slot()
    if neutral is not None:
        values[neutral] = 1.0
    return ParamStore(values=values)


def _fan_bound(layout: Layout, block_name: str) -> float:
    branch = layout.f_parts if block_name.startswith("f.") else layout.z_parts
    if ".head" in block_name:
        fan_in, fan_out = branch["head_in"], 1
    else:
        li = int(block_name.split(".mlp")[1].split(".")[0])
        layer = branch["layers"][li]
        fan_in, fan_out = layer["in"], layer["out"]
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def _emit_branch(tape: Tape, layout: Layout, branch: str, feature_nodes: list) -> int:
    arch = layout.arch
    parts = layout.f_parts if branch == "f" else layout.z_parts
    if arch.scalar_mode:
        return tape.param(parts["scalar"])
    dim = arch.embedding_dim
    acts = []
    for j, base in enumerate(parts["embed"]):
        for d in range(dim):
            acts.append(tape.param_gather(feature_nodes[j], base, dim, d))
    for layer in parts["layers"]:
        w, b, in_dim, out_dim = layer["w"], layer["b"], layer["in"], layer["out"]
        nxt = []
        for i in range(out_dim):
            s = tape.param(b + i)
            for j in range(in_dim):
                s = tape.add(s, tape.mul(tape.param(w + i * in_dim + j), acts[j]))
            nxt.append(tape.relu(s))
        acts = nxt
    out = tape.param(parts["head_b"])
    for j in range(parts["head_in"]):
        out = tape.add(out, tape.mul(tape.param(parts["head_w"] + j), acts[j]))
    return out


# ---------------------------------------------------------------------------
# loss emission


def _emit_point_loss(tape: Tape, f_node: int, ty_node: int, kind: str) -> int:
    diff = tape.sub(f_node, ty_node)
    if kind == "mse":
        return tape.square(diff)
    if kind == "mae":
        return tape.abs(diff)
    den = tape.add(tape.abs(ty_node), tape.const(DELTA_GUARD))
    if kind == "mspe":
        return tape.square(tape.div(diff, den))
    if kind == "mape":
        return tape.div(tape.abs(diff), den)
    raise ValueError(f"unknown point loss {kind!r}")


def _emit_ratio_target(tape: Tape, spec: RegressorSpec, f_node: int, y_node: int) -> int | None:
    """Emit the on-tape bias target, or None when the transform's inverse is
    not tape-expressible (arctan) and the target must arrive as an input."""
    t = spec.transform
    if spec.scheme in ("transun", "gts"):
        if spec.kappa == "inv_abs_inverse":
            inv = t.emit_invert(tape, f_node)
            if inv is None:
                return None
            den = tape.add(tape.abs(inv), tape.const(spec.epsilon))
            return tape.div(y_node, den)
        if spec.kappa == "inv_abs":
            den = tape.add(tape.abs(f_node), tape.const(spec.epsilon))
            return tape.div(y_node, den)
        k = tape.max(tape.abs(f_node), tape.const(spec.epsilon))
        return tape.mul(y_node, k)
    inv = t.emit_invert(tape, f_node)
    if inv is None:
        return None
    if spec.scheme == "scheme_s0":
        return tape.sub(y_node, inv)
    if spec.scheme == "scheme_s1":
        return tape.div(inv, tape.add(tape.abs(y_node), tape.const(DELTA_GUARD)))
    raise ValueError(f"scheme {spec.scheme!r} has no ratio target")


@dataclass
class TrainingProgram:
    tape: Tape
    f_node: int
    z_node: int | None
    needs_ratio_input: bool


def _build_training_tape(spec: RegressorSpec, layout: Layout) -> TrainingProgram:
    """One tape computing the per-sample total loss scaled by the inverse
    batch size, so the backward pass yields batch-mean gradients."""
    arch = spec.architecture
    tape = Tape()
    feature_nodes = [tape.input(f"x{j}") for j in range(len(arch.features))]
    y_node = tape.input("y")
    ty_node = tape.input("ty")
    inv_b = tape.input("inv_b")
    f_node = _emit_branch(tape, layout, "f", feature_nodes)
    point = _emit_point_loss(tape, f_node, ty_node, spec.point_loss)
    z_node = None
    needs_input = False
    if spec.dual_branch:
        z_node = _emit_branch(tape, layout, "z", feature_nodes)
        target = _emit_ratio_target(tape, spec, f_node, y_node)
        if target is None:
            target = tape.input("sg_target")
            needs_input = True
        bias = tape.square(tape.sub(z_node, tape.stop_grad(target)))
        total = tape.add(point, bias)
    else:
        total = point
    tape.set_output(tape.mul(total, inv_b))
    return TrainingProgram(tape=tape, f_node=f_node, z_node=z_node, needs_ratio_input=needs_input)


def _build_output_tape(layout: Layout, branch: str) -> Tape:
    tape = Tape()
    feature_nodes = [tape.input(f"x{j}") for j in range(len(layout.arch.features))]
    tape.set_output(_emit_branch(tape, layout, branch, feature_nodes))
    return tape


# ---------------------------------------------------------------------------
# trained model


class TrainedRegressor:
    """Immutable-after-training model: spec plus learned flat parameters."""

    def __init__(self, spec: RegressorSpec, layout: Layout, store: ParamStore,
                 loss_log=None, pgr_log=None):
        self.spec = spec
        self.layout = layout
        self.store = store
        self.loss_log = np.asarray(loss_log if loss_log is not None else [], dtype=np.float64)
        self.pgr_log = np.asarray(pgr_log if pgr_log is not None else [], dtype=np.float64)
        self.guard_hits = 0
        self._f_tape = _build_output_tape(layout, "f")
        self._z_tape = _build_output_tape(layout, "z") if spec.dual_branch else None

    @property
    def training_log(self) -> dict:
        """Per-step mean loss and batch prediction/target mean ratio."""
        return {"loss": self.loss_log, "pgr": self.pgr_log}

    @property
    def params_f(self) -> np.ndarray:
        return self.store.values[self.layout.branch_slots("f")]

    @property
    def params_z(self) -> np.ndarray | None:
        if not self.spec.dual_branch:
            return None
        return self.store.values[self.layout.branch_slots("z")]

    def _branch_outputs(self, features: np.ndarray, chunk: int = 8192):
        features = np.asarray(features, dtype=np.int64)
        if features.ndim != 2 or features.shape[1] != len(self.spec.architecture.features):
            raise ValueError("features must be (M, n_features)")
        m = len(features)
        f_out = np.empty(m, dtype=np.float64)
        z_out = np.empty(m, dtype=np.float64) if self._z_tape is not None else None
        for lo in range(0, m, chunk):
            hi = min(lo + chunk, m)
            inputs = {f"x{j}": features[lo:hi, j] for j in range(features.shape[1])}
            fv = forward(self._f_tape, self.store, inputs)
            f_out[lo:hi] = fv if np.ndim(fv) else float(fv)
            if z_out is not None:
                zv = forward(self._z_tape, self.store, inputs)
                z_out[lo:hi] = zv if np.ndim(zv) else float(zv)
        return f_out, z_out

    def predict(self, features) -> np.ndarray:
        """Deterministic original-space predictions for bucketized features."""
        f_out, z_out = self._branch_outputs(np.asarray(features))
        preds, hits = predict_from_outputs(self.spec, f_out, z_out)
        self.guard_hits += hits
        return preds

    def predict_dataset(self, dataset: Dataset) -> np.ndarray:
        return self.predict(dataset.features)

    def kappa_of(self, features) -> np.ndarray | None:
        """Per-row slope values (for binned diagnostics); None for schemes
        without a slope function (tmse and the s0/s1 comparison schemes)."""
        if self.spec.scheme not in ("transun", "gts"):
            return None
        f_out, _ = self._branch_outputs(np.asarray(features))
        return kappa_values(self.spec.kappa, f_out, self.spec.transform, self.spec.epsilon)

    def point_branch_outputs(self, features) -> np.ndarray:
        return self._branch_outputs(np.asarray(features))[0]

    # -- serialization: versioned flat-parameter file -----------------------

    def save(self, path) -> None:
        payload = self.store.values.astype("<f8").tobytes()
        with open(path, "wb") as fh:
            fh.write(MODEL_FILE_MAGIC)
            fh.write(struct.pack("<I", _MODEL_FILE_VERSION))
            fh.write(self.spec.spec_hash())
            fh.write(struct.pack("<Q", len(self.store.values)))
            fh.write(payload)

    @classmethod
    def load(cls, path, spec: RegressorSpec) -> "TrainedRegressor":
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != MODEL_FILE_MAGIC:
                raise ValueError("not a model parameter file")
            (version,) = struct.unpack("<I", fh.read(4))
            if version != _MODEL_FILE_VERSION:
                raise ValueError(f"unsupported model file version {version}")
            stored_hash = fh.read(32)
            if stored_hash != spec.spec_hash():
                raise ValueError("model file was written under a different spec")
            (count,) = struct.unpack("<Q", fh.read(8))
            values = np.frombuffer(fh.read(count * 8), dtype="<f8").astype(np.float64)
        layout = Layout(spec.architecture, spec.dual_branch)
        if count != layout.total:
            raise ValueError(f"parameter count {count} does not match layout ({layout.total})")
        return cls(spec, layout, ParamStore(values=values))


# ---------------------------------------------------------------------------
# training


class TrainingError(RuntimeError):
    """Training aborted (bad data or diverged optimization)."""


def _optimizer_step(store: ParamStore, opt: OptimizerSpec) -> None:
    if opt.kind == "sgd":
        sgd_step(store, opt.lr)
    else:
        adagrad_decay_step(store, opt.lr, opt.decay, opt.eps)


def train(dataset: Dataset, spec: RegressorSpec) -> TrainedRegressor:
    """Mini-batch training, deterministic for a fixed spec seed.

    The per-batch log records the mean loss and the batch prediction/target
    mean ratio computed from the same forward pass.  Aborts with the step
    index on any non-finite loss or gradient, and names the first offending
    row on a target outside the transform's domain.
    """
    if len(dataset) == 0:
        raise TrainingError("empty dataset")
    arch = spec.architecture
    if dataset.features.shape[1] != len(arch.features):
        raise TrainingError("dataset feature columns do not match the architecture")
    t = spec.transform
    ok = t.in_domain(dataset.targets)
    if not np.all(ok):
        row = int(np.argmin(ok))
        raise TrainingError(
            f"target outside {t.label} domain at row {row} (value {dataset.targets[row]!r})")
    ty = t.apply_array(dataset.targets)
    layout = Layout(arch, spec.dual_branch)
    store = init_params(layout, spec.seed)
    program = _build_training_tape(spec, layout)
    tape = program.tape
    shuffle_rng = RngStream(spec.seed).child("shuffle")
    n = len(dataset)
    loss_log: list[float] = []
    pgr_log: list[float] = []
    step = 0
    for _epoch in range(spec.epochs):
        perm = shuffle_rng.permutation(n)
        for lo in range(0, n, spec.batch_size):
            idx = perm[lo : lo + spec.batch_size]
            b = len(idx)
            inputs = {f"x{j}": dataset.features[idx, j] for j in range(dataset.features.shape[1])}
            y_b = dataset.targets[idx]
            inputs["y"] = y_b
            inputs["ty"] = ty[idx]
            inputs["inv_b"] = 1.0 / b
            try:
                if program.needs_ratio_input:
                    # the stop-gradded target depends on the current point
                    # branch; a prepass reads it off, then the real pass runs
                    inputs["sg_target"] = np.zeros(b)
                    forward(tape, store, inputs)
                    f_vals = np.broadcast_to(np.asarray(tape.value_of(program.f_node)), (b,))
                    inputs["sg_target"] = _scheme_target_values(spec, y_b, f_vals)
                out = forward(tape, store, inputs)
                with np.errstate(over="ignore"):
                    loss = float(np.sum(out))
                if not np.isfinite(loss):
                    raise DivergenceError("non-finite batch loss")
                f_vals = np.broadcast_to(np.asarray(tape.value_of(program.f_node), dtype=np.float64), (b,))
                z_vals = None
                if program.z_node is not None:
                    z_vals = np.broadcast_to(
                        np.asarray(tape.value_of(program.z_node), dtype=np.float64), (b,))
                preds, _ = predict_from_outputs(spec, f_vals, z_vals)
                my = float(np.mean(y_b))
                pgr_log.append(float(np.mean(preds)) / my if my != 0.0 else float("nan"))
                loss_log.append(loss)
                store.zero_grads()
                store.grads += backward(tape, len(store))
                _optimizer_step(store, spec.optimizer)
            except DivergenceError as exc:
                raise TrainingError(f"training aborted at step {step}: {exc}") from exc
            step += 1
    return TrainedRegressor(spec, layout, store, loss_log=loss_log, pgr_log=pgr_log)


# ---------------------------------------------------------------------------
# standalone loss probes (value + branch gradients on scalar inputs)


@dataclass(frozen=True)
class LossProbe:
    """Loss value with d/df and d/dz, evaluated on a standalone tape."""

    value: float
    grad_f: float
    grad_z: float | None
    tape: Tape


def _probe(spec: RegressorSpec, f_out: float, z_out: float | None, y: float,
           include_point: bool, include_bias: bool) -> LossProbe:
    layout = Layout(ArchSpec(), dual=z_out is not None)
    tape = Tape()
    y_node = tape.input("y")
    ty_node = tape.input("ty")
    f_node = tape.param(layout.f_parts["scalar"])
    pieces = []
    if include_point:
        pieces.append(_emit_point_loss(tape, f_node, ty_node, spec.point_loss))
    z_node = None
    if include_bias:
        z_node = tape.param(layout.z_parts["scalar"])
        target = _emit_ratio_target(tape, spec, f_node, y_node)
        if target is None:
            tgt = _scheme_target_values(spec, np.asarray([y]), np.asarray([f_out]))[0]
            target = tape.const(float(tgt))
        pieces.append(tape.square(tape.sub(z_node, tape.stop_grad(target))))
    total = pieces[0]
    for p in pieces[1:]:
        total = tape.add(total, p)
    tape.set_output(total)
    params = np.array([f_out] if z_out is None else [f_out, z_out], dtype=np.float64)
    value = float(forward(tape, params, {"y": y, "ty": spec.transform.apply(y)}))
    grads = backward(tape, len(params))
    return LossProbe(value=value, grad_f=float(grads[0]),
                     grad_z=float(grads[1]) if z_out is not None else None, tape=tape)


def tmse_loss(f_out: float, y: float, t: TargetTransform) -> LossProbe:
    """Squared error in transformed space, differentiable w.r.t. f."""
    spec = RegressorSpec(scheme="tmse", transform=t)
    return _probe(spec, f_out, None, y, include_point=True, include_bias=False)


def transun_bias_loss(z_out: float, f_out: float, y: float, t: TargetTransform,
                      eps: float = 1.0) -> LossProbe:
    """(z - sg[y / (|T^-1(f)| + eps)])^2; gradient reaches the z branch only."""
    spec = RegressorSpec(scheme="transun", transform=t, epsilon=eps)
    return _probe(spec, f_out, z_out, y, include_point=False, include_bias=True)


def transun_total_loss(z_out: float, f_out: float, y: float, t: TargetTransform,
                       eps: float = 1.0) -> LossProbe:
    spec = RegressorSpec(scheme="transun", transform=t, epsilon=eps)
    return _probe(spec, f_out, z_out, y, include_point=True, include_bias=True)


def gts_loss(f_out: float, z_out: float, y: float, spec: RegressorSpec) -> LossProbe:
    """Point loss on T(y) plus the stop-gradded linear-transformation term."""
    if spec.scheme not in ("gts", "transun"):
        spec = replace(spec, scheme="gts")
    return _probe(spec, f_out, z_out, y, include_point=True, include_bias=True)


def point_loss(f_out: float, target: float, kind: str) -> LossProbe:
    """Standalone conditional point loss against an already-transformed target."""
    tape = Tape()
    ty_node = tape.input("ty")
    f_node = tape.param(0)
    tape.set_output(_emit_point_loss(tape, f_node, ty_node, kind))
    params = np.array([f_out], dtype=np.float64)
    value = float(forward(tape, params, {"ty": target}))
    grads = backward(tape, 1)
    return LossProbe(value=value, grad_f=float(grads[0]), grad_z=None, tape=tape)


def scheme_loss(z_out: float, f_out: float, y: float, t: TargetTransform, kind: str,
                eps: float = 1.0) -> LossProbe:
    """Bias-modeling scheme comparison: s0 additive, s1 inverted ratio,
    s2 the canonical multiplicative target (with eps inside the denominator)."""
    if kind == "s2":
        return transun_bias_loss(z_out, f_out, y, t, eps)
    scheme = {"s0": "scheme_s0", "s1": "scheme_s1"}[kind]
    spec = RegressorSpec(scheme=scheme, transform=t, epsilon=eps)
    return _probe(spec, f_out, z_out, y, include_point=False, include_bias=True)
