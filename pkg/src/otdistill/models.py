"""Small MLP building blocks standing in for the modality backbones, fusion
heads, modality adapters and the feature-hallucination network (T-Net).
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import tensor as T
from .errors import CheckpointError, ContractError, DimensionError
from .tensor import Node

ACTIVATIONS = {"tanh": T.tanh, "relu": T.relu}


class Module:
    """Anything with named parameters. Subclasses fill ``self.params`` or
    register child modules in ``self.children``."""

    def __init__(self):
        self.params: dict[str, Node] = {}
        self.children: dict[str, Module] = {}

    def named_parameters(self, prefix: str = "") -> Iterable[tuple[str, Node]]:
        for name, p in self.params.items():
            yield prefix + name, p
        for cname, child in self.children.items():
            yield from child.named_parameters(f"{prefix}{cname}.")

    def parameters(self) -> list[Node]:
        return [p for _, p in self.named_parameters()]

    def freeze(self) -> "Module":
        for p in self.parameters():
            p.requires_grad = False
            p.grad = None
        return self

    def unfreeze(self) -> "Module":
        for p in self.parameters():
            if not p.requires_grad:
                p.requires_grad = True
                p.grad = np.zeros_like(p.value)
        return self

    @property
    def frozen(self) -> bool:
        return not any(p.requires_grad for p in self.parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.value for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        if set(own) != set(state):
            raise CheckpointError(f"parameter names differ: {sorted(set(own) ^ set(state))}")
        for name, p in own.items():
            new = T.as_matrix(state[name], name=name)
            if new.shape != p.shape:
                raise CheckpointError(f"{name}: checkpoint shape {new.shape} vs model {p.shape}")
            p.value = new
            if p.requires_grad:
                p.grad = np.zeros_like(new)

    def param_hash(self) -> str:
        return state_hash(self.state_dict())


def state_hash(state: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for name in sorted(state):
        h.update(name.encode())
        h.update(np.ascontiguousarray(state[name]).tobytes())
    return h.hexdigest()


class Mlp(Module):
    """Fully connected stack; ``activation`` after each hidden layer and,
    if ``final_activation``, after the last one too."""

    def __init__(self, sizes: Sequence[int], activation: str = "tanh",
                 final_activation: bool = True, rng: np.random.Generator | None = None):
        super().__init__()
        if len(sizes) < 2 or min(sizes) < 1:
            raise ContractError(f"bad layer sizes {sizes}")
        if activation not in ACTIVATIONS:
            raise ContractError(f"unknown activation {activation!r}")
        self.sizes = list(sizes)
        self.activation = activation
        self.final_activation = final_activation
        rng = rng if rng is not None else np.random.default_rng(0)
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            self.params[f"W{i}"] = T.parameter(rng.uniform(-limit, limit, (fan_in, fan_out)), f"W{i}")
            self.params[f"b{i}"] = T.parameter(np.zeros((1, fan_out)), f"b{i}")

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    def __call__(self, x) -> Node:
        h = T.constant(x)
        if h.shape[1] != self.in_dim:
            raise DimensionError(f"Mlp expects {self.in_dim} input columns, got {h.shape[1]}")
        act = ACTIVATIONS[self.activation]
        n_layers = len(self.sizes) - 1
        for i in range(n_layers):
            h = T.add(T.matmul(h, self.params[f"W{i}"]), self.params[f"b{i}"])
            if i < n_layers - 1 or self.final_activation:
                h = act(h)
        return h

    def arch(self) -> dict:
        return {"sizes": self.sizes, "activation": self.activation,
                "final_activation": self.final_activation}


class ModalityAdapter(Module):
    """Encoder-decoder mapping backbone features into the joint space."""

    def __init__(self, in_dim: int, bottleneck: int, joint_dim: int, rng=None):
        super().__init__()
        self.children["encoder"] = Mlp([in_dim, bottleneck], "tanh", True, rng)
        self.children["decoder"] = Mlp([bottleneck, joint_dim], "tanh", False, rng)

    @property
    def out_dim(self) -> int:
        return self.children["decoder"].out_dim

    def __call__(self, features) -> Node:
        return self.children["decoder"](self.children["encoder"](features))


class TNet(Module):
    """Regresses privileged-modality features from prevalent-modality features."""

    def __init__(self, in_dim: int, hidden: int, out_dim: int, rng=None):
        super().__init__()
        self.children["encoder"] = Mlp([in_dim, hidden], "tanh", True, rng)
        # backbone features are tanh-bounded, so is the reconstruction
        self.children["decoder"] = Mlp([hidden, out_dim], "tanh", True, rng)

    @property
    def out_dim(self) -> int:
        return self.children["decoder"].out_dim

    def __call__(self, prevalent) -> Node:
        return self.children["decoder"](self.children["encoder"](prevalent))


class FusionHead(Module):
    """Fuses per-modality features into a joint representation and predicts.

    ``concat``: one projection over the concatenated features.
    ``gated``: per-modality projections mixed by sigmoid gates computed from
    the concatenated features, joint = sum_i gate_i * proj_i.
    """

    def __init__(self, in_dims: Sequence[int], joint_dim: int, out_dim: int,
                 kind: str = "concat", rng=None):
        super().__init__()
        if kind not in ("concat", "gated"):
            raise ContractError(f"unknown fusion kind {kind!r}")
        self.kind = kind
        self.in_dims = list(in_dims)
        self.joint_dim = joint_dim
        total = sum(self.in_dims)
        if kind == "concat":
            self.children["proj"] = Mlp([total, joint_dim], "tanh", True, rng)
        else:
            for i, d in enumerate(self.in_dims):
                self.children[f"proj{i}"] = Mlp([d, joint_dim], "tanh", True, rng)
                self.children[f"gate{i}"] = Mlp([total, joint_dim], "tanh", False, rng)
        self.children["predictor"] = Mlp([joint_dim, out_dim], "tanh", False, rng)

    @property
    def predictor(self) -> Mlp:
        return self.children["predictor"]

    def gates(self, features: Sequence[Node]) -> list[Node]:
        cat = T.concat_cols(features)
        return [T.sigmoid(self.children[f"gate{i}"](cat)) for i in range(len(self.in_dims))]

    def joint(self, features: Sequence[Node], gates: Sequence[Node] | None = None) -> Node:
        features = [T.constant(f) for f in features]
        if [f.shape[1] for f in features] != self.in_dims:
            raise DimensionError(f"fusion expects widths {self.in_dims}, got {[f.shape for f in features]}")
        if len({f.shape[0] for f in features}) != 1:
            raise ContractError(f"batch sizes differ: {[f.shape for f in features]}")
        if self.kind == "concat":
            return self.children["proj"](T.concat_cols(features))
        gates = self.gates(features) if gates is None else gates
        out = None
        for i, f in enumerate(features):
            term = T.mul(T.constant(gates[i]), self.children[f"proj{i}"](f))
            out = term if out is None else T.add(out, term)
        return out


def forward_backbone(encoder: Mlp, raw) -> Node:
    return encoder(raw)


def fuse(features: Sequence[Node], head: FusionHead) -> tuple[Node, Node]:
    joint = head.joint(features)
    return joint, head.predictor(joint)


def adapt(adapter: ModalityAdapter, features) -> Node:
    return adapter(features)


def hallucinate(tnet: TNet, prevalent) -> Node:
    return tnet(prevalent)


# --- checkpoints -------------------------------------------------------------

MANIFEST = "manifest.json"


def save_checkpoint(directory, modules: dict[str, Module], config_hash: str, extra: dict | None = None) -> Path:
    """One CSV per parameter matrix plus a manifest of shapes and the config hash."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    shapes = {}
    for mname, module in modules.items():
        for pname, p in module.named_parameters():
            key = f"{mname}.{pname}"
            T.save_csv(directory / f"{key}.csv", p.value)
            shapes[key] = list(p.shape)
    manifest = {"config_hash": config_hash, "modules": sorted(modules), "shapes": shapes,
                "state_hash": {m: modules[m].param_hash() for m in modules}}
    if extra:
        manifest["extra"] = extra
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return directory


def load_checkpoint(directory, modules: dict[str, Module], config_hash: str) -> dict:
    """Fill ``modules`` (built from the same config) from ``directory``."""
    directory = Path(directory)
    path = directory / MANIFEST
    if not path.exists():
        raise CheckpointError(f"no checkpoint manifest at {path}")
    manifest = json.loads(path.read_text())
    if manifest.get("config_hash") != config_hash:
        raise CheckpointError(
            f"checkpoint config hash {manifest.get('config_hash')} does not match {config_hash}")
    if sorted(modules) != manifest["modules"]:
        raise CheckpointError(f"checkpoint holds {manifest['modules']}, expected {sorted(modules)}")
    for mname, module in modules.items():
        state = {}
        for pname, p in module.named_parameters():
            key = f"{mname}.{pname}"
            if key not in manifest["shapes"]:
                raise CheckpointError(f"{key} missing from manifest")
            if list(p.shape) != manifest["shapes"][key]:
                raise CheckpointError(f"{key}: manifest shape {manifest['shapes'][key]} vs model {list(p.shape)}")
            state[pname] = T.load_csv(directory / f"{key}.csv")
        module.load_state_dict(state)
        if module.param_hash() != manifest["state_hash"][mname]:
            raise CheckpointError(f"{mname}: parameters do not round-trip")
    return manifest
