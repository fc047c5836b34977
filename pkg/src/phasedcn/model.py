"""Full enhancement network: shared dilated-conv trunk, fusion layer, and two
refinement branches (ratio mask and real/imag spectrum) with mask-driven
attention gates, plus complexity accounting and checkpoint I/O.

Checkpoints are a pair of files: ``<stem>.json`` holds the manifest (config,
entry names/shapes/kinds in order, optimizer hyperparameters, step count,
dropout RNG state) and ``<stem>.bin`` holds the concatenated little-endian
IEEE-754 float32 arrays in manifest order.
"""

from dataclasses import dataclass, asdict, replace
import json

import numpy as np

from .nn import (
    Adam,
    ConvBlock,
    Dense,
    ForwardContext,
    SegmentContext,
    Tape,
    Var,
    add_scalars_op,
    concat_op,
    mse_op,
    mul_op,
    sigmoid_op,
)
from .multiscale import MultiScaleConv

PRESETS = {
    "irm-ms": dict(enable_irm_branch=True, enable_ri_branch=False,
                   enable_multiscale=True, enable_attention=False),
    "ri-ms": dict(enable_irm_branch=False, enable_ri_branch=True,
                  enable_multiscale=True, enable_attention=False),
    "multi-ms": dict(enable_irm_branch=True, enable_ri_branch=True,
                     enable_multiscale=True, enable_attention=False),
    "multi-a": dict(enable_irm_branch=True, enable_ri_branch=True,
                    enable_multiscale=False, enable_attention=True),
    "multi-ms-a": dict(enable_irm_branch=True, enable_ri_branch=True,
                       enable_multiscale=True, enable_attention=True),
}


class ConfigError(ValueError):
    """Raised for inconsistent model or run configurations."""


@dataclass(frozen=True)
class ModelConfig:
    """Widths, depths and feature flags of the enhancement network.

    `scale_factor` shrinks every width (spectral bins included) for cheap
    structurally-identical models used in verification; the real pipeline
    keeps bins=257/frame_dim=512 and may reduce only the internal widths.
    """

    bins: int = 257
    frame_dim: int = 512
    feature_channels: int = 512
    trunk_kernel: int = 3
    trunk_dilations: tuple = (1, 3, 5)
    trunk_dense_out: int = 514
    fusion_out: int = 1028
    fusion_bands: int = 16
    fusion_kernel: int = 1
    fusion_dilation: int = 1
    edu_count: int = 3
    edu_dilations: tuple = (1, 3, 5)
    edu_kernel: int = 3
    edu_dim: int = 514
    edu_bands: int = 8
    enable_irm_branch: bool = True
    enable_ri_branch: bool = True
    enable_multiscale: bool = True
    enable_attention: bool = True
    dropout: float = 0.2
    scale_factor: float = 1.0
    dtype: str = "float32"

    def validate(self):
        if not (self.enable_irm_branch or self.enable_ri_branch):
            raise ConfigError("at least one branch must be enabled")
        if self.enable_attention and not (self.enable_irm_branch and self.enable_ri_branch):
            raise ConfigError("attention requires both branches")
        for d in (*self.trunk_dilations, *self.edu_dilations, self.fusion_dilation):
            if d < 1:
                raise ConfigError("dilations must be strictly positive")
        if len(self.edu_dilations) != self.edu_count:
            raise ConfigError("edu_dilations length must match edu_count")
        if self.edu_dim % 2:
            raise ConfigError("edu_dim must be even (gate factors are duplicated)")
        if self.edu_dim < self.edu_bands or self.fusion_out < self.fusion_bands:
            raise ConfigError("layer width smaller than its band count")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"unknown dtype {self.dtype!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        return self

    def effective(self):
        """Resolve scale_factor into concrete widths."""
        self.validate()
        if self.scale_factor == 1.0:
            return self
        s = self.scale_factor
        if s <= 0:
            raise ConfigError("scale_factor must be positive")

        def dim(v, lo=1):
            return max(lo, round(v * s))

        edu_dim = max(self.edu_bands, 2 * round(self.edu_dim * s / 2))
        edu_dim += edu_dim % 2
        return replace(
            self,
            bins=dim(self.bins, 4),
            frame_dim=dim(self.frame_dim, 4),
            feature_channels=dim(self.feature_channels),
            trunk_dense_out=dim(self.trunk_dense_out),
            fusion_out=dim(self.fusion_out, self.fusion_bands),
            edu_dim=edu_dim,
            scale_factor=1.0,
        ).validate()

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


def preset_config(name, **overrides) -> ModelConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return ModelConfig(**{**PRESETS[name], **overrides}).validate()


class PhaseDcn:
    """The assembled network; build is deterministic in (config, seed)."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.requested_config = cfg
        cfg = cfg.effective()
        self.cfg = cfg
        self.seed = seed
        rng = np.random.default_rng(seed)
        dt = cfg.np_dtype
        dp = cfg.dropout
        self._mixers = []

        def mixer(name, in_dim, out_dim, kernel, dilation):
            if cfg.enable_multiscale:
                bands = cfg.fusion_bands if name == "fusion" else cfg.edu_bands
                layer = MultiScaleConv(name, in_dim, out_dim, bands, kernel,
                                       dilation, dp, rng, dt)
            else:
                layer = ConvBlock(name, in_dim, out_dim, kernel, dilation, dp, rng, dt)
            self._mixers.append(layer)
            return layer

        self.trunk = []
        in_dim = cfg.frame_dim
        for j, d in enumerate(cfg.trunk_dilations):
            self.trunk.append(
                ConvBlock(f"trunk{j}", in_dim, cfg.feature_channels,
                          cfg.trunk_kernel, d, dp, rng, dt)
            )
            in_dim = cfg.feature_channels
        self.trunk_dense = Dense("trunk.dense", cfg.feature_channels,
                                 cfg.trunk_dense_out, rng, dt)

        fused_in = cfg.trunk_dense_out + cfg.bins + 2 * cfg.bins
        self.fusion = mixer("fusion", fused_in, cfg.fusion_out,
                            cfg.fusion_kernel, cfg.fusion_dilation)

        self.head_irm = self.head_ri = None
        self.irm_enc, self.irm_dec = [], []
        self.ri_enc, self.ri_dec = [], []
        self.gates = []
        if cfg.enable_irm_branch:
            self.head_irm = Dense("head.irm", cfg.fusion_out, cfg.bins, rng, dt)
            for i, d in enumerate(cfg.edu_dilations):
                self.irm_enc.append(mixer(f"irm.edu{i}.enc", 2 * cfg.bins,
                                          cfg.edu_dim, cfg.edu_kernel, d))
                self.irm_dec.append(Dense(f"irm.edu{i}.dec", cfg.edu_dim,
                                          cfg.bins, rng, dt))
        if cfg.enable_ri_branch:
            self.head_ri = Dense("head.ri", cfg.fusion_out, 2 * cfg.bins, rng, dt)
            for i, d in enumerate(cfg.edu_dilations):
                self.ri_enc.append(mixer(f"ri.edu{i}.enc", 4 * cfg.bins,
                                         cfg.edu_dim, cfg.edu_kernel, d))
                self.ri_dec.append(Dense(f"ri.edu{i}.dec", cfg.edu_dim,
                                         2 * cfg.bins, rng, dt))
        if cfg.enable_attention:
            for i in range(cfg.edu_count):
                self.gates.append(Dense(f"gate{i}", cfg.bins, cfg.edu_dim // 2, rng, dt))

    # -- structure ----------------------------------------------------------

    def _layers(self):
        out = list(self.trunk) + [self.trunk_dense, self.fusion]
        if self.head_irm is not None:
            out.append(self.head_irm)
            for enc, dec in zip(self.irm_enc, self.irm_dec):
                out.extend([enc, dec])
        if self.head_ri is not None:
            out.append(self.head_ri)
            for enc, dec in zip(self.ri_enc, self.ri_dec):
                out.extend([enc, dec])
        out.extend(self.gates)
        return out

    def params(self):
        out = []
        for layer in self._layers():
            out.extend(layer.params())
        return out

    def buffers(self):
        """(name, attr, owner) triples for BN running statistics."""
        out = []
        for layer in self._layers():
            if hasattr(layer, "buffers"):
                out.extend(layer.buffers())
        return out

    # -- forward ------------------------------------------------------------

    def forward(self, tape, y1, y2, y3, ctx):
        """Run the graph on Vars; returns (mask_estimate, ri_estimate)."""
        cfg = self.cfg
        h = y2
        for block in self.trunk:
            h = block.forward(tape, h, ctx)
        h = self.trunk_dense.forward(tape, h)
        z = self.fusion.forward(tape, concat_op(tape, [h, y1, y3]), ctx)

        irm_est = ri_est = None
        if self.head_irm is not None:
            irm_est = sigmoid_op(tape, self.head_irm.forward(tape, z))
        if self.head_ri is not None:
            ri_est = self.head_ri.forward(tape, z)

        for i in range(cfg.edu_count):
            if self.head_irm is not None:
                enc = self.irm_enc[i].forward(tape, concat_op(tape, [irm_est, y1]), ctx)
                irm_est = sigmoid_op(tape, self.irm_dec[i].forward(tape, enc))
            if self.head_ri is not None:
                enc = self.ri_enc[i].forward(tape, concat_op(tape, [ri_est, y3]), ctx)
                if self.gates:
                    a = sigmoid_op(tape, self.gates[i].forward(tape, irm_est))
                    enc = mul_op(tape, enc, concat_op(tape, [a, a]))
                ri_est = self.ri_dec[i].forward(tape, enc)
        return irm_est, ri_est

    def infer(self, y1, y2, y3):
        """Inference on one utterance of (T, dim) arrays; returns ndarrays."""
        dt = self.cfg.np_dtype
        n = y1.shape[0]
        tape = Tape()
        ctx = ForwardContext(training=False, segments=SegmentContext([n]))
        irm_est, ri_est = self.forward(
            tape,
            Var(np.asarray(y1, dtype=dt)),
            Var(np.asarray(y2, dtype=dt)),
            Var(np.asarray(y3, dtype=dt)),
            ctx,
        )
        return (
            None if irm_est is None else irm_est.value,
            None if ri_est is None else ri_est.value,
        )

    def loss(self, tape, irm_est, ri_est, irm_target, ri_target):
        """Equal-weight sum of per-branch MSE losses; also returns the parts."""
        parts = {}
        total = None
        if irm_est is not None:
            parts["irm"] = mse_op(tape, irm_est, irm_target)
            total = parts["irm"]
        if ri_est is not None:
            parts["ri"] = mse_op(tape, ri_est, ri_target)
            total = parts["ri"] if total is None else add_scalars_op(tape, total, parts["ri"])
        return total, parts

    # -- complexity ---------------------------------------------------------

    def count_params_flops(self):
        """(parameter count, FLOPs per frame): 2 per MAC, 4 per BN channel,
        1 per activation."""
        params = sum(layer.param_count() for layer in self._layers())
        flops = sum(layer.flops_per_frame() for layer in self._layers())
        cfg = self.cfg
        if self.head_irm is not None:
            flops += cfg.bins * (1 + cfg.edu_count)  # sigmoid heads
        if self.gates:
            flops += cfg.edu_count * (cfg.edu_dim // 2)
        return params, flops

    def layer_table(self):
        """Per-layer (name, params, flops/frame) rows for reporting."""
        rows = []
        for layer in self._layers():
            name = getattr(layer, "name", None)
            if name is None:
                for p in layer.params()[:1]:
                    name = p.name.rsplit(".", 1)[0]
            rows.append((name, layer.param_count(), layer.flops_per_frame()))
        return rows


def build_model(cfg: ModelConfig, seed: int = 0) -> PhaseDcn:
    return PhaseDcn(cfg, seed)


# ---------------------------------------------------------------------------
# receptive field
# ---------------------------------------------------------------------------


def expected_receptive_field(cfg: ModelConfig) -> int:
    """Past-inclusive receptive field (frames) implied by the layer graph.

    Chained sub-band convolutions compound: a multi-scale layer's reach is
    2*bands*dilation*(kernel-1) because each directional pass routes through
    every band in sequence.
    """
    cfg = cfg.effective()
    reach = sum(d * (cfg.trunk_kernel - 1) for d in cfg.trunk_dilations)

    def mixer_reach(bands, kernel, dilation):
        if cfg.enable_multiscale:
            return 2 * bands * dilation * (kernel - 1)
        return dilation * (kernel - 1)

    reach += mixer_reach(cfg.fusion_bands, cfg.fusion_kernel, cfg.fusion_dilation)
    for d in cfg.edu_dilations:
        reach += mixer_reach(cfg.edu_bands, cfg.edu_kernel, d)
    return reach + 1


def measure_receptive_field(model: PhaseDcn, margin: int = 12, seed: int = 0):
    """Perturbation-measured past receptive field of the built model.

    Perturbs the first frame of every input stream and reports 1 + the last
    output frame that changes at all. Returns (measured, anticausal_leak)
    where the leak is the largest output change at frames before the
    perturbed one when perturbing mid-sequence (exactly 0 for a causal net).
    """
    cfg = model.cfg
    n = expected_receptive_field(cfg) + margin
    rng = np.random.default_rng(seed)
    dt = cfg.np_dtype
    y1 = rng.standard_normal((n, cfg.bins)).astype(dt)
    y2 = rng.standard_normal((n, cfg.frame_dim)).astype(dt)
    y3 = rng.standard_normal((n, 2 * cfg.bins)).astype(dt)

    def run(a, b, c):
        irm_est, ri_est = model.infer(a, b, c)
        outs = [o for o in (irm_est, ri_est) if o is not None]
        return np.concatenate(outs, axis=1)

    base = run(y1, y2, y3)

    p1, p2, p3 = y1.copy(), y2.copy(), y3.copy()
    for arr in (p1, p2, p3):
        arr[0] += 1.0
    diff = np.abs(run(p1, p2, p3) - base).max(axis=1)
    changed = np.nonzero(diff > 0)[0]
    measured = int(changed[-1]) + 1 if changed.size else 0

    t_mid = n // 2
    p1, p2, p3 = y1.copy(), y2.copy(), y3.copy()
    for arr in (p1, p2, p3):
        arr[t_mid] += 1.0
    leak = float(np.abs(run(p1, p2, p3) - base)[:t_mid].max())
    return measured, leak


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_FORMAT = "phasedcn-checkpoint"


def _entries(model, optimizer):
    out = [(p.name, "param", p, None) for p in model.params()]
    for name, attr, owner in model.buffers():
        out.append((name, "buffer", owner, attr))
    if optimizer is not None:
        for p in model.params():
            out.append((p.name + "#adam_m", "adam_m", optimizer.m, p.name))
        for p in model.params():
            out.append((p.name + "#adam_v", "adam_v", optimizer.v, p.name))
    return out


def _entry_array(kind, holder, key):
    if kind == "param":
        return holder.value
    if kind == "buffer":
        return getattr(holder, key)
    return holder[key]


def save_checkpoint(stem, model, optimizer=None, step=0, rng=None, extra=None):
    """Write `<stem>.json` + `<stem>.bin`; see the module docstring."""
    stem = str(stem)
    entries = _entries(model, optimizer)
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "version": 1,
        "dtype": model.cfg.dtype,
        "step": int(step),
        "seed": int(model.seed),
        "config": asdict(model.requested_config),
        "hyperparameters": None
        if optimizer is None
        else {
            "lr": optimizer.lr,
            "beta1": optimizer.beta1,
            "beta2": optimizer.beta2,
            "eps": optimizer.eps,
            "step_count": optimizer.step_count,
        },
        "rng_state": None if rng is None else rng.bit_generator.state,
        "extra": extra or {},
        "entries": [
            {"name": name, "kind": kind, "shape": list(_entry_array(kind, h, k).shape)}
            for name, kind, h, k in entries
        ],
    }
    with open(stem + ".json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    with open(stem + ".bin", "wb") as fh:
        for _, kind, holder, key in entries:
            fh.write(np.ascontiguousarray(_entry_array(kind, holder, key), dtype="<f4").tobytes())


def load_checkpoint(stem, with_optimizer=False):
    """Rebuild (model, optimizer|None, manifest) from a checkpoint pair."""
    stem = str(stem)
    with open(stem + ".json", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{stem}.json: not a checkpoint manifest")
    raw = manifest["config"]
    raw["trunk_dilations"] = tuple(raw["trunk_dilations"])
    raw["edu_dilations"] = tuple(raw["edu_dilations"])
    model = PhaseDcn(ModelConfig(**raw), seed=manifest["seed"])
    # the blob always holds whatever was saved, so rebuild the optimizer
    # whenever the manifest carries one and drop it afterwards if unwanted
    optimizer = None
    hp = manifest.get("hyperparameters")
    if hp is not None:
        optimizer = Adam(model.params(), lr=hp["lr"], beta1=hp["beta1"],
                         beta2=hp["beta2"], eps=hp["eps"])
        optimizer.step_count = hp["step_count"]
    entries = _entries(model, optimizer)
    if [e["name"] for e in manifest["entries"]] != [name for name, *_ in entries]:
        raise ValueError(f"{stem}: manifest entries do not match the rebuilt model")
    dt = model.cfg.np_dtype
    with open(stem + ".bin", "rb") as fh:
        for (name, kind, holder, key), meta in zip(entries, manifest["entries"]):
            shape = tuple(meta["shape"])
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(fh.read(4 * count), dtype="<f4").reshape(shape).astype(dt)
            if kind == "param":
                holder.value = arr
            elif kind == "buffer":
                setattr(holder, key, arr)
            else:
                holder[key] = arr
        if fh.read(1):
            raise ValueError(f"{stem}.bin: trailing bytes")
    return model, optimizer if with_optimizer else None, manifest
