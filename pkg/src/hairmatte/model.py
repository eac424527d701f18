"""HairSegNet / HairMatteNet: fully convolutional MobileNet encoder-decoders.

A :class:`Model` is a flat list of steps (convolutions, 2x upsampling, skip
taps and skip merges) interpreted by :meth:`Model.forward`. Keeping the graph
declarative makes shape, MAC and receptive-field accounting a walk over the
same list that the forward pass executes.
"""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .ops import (
    ConvParams,
    RunningStats,
    batch_norm,
    conv2d,
    conv_macs,
    conv_output_size,
    kaiming_uniform,
    softmax_channels,
    upsample_replicate2x,
)
from .tensor import DimensionError, Tensor, add, no_grad, relu

VARIANTS = ("hairsegnet", "hairmattenet")
DECODER_DEPTHS = (16, 32, 64, 128)

# MobileNet v1 body after the stem: (pointwise out channels, depthwise stride).
MOBILENET_BLOCKS = (
    (64, 1), (128, 2), (128, 1), (256, 2), (256, 1), (512, 2),
    (512, 1), (512, 1), (512, 1), (512, 1), (512, 1),
    (1024, 2), (1024, 1),
)
STEM_CHANNELS = 32
# Encoder channel depth the inner skip adapter maps to, before width scaling.
INNER_SKIP_DEPTH = 1024


class SpecError(ValueError):
    """Invalid ModelSpec; ``violations`` lists every failed constraint."""

    def __init__(self, violations: list[str]):
        self.violations = violations
        super().__init__("invalid model spec: " + "; ".join(violations))


@dataclass(frozen=True)
class ModelSpec:
    variant: str = "hairmattenet"
    input_size: int = 224
    num_classes: int = 2
    width_multiplier: float = 1.0
    decoder_depth: int = 64
    use_batchnorm: bool = True

    def violations(self) -> list[str]:
        out = []
        if self.variant not in VARIANTS:
            out.append(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.input_size < 32 or self.input_size % 32:
            out.append(f"input_size must be a positive multiple of 32, got {self.input_size}")
        if self.num_classes < 2:
            out.append(f"num_classes must be >= 2, got {self.num_classes}")
        if not 0 < self.width_multiplier <= 1:
            out.append(f"width_multiplier must be in (0, 1], got {self.width_multiplier}")
        if self.decoder_depth not in DECODER_DEPTHS:
            out.append(f"decoder_depth must be one of {DECODER_DEPTHS}, got {self.decoder_depth}")
        return out

    def validate(self) -> "ModelSpec":
        bad = self.violations()
        if bad:
            raise SpecError(bad)
        return self

    def channels(self, base: int) -> int:
        return max(1, int(base * self.width_multiplier))

    def to_text(self) -> str:
        """Canonical text form (sorted-key JSON); stable across save/load."""
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, data: dict) -> "ModelSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise SpecError([f"unknown spec field(s): {sorted(unknown)}"])
        return cls(**data)

    @classmethod
    def from_text(cls, text: str) -> "ModelSpec":
        return cls.from_dict(json.loads(text))


@dataclass
class ConvLayer:
    """One convolution plus its optional batch norm and ReLU.

    ``role`` is one of ``conv`` (dense 3x3), ``depthwise``, ``pointwise``,
    ``adapter`` (1x1 skip projection) or ``final`` (class logits).
    """

    name: str
    in_c: int
    out_c: int
    kernel: int
    role: str
    stride: int = 1
    dilation: int = 1
    batchnorm: bool = False
    relu: bool = False
    bias: bool = False

    @property
    def groups(self) -> int:
        return self.in_c if self.role == "depthwise" else 1

    @property
    def regularized(self) -> bool:
        # L2 applies to dense and 1x1 kernels; depthwise and the logits layer are exempt.
        return self.role in ("conv", "pointwise", "adapter")


@dataclass
class Conv:
    layer: ConvLayer


@dataclass
class Upsample:
    pass


@dataclass
class Tap:
    """Remember the current activation as a skip source."""

    tag: str


@dataclass
class SkipMerge:
    """current += adapter(saved[source])."""

    adapter: ConvLayer
    source: str


@dataclass
class SkipEdge:
    source_layer: str
    resolution: int
    adapter: ConvLayer


@dataclass
class Model:
    spec: ModelSpec
    steps: list
    params: dict[str, Tensor] = field(default_factory=dict)
    stats: dict[str, RunningStats] = field(default_factory=dict)
    encoder_end: int = 0

    # -- structure -----------------------------------------------------------
    def conv_layers(self) -> list[ConvLayer]:
        out = []
        for st in self.steps:
            if isinstance(st, Conv):
                out.append(st.layer)
            elif isinstance(st, SkipMerge):
                out.append(st.adapter)
        return out

    @property
    def skip_edges(self) -> list[SkipEdge]:
        taps = {}
        res = self.spec.input_size
        edges = []
        for st in self.steps:
            if isinstance(st, Conv):
                res = conv_output_size(res, st.layer.kernel, st.layer.stride, st.layer.dilation, "same")[0]
                last = st.layer.name
            elif isinstance(st, Upsample):
                res *= 2
            elif isinstance(st, Tap):
                taps[st.tag] = last
            elif isinstance(st, SkipMerge):
                edges.append(SkipEdge(taps[st.source], res, st.adapter))
        return edges

    def parameters(self) -> list[tuple[str, Tensor]]:
        return list(self.params.items())

    @property
    def param_count(self) -> int:
        return sum(t.size for t in self.params.values())

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Every persistent array in a fixed order: parameters, then running stats."""
        out = {name: t.data for name, t in self.params.items()}
        for name, rs in self.stats.items():
            out[f"{name}.running_mean"] = rs.mean
            out[f"{name}.running_var"] = rs.var
        return out

    @property
    def param_bytes(self) -> int:
        return sum(a.nbytes for a in self.state_arrays().values())

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        expected = self.state_arrays()
        missing = set(expected) - set(arrays)
        extra = set(arrays) - set(expected)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)[:5]} extra={sorted(extra)[:5]}")
        for name, arr in arrays.items():
            if arr.shape != expected[name].shape:
                raise DimensionError("load_state", name, expected[name].shape, arr.shape)
        for name, t in self.params.items():
            t.data = np.array(arrays[name], dtype=t.dtype)
        for name, rs in self.stats.items():
            rs.mean = np.array(arrays[f"{name}.running_mean"], dtype=rs.mean.dtype)
            rs.var = np.array(arrays[f"{name}.running_var"], dtype=rs.var.dtype)

    def copy(self) -> "Model":
        return copy.deepcopy(self)

    def astype(self, dtype) -> "Model":
        m = self.copy()
        for t in m.params.values():
            t.data = t.data.astype(dtype)
        for rs in m.stats.values():
            rs.mean, rs.var = rs.mean.astype(dtype), rs.var.astype(dtype)
        return m

    # -- analytic accounting -------------------------------------------------
    def shape_table(self) -> list[tuple[str, tuple[int, int, int]]]:
        """(step label, (c, h, w)) after every step, derived from the spec alone."""
        c, h, w = 3, self.spec.input_size, self.spec.input_size
        saved: dict[str, tuple[int, int, int]] = {}
        rows = []
        for i, st in enumerate(self.steps):
            if isinstance(st, Conv):
                ly = st.layer
                h = conv_output_size(h, ly.kernel, ly.stride, ly.dilation, "same")[0]
                w = conv_output_size(w, ly.kernel, ly.stride, ly.dilation, "same")[0]
                c = ly.out_c
                rows.append((ly.name, (c, h, w)))
            elif isinstance(st, Upsample):
                h, w = 2 * h, 2 * w
                rows.append((f"up{i}", (c, h, w)))
            elif isinstance(st, Tap):
                saved[st.tag] = (c, h, w)
            elif isinstance(st, SkipMerge):
                src = saved[st.source]
                if src[1:] != (h, w) or st.adapter.out_c != c:
                    raise DimensionError("skip", st.adapter.name, (c, h, w), src)
                rows.append((st.adapter.name, (c, h, w)))
        return rows

    @property
    def encoder_shape(self) -> tuple[int, int, int]:
        table = self.shape_table()
        enc = [r for r in table if r[0].startswith("enc.")]
        return enc[-1][1]

    def macs(self) -> int:
        c, h, w = 3, self.spec.input_size, self.spec.input_size
        total = 0
        saved = {}
        for st in self.steps:
            if isinstance(st, Conv):
                ly = st.layer
                h = conv_output_size(h, ly.kernel, ly.stride, ly.dilation, "same")[0]
                w = conv_output_size(w, ly.kernel, ly.stride, ly.dilation, "same")[0]
                total += conv_macs(ly.in_c, ly.out_c, ly.kernel, ly.groups, h, w)
            elif isinstance(st, Upsample):
                h, w = 2 * h, 2 * w
            elif isinstance(st, Tap):
                saved[st.tag] = (h, w)
            elif isinstance(st, SkipMerge):
                ad = st.adapter
                total += conv_macs(ad.in_c, ad.out_c, 1, 1, *saved[st.source])
        return total

    def encoder_receptive_field(self) -> int:
        rf, jump = 1, 1
        for st in self.steps[: self.encoder_end]:
            if isinstance(st, Conv):
                ly = st.layer
                rf += ly.dilation * (ly.kernel - 1) * jump
                jump *= ly.stride
        return rf

    # -- execution -----------------------------------------------------------
    def _conv(self, ly: ConvLayer, x: Tensor, training: bool) -> Tensor:
        p = ConvParams(
            self.params[f"{ly.name}.kernel"],
            self.params.get(f"{ly.name}.bias"),
            stride=ly.stride,
            dilation=ly.dilation,
            groups=ly.groups,
            padding="same",
        )
        y = conv2d(x, p)
        if ly.batchnorm and self.spec.use_batchnorm:
            y = batch_norm(
                y,
                self.params[f"{ly.name}.bn.scale"],
                self.params[f"{ly.name}.bn.shift"],
                self.stats[f"{ly.name}.bn"],
                training,
            )
        if ly.relu:
            y = relu(y)
        return y

    def logits(self, x: Tensor, training: bool = False, trace: list | None = None) -> Tensor:
        if x.ndim != 4 or x.shape[1] != 3:
            raise DimensionError("forward", "channels", 3, x.shape[1] if x.ndim == 4 else x.shape)
        s = self.spec.input_size
        if x.shape[2] != s:
            raise DimensionError("forward", "height", s, x.shape[2])
        if x.shape[3] != s:
            raise DimensionError("forward", "width", s, x.shape[3])
        saved: dict[str, Tensor] = {}
        for i, st in enumerate(self.steps):
            if isinstance(st, Conv):
                x = self._conv(st.layer, x, training)
                label = st.layer.name
            elif isinstance(st, Upsample):
                x = upsample_replicate2x(x)
                label = f"up{i}"
            elif isinstance(st, Tap):
                saved[st.tag] = x
                continue
            else:
                x = add(x, self._conv(st.adapter, saved[st.source], training))
                label = st.adapter.name
            if trace is not None:
                trace.append((label, tuple(x.shape[1:])))
        return x

    def forward(self, x, training: bool = False, trace: list | None = None) -> Tensor:
        """Per-pixel class probabilities, shape ``(n, num_classes, s, s)``."""
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        return softmax_channels(self.logits(x, training, trace))

    __call__ = forward

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def predict(self, x) -> np.ndarray:
        with no_grad():
            return self.forward(x, training=False).data


def forward(model: Model, batch, training: bool = False) -> Tensor:
    return model.forward(batch, training=training)


# -- builders ----------------------------------------------------------------
def _encoder(spec: ModelSpec, dilate_last: int) -> list[ConvLayer]:
    """MobileNet v1 body without pool/FC; the last ``dilate_last`` stride-2 stages run at stride 1.

    Each layer's dilation equals how much its input resolution grew relative to
    the unmodified network, so the receptive field is unchanged.
    """
    stem = spec.channels(STEM_CHANNELS)
    layers = [ConvLayer("enc.conv0", 3, stem, 3, "conv", stride=2, batchnorm=True, relu=True)]
    c = stem
    for i, (base, stride) in enumerate(MOBILENET_BLOCKS, start=1):
        out = spec.channels(base)
        layers.append(ConvLayer(f"enc.b{i}.dw", c, c, 3, "depthwise", stride=stride, batchnorm=True, relu=True))
        layers.append(ConvLayer(f"enc.b{i}.pw", c, out, 1, "pointwise", batchnorm=True, relu=True))
        c = out
    strided = [ly for ly in layers if ly.stride == 2]
    converted = {ly.name for ly in strided[len(strided) - dilate_last:]} if dilate_last else set()
    factor = 1
    for ly in layers:
        if ly.kernel > 1:
            ly.dilation = factor
        if ly.name in converted:
            ly.stride = 1
            factor *= 2
    return layers


def _decoder_stage(name: str, in_c: int, depth: int) -> list[Conv]:
    return [
        Conv(ConvLayer(f"{name}.dw", in_c, in_c, 3, "depthwise")),
        Conv(ConvLayer(f"{name}.pw", in_c, depth, 1, "pointwise", batchnorm=True, relu=True)),
    ]


def _final(spec: ModelSpec) -> Conv:
    return Conv(ConvLayer("dec.logits", spec.decoder_depth, spec.num_classes, 1, "final", bias=True))


def _init(model: Model, seed: int) -> Model:
    rng = np.random.default_rng(seed)
    for ly in model.conv_layers():
        shape = (ly.out_c, ly.in_c // ly.groups, ly.kernel, ly.kernel)
        model.params[f"{ly.name}.kernel"] = Tensor(kaiming_uniform(shape, rng), requires_grad=True)
        if ly.bias:
            model.params[f"{ly.name}.bias"] = Tensor(np.zeros(ly.out_c, np.float32), requires_grad=True)
        if ly.batchnorm and model.spec.use_batchnorm:
            model.params[f"{ly.name}.bn.scale"] = Tensor(np.ones(ly.out_c, np.float32), requires_grad=True)
            model.params[f"{ly.name}.bn.shift"] = Tensor(np.zeros(ly.out_c, np.float32), requires_grad=True)
            model.stats[f"{ly.name}.bn"] = RunningStats.fresh(ly.out_c)
    return model


def build_hairsegnet(spec: ModelSpec, seed: int = 0) -> Model:
    spec.validate()
    if spec.variant != "hairsegnet":
        raise SpecError([f"build_hairsegnet needs variant 'hairsegnet', got {spec.variant!r}"])
    steps: list = [Conv(ly) for ly in _encoder(spec, dilate_last=2)]
    encoder_end = len(steps)
    c = steps[-1].layer.out_c
    for k in range(1, 4):
        steps.append(Upsample())
        steps.extend(_decoder_stage(f"dec.s{k}", c, spec.decoder_depth))
        c = spec.decoder_depth
    steps.append(_final(spec))
    return _init(Model(spec, steps, encoder_end=encoder_end), seed)


def build_hairmattenet(spec: ModelSpec, seed: int = 0) -> Model:
    """Unmodified-stride encoder, five upsampling stages and four additive skips.

    Each skip source is the deepest encoder layer at the merge resolution; the
    merge happens right after the decoder's upsample, where the first stage
    still carries the encoder's full depth and later stages carry
    ``decoder_depth`` channels.
    """
    spec.validate()
    if spec.variant != "hairmattenet":
        raise SpecError([f"build_hairmattenet needs variant 'hairmattenet', got {spec.variant!r}"])
    enc = _encoder(spec, dilate_last=0)
    # deepest encoder layer per output resolution
    deepest: dict[int, ConvLayer] = {}
    res = spec.input_size
    for ly in enc:
        res = conv_output_size(res, ly.kernel, ly.stride, ly.dilation, "same")[0]
        deepest[res] = ly
    s = spec.input_size
    bottleneck = s // 32
    merge_at = {bottleneck * 2 ** k for k in range(1, 5)}
    sources = {deepest[r].name for r in merge_at if r in deepest}
    steps: list = []
    for ly in enc:
        steps.append(Conv(ly))
        if ly.name in sources:
            steps.append(Tap(ly.name))
    encoder_end = len(steps)

    c = enc[-1].out_c
    res = bottleneck
    for k in range(1, 6):
        steps.append(Upsample())
        res *= 2
        src = deepest.get(res)
        if res in merge_at and src is not None:
            target = spec.channels(INNER_SKIP_DEPTH) if k == 1 else spec.decoder_depth
            adapter = ConvLayer(f"dec.skip{k}", src.out_c, target, 1, "adapter", bias=True)
            steps.append(SkipMerge(adapter, src.name))
        steps.extend(_decoder_stage(f"dec.s{k}", c, spec.decoder_depth))
        c = spec.decoder_depth
    steps.append(_final(spec))
    return _init(Model(spec, steps, encoder_end=encoder_end), seed)


def build_model(spec: ModelSpec, seed: int = 0) -> Model:
    spec.validate()
    if spec.variant == "hairsegnet":
        return build_hairsegnet(spec, seed)
    return build_hairmattenet(spec, seed)
