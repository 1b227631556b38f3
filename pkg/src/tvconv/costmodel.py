"""Analytic cost model: multiply-accumulate and parameter counts.

Counting conventions:
  - A MAC is one multiply-accumulate. Elementwise work (ReLU, layer norm,
    residual adds) is not counted.
  - Per-position filtering does exactly the multiplies of a shared depthwise
    filter of the same size, so its steady-state MACs equal the depthwise
    count. Producing the weight field costs extra, but only once per frozen
    network (or once per update during training), so `network_cost` reports
    it separately as `one_time_generation_macs` instead of folding it into
    the per-image total.
  - Parameter counts include layer-norm scale and offset pairs but no
    convolution biases (the filter paths are bias-free).

Architectures are described by `ArchSpec`, a linear chain of blocks with a
width multiplier applied at costing time (channels snap to multiples of 8;
see `round8`). The same chain can be costed with shared depthwise filters or
with per-position filters by flipping each block's `op` field, which is how
the matched-budget comparisons are generated.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from . import report

BLOCK_KINDS = ("plain", "inverted-residual")
BODY_OPS = ("depthwise", "tvconv")


class ArchError(ValueError):
    """Malformed architecture description."""


# --- single-op costs ---------------------------------------------------------

@dataclass(frozen=True)
class OpSpec:
    """Shape description for one operator; unused fields stay None."""

    kind: str
    c: int | None = None
    c_in: int | None = None
    c_out: int | None = None
    h: int | None = None
    w: int | None = None
    k: int | None = None
    affinity_channels: int | None = None
    gen_depth: int | None = None
    gen_width: int | None = None
    gen_kernel: int | None = None


def _need(spec: OpSpec, *names: str) -> list[int]:
    vals = []
    for name in names:
        v = getattr(spec, name)
        if v is None:
            raise ValueError(f"op kind '{spec.kind}' requires field '{name}'")
        vals.append(v)
    return vals


def generator_macs(c: int, k: int, h: int, w: int, affinity_channels: int,
                   depth: int, width: int, k_gen: int) -> int:
    """MACs to produce one weight field of c*k*k filters on an h*w map."""
    rows = c * k * k
    kk = k_gen * k_gen
    if depth == 0:
        return affinity_channels * rows * h * w * kk
    total = affinity_channels * width * h * w * kk
    total += (depth - 1) * width * width * h * w * kk
    total += width * rows * h * w * kk
    return total


def generator_params(c: int, k: int, affinity_channels: int,
                     depth: int, width: int, k_gen: int) -> int:
    """Weights of the field generator alone (affinity maps not included)."""
    rows = c * k * k
    kk = k_gen * k_gen
    if depth == 0:
        return affinity_channels * rows * kk
    total = affinity_channels * width * kk + 2 * width
    total += (depth - 1) * (width * width * kk + 2 * width)
    total += width * rows * kk
    return total


def op_macs(spec: OpSpec) -> int:
    if spec.kind == "depthwise":
        c, h, w, k = _need(spec, "c", "h", "w", "k")
        return c * h * w * k * k
    if spec.kind == "pointwise":
        ci, co, h, w = _need(spec, "c_in", "c_out", "h", "w")
        return ci * co * h * w
    if spec.kind == "conv":
        ci, co, h, w, k = _need(spec, "c_in", "c_out", "h", "w", "k")
        return ci * co * h * w * k * k
    if spec.kind == "tvconv_apply":
        c, h, w, k = _need(spec, "c", "h", "w", "k")
        return c * h * w * k * k
    if spec.kind == "tvconv_generate":
        c, h, w, k, ca, d, gw, kg = _need(
            spec, "c", "h", "w", "k", "affinity_channels",
            "gen_depth", "gen_width", "gen_kernel")
        return generator_macs(c, k, h, w, ca, d, gw, kg)
    raise ValueError(f"unknown op kind '{spec.kind}'")


def op_params(spec: OpSpec) -> int:
    if spec.kind == "depthwise":
        c, k = _need(spec, "c", "k")
        return c * k * k
    if spec.kind == "pointwise":
        ci, co = _need(spec, "c_in", "c_out")
        return ci * co
    if spec.kind == "conv":
        ci, co, k = _need(spec, "c_in", "c_out", "k")
        return ci * co * k * k
    if spec.kind == "tvconv":
        c, k, h, w, ca, d, gw, kg = _need(
            spec, "c", "k", "h", "w", "affinity_channels",
            "gen_depth", "gen_width", "gen_kernel")
        return ca * h * w + generator_params(c, k, ca, d, gw, kg)
    raise ValueError(f"unknown op kind '{spec.kind}'")


# --- architectures -----------------------------------------------------------

def round8(v: float) -> int:
    """Snap a scaled channel count to a multiple of 8 (minimum 8), bumping
    up whenever plain rounding would land below 90% of the request."""
    out = max(8, int(v + 4) // 8 * 8)
    if out < 0.9 * v:
        out += 8
    return out


@dataclass(frozen=True)
class BlockSpec:
    kind: str        # plain (dense conv) | inverted-residual
    c_in: int        # unscaled; width multiplier applied at costing time
    c_out: int
    k: int
    stride: int
    expand: int      # hidden = c_in * expand; ignored by plain blocks
    op: str          # spatial operator where the block has a depthwise slot


@dataclass(frozen=True)
class ArchSpec:
    width: float
    input_shape: tuple[int, int, int]       # channels, height, width
    blocks: tuple[BlockSpec, ...]
    head_embed: int | None = None           # global dw + pointwise embedding
    classes: int = 0                        # classifier on the embedding
    gen_affinity: int = 4                   # generator shape for tvconv slots
    gen_depth: int = 3
    gen_width: int = 64
    gen_kernel: int = 3


@dataclass
class BlockCost:
    name: str
    macs: int
    params: int
    out_h: int
    out_w: int
    activation_elems: int


@dataclass
class CostReport:
    blocks: list[BlockCost] = field(default_factory=list)
    total_macs: int = 0
    total_params: int = 0
    one_time_generation_macs: int = 0
    peak_activation_elems: int = 0

    def kv(self) -> dict[str, str]:
        return {
            "total_macs": str(self.total_macs),
            "total_params": str(self.total_params),
            "one_time_generation_macs": str(self.one_time_generation_macs),
            "peak_activation_elems": str(self.peak_activation_elems),
        }

    def table(self) -> str:
        rows = [[b.name, f"{b.out_h}x{b.out_w}", b.macs, b.params]
                for b in self.blocks]
        rows.append(["total", "", self.total_macs, self.total_params])
        out = report.format_table(["block", "out", "macs", "params"], rows)
        out += f"one_time_generation_macs={self.one_time_generation_macs}\n"
        out += f"peak_activation_elems={self.peak_activation_elems}\n"
        return out


def _block_cost(spec: ArchSpec, b: BlockSpec, idx: int, c_in: int,
                h: int, w: int) -> tuple[BlockCost, int, int, int, int]:
    """Cost one block. Returns (cost, scaled c_out, out_h, out_w, gen_macs)."""
    if b.kind not in BLOCK_KINDS:
        raise ArchError(f"block {idx + 1}: unknown kind '{b.kind}'")
    if b.kind != "plain" and b.op not in ("depthwise", "tvconv"):
        raise ArchError(f"block {idx + 1}: unknown op '{b.op}'")
    if h % b.stride or w % b.stride:
        raise ArchError(
            f"block {idx + 1}: stride {b.stride} does not divide {h}x{w}")
    oh, ow = h // b.stride, w // b.stride
    c_out = round8(b.c_out * spec.width)
    macs = 0
    params = 0
    gen = 0
    inter = 0

    if b.kind == "plain":
        macs += op_macs(OpSpec("conv", c_in=c_in, c_out=c_out, h=oh, w=ow, k=b.k))
        params += op_params(OpSpec("conv", c_in=c_in, c_out=c_out, k=b.k))
    else:
        hidden = c_in * b.expand
        if b.expand != 1:
            macs += op_macs(OpSpec("pointwise", c_in=c_in, c_out=hidden, h=h, w=w))
            params += op_params(OpSpec("pointwise", c_in=c_in, c_out=hidden))
            inter = max(inter, hidden * h * w)
        if b.op == "depthwise":
            macs += op_macs(OpSpec("depthwise", c=hidden, h=oh, w=ow, k=b.k))
            params += op_params(OpSpec("depthwise", c=hidden, k=b.k))
        else:
            tv = OpSpec("tvconv", c=hidden, h=oh, w=ow, k=b.k,
                        affinity_channels=spec.gen_affinity,
                        gen_depth=spec.gen_depth, gen_width=spec.gen_width,
                        gen_kernel=spec.gen_kernel)
            macs += op_macs(OpSpec("tvconv_apply", c=hidden, h=oh, w=ow, k=b.k))
            params += op_params(tv)
            gen = generator_macs(hidden, b.k, oh, ow, spec.gen_affinity,
                                 spec.gen_depth, spec.gen_width, spec.gen_kernel)
        inter = max(inter, hidden * oh * ow)
        macs += op_macs(OpSpec("pointwise", c_in=hidden, c_out=c_out, h=oh, w=ow))
        params += op_params(OpSpec("pointwise", c_in=hidden, c_out=c_out))

    act = c_in * h * w + c_out * oh * ow + inter
    cost = BlockCost(f"b{idx + 1}.{b.kind}", macs, params, oh, ow, act)
    return cost, c_out, oh, ow, gen


def network_cost(spec: ArchSpec) -> CostReport:
    if not spec.blocks:
        raise ArchError("architecture has no blocks")
    c0, h, w = spec.input_shape
    if spec.blocks[0].c_in != c0:
        raise ArchError(
            f"block 1 expects {spec.blocks[0].c_in} input channels but the "
            f"network input has {c0}")
    rep = CostReport()
    c = c0  # raw input channels are never width-scaled
    for i, b in enumerate(spec.blocks):
        if i and b.c_in != spec.blocks[i - 1].c_out:
            raise ArchError(
                f"block {i + 1}: cin={b.c_in} does not chain from previous "
                f"cout={spec.blocks[i - 1].c_out}")
        cost, c, h, w, gen = _block_cost(spec, b, i, c, h, w)
        rep.blocks.append(cost)
        rep.total_macs += cost.macs
        rep.total_params += cost.params
        rep.one_time_generation_macs += gen

    if spec.head_embed is not None:
        gdw = c * h * w                       # one h*w filter per channel
        pw = c * spec.head_embed
        rep.blocks.append(BlockCost("head", gdw + pw, gdw + pw, 1, 1,
                                    c * h * w + c + spec.head_embed))
        rep.total_macs += gdw + pw
        rep.total_params += gdw + pw
        c, h, w = spec.head_embed, 1, 1
    if spec.classes:
        fc = c * spec.classes
        rep.blocks.append(BlockCost("classifier", fc, fc, 1, 1, c + spec.classes))
        rep.total_macs += fc
        rep.total_params += fc

    rep.peak_activation_elems = max(b.activation_elems for b in rep.blocks)
    return rep


# --- the width-scaled reference network --------------------------------------

# expand / channels / repeats / first stride, after a stride-1 dense stem
_MOBILENET_TABLE = (
    (1, 16, 1, 1),
    (6, 24, 2, 2),
    (6, 32, 3, 2),
    (6, 64, 4, 2),
    (6, 96, 3, 1),
    (6, 160, 3, 2),
    (6, 320, 1, 1),
)


def mobilenet_v2(width: float, in_hw: int = 96, classes: int = 10575,
                 op: str = "depthwise") -> ArchSpec:
    """Inverted-residual reference chain for 96x96 face-sized inputs: dense
    stem, the standard bottleneck table, then a global-depthwise head into a
    512-dim embedding and a classifier."""
    blocks = [BlockSpec("plain", 3, 32, 3, 1, 1, "depthwise")]
    c_prev = 32
    for expand, c, repeats, stride in _MOBILENET_TABLE:
        for j in range(repeats):
            blocks.append(BlockSpec("inverted-residual", c_prev, c, 3,
                                    stride if j == 0 else 1, expand, op))
            c_prev = c
    return ArchSpec(width, (3, in_hw, in_hw), tuple(blocks),
                    head_embed=512, classes=classes)


# --- text form ---------------------------------------------------------------

_HEADER_KEYS = ("width", "input", "head_embed", "classes",
                "gen_affinity", "gen_depth", "gen_width", "gen_kernel")
_BLOCK_KEYS = ("cin", "cout", "k", "stride", "expand", "op")


def arch_text(spec: ArchSpec) -> str:
    lines = [f"width={spec.width}",
             "input=" + "x".join(str(v) for v in spec.input_shape)]
    if spec.head_embed is not None:
        lines.append(f"head_embed={spec.head_embed}")
    if spec.classes:
        lines.append(f"classes={spec.classes}")
    for name in ("gen_affinity", "gen_depth", "gen_width", "gen_kernel"):
        default = ArchSpec.__dataclass_fields__[name].default
        val = getattr(spec, name)
        if val != default:
            lines.append(f"{name}={val}")
    for b in spec.blocks:
        lines.append(
            f"block {b.kind} cin={b.c_in} cout={b.c_out} k={b.k} "
            f"stride={b.stride} expand={b.expand} op={b.op}")
    return "\n".join(lines) + "\n"


def _parse_int(value: str, what: str, where: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ArchError(f"{where}: {what} must be an integer, got {value!r}") from None


def _parse_block(line: str, where: str) -> BlockSpec:
    parts = line.split()
    kind = parts[1] if len(parts) > 1 else ""
    if kind not in BLOCK_KINDS:
        raise ArchError(f"{where}: unknown block kind '{kind}'")
    kv: dict[str, str] = {}
    for tok in parts[2:]:
        key, eq, value = tok.partition("=")
        if not eq or key not in _BLOCK_KEYS:
            raise ArchError(f"{where}: unexpected block field {tok!r}")
        if key in kv:
            raise ArchError(f"{where}: duplicate block field '{key}'")
        kv[key] = value
    for key in _BLOCK_KEYS:
        if key not in kv:
            raise ArchError(f"{where}: block is missing field '{key}'")
    if kv["op"] not in BODY_OPS:
        raise ArchError(f"{where}: op must be one of {BODY_OPS}, got '{kv['op']}'")
    return BlockSpec(kind,
                     _parse_int(kv["cin"], "cin", where),
                     _parse_int(kv["cout"], "cout", where),
                     _parse_int(kv["k"], "k", where),
                     _parse_int(kv["stride"], "stride", where),
                     _parse_int(kv["expand"], "expand", where),
                     kv["op"])


def parse_arch(text: str, source: str = "<string>") -> ArchSpec:
    headers: dict[str, str] = {}
    blocks: list[BlockSpec] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        where = f"{source}: line {lineno}"
        if not line or line.startswith("#"):
            continue
        if line.startswith("block "):
            blocks.append(_parse_block(line, where))
            continue
        key, eq, value = line.partition("=")
        key = key.strip()
        if not eq or key not in _HEADER_KEYS:
            raise ArchError(f"{where}: unknown header '{key}'")
        if key in headers:
            raise ArchError(f"{where}: duplicate header '{key}'")
        if key == "input":
            dims = value.strip().split("x")
            if len(dims) != 3:
                raise ArchError(f"{where}: input must be CxHxW, got {value!r}")
        headers[key] = (value.strip(), where)

    for required in ("width", "input"):
        if required not in headers:
            raise ArchError(f"{source}: missing required header '{required}'")

    def geti(key: str, default: int) -> int:
        if key not in headers:
            return default
        value, where = headers[key]
        return _parse_int(value, key, where)

    wval, wwhere = headers["width"]
    try:
        width = float(wval)
    except ValueError:
        raise ArchError(f"{wwhere}: width must be a number, got {wval!r}") from None
    ival, iwhere = headers["input"]
    shape = tuple(_parse_int(d, "input dim", iwhere) for d in ival.split("x"))

    head = geti("head_embed", 0)
    return ArchSpec(width, shape, tuple(blocks),
                    head_embed=head or None,
                    classes=geti("classes", 0),
                    gen_affinity=geti("gen_affinity", 4),
                    gen_depth=geti("gen_depth", 3),
                    gen_width=geti("gen_width", 64),
                    gen_kernel=geti("gen_kernel", 3))


def load_arch(path) -> ArchSpec:
    p = Path(path)
    return parse_arch(p.read_text(), source=str(p))


def save_arch(spec: ArchSpec, path) -> None:
    Path(path).write_text(arch_text(spec))
