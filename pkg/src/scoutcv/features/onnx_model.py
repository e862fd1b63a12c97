"""Self-contained reader and executor for interchange (ONNX) backbone files.

Decodes the protobuf wire format directly and evaluates the small operator
set that pooled-feature backbones need: Conv, Relu, MaxPool, AveragePool,
GlobalAveragePool, BatchNormalization, Add, Concat, Flatten. Anything else
is rejected with a clear error rather than silently miscomputed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from scoutcv import _kernels
from scoutcv.errors import ModelFormatError

# protobuf wire types
_VARINT = 0
_I64 = 1
_LEN = 2
_I32 = 5

_TENSOR_DTYPES = {1: np.float32, 6: np.int32, 7: np.int64, 11: np.float64}


def _read_varint(buf: bytes, pos: int) -> tuple[int, int]:
    result = 0
    shift = 0
    while True:
        if pos >= len(buf):
            raise ModelFormatError("truncated varint in model file")
        b = buf[pos]
        pos += 1
        result |= (b & 0x7F) << shift
        if not b & 0x80:
            return result, pos
        shift += 7
        if shift > 70:
            raise ModelFormatError("varint overflow in model file")


def _signed(value: int) -> int:
    return value - (1 << 64) if value >= (1 << 63) else value


def _fields(buf: bytes):
    """Yield (field_number, wire_type, payload) triples from a message."""
    pos = 0
    while pos < len(buf):
        tag, pos = _read_varint(buf, pos)
        fnum, wire = tag >> 3, tag & 7
        if wire == _VARINT:
            value, pos = _read_varint(buf, pos)
        elif wire == _I64:
            value = buf[pos : pos + 8]
            pos += 8
        elif wire == _I32:
            value = buf[pos : pos + 4]
            pos += 4
        elif wire == _LEN:
            length, pos = _read_varint(buf, pos)
            if pos + length > len(buf):
                raise ModelFormatError("truncated length-delimited field in model file")
            value = buf[pos : pos + length]
            pos += length
        else:
            raise ModelFormatError(f"unsupported protobuf wire type {wire}")
        yield fnum, wire, value


def _packed_ints(wire: int, value) -> list[int]:
    if wire == _VARINT:
        return [_signed(value)]
    out = []
    pos = 0
    while pos < len(value):
        v, pos = _read_varint(value, pos)
        out.append(_signed(v))
    return out


@dataclass
class OnnxNode:
    op_type: str
    inputs: list[str]
    outputs: list[str]
    name: str = ""
    attrs: dict = field(default_factory=dict)


@dataclass
class OnnxModel:
    nodes: list[OnnxNode]
    initializers: dict[str, np.ndarray]
    input_name: str
    input_shape: list[int]
    output_name: str
    output_shape: list[int]
    producer: str = ""

    @property
    def feature_dim(self) -> int:
        dims = [d for d in self.output_shape[1:] if d > 0]
        if not dims:
            raise ModelFormatError("model output shape is not static")
        return int(np.prod(dims))


def _parse_tensor(buf: bytes) -> tuple[str, np.ndarray]:
    dims: list[int] = []
    dtype_code = 1
    raw = b""
    float_data: list[float] = []
    int64_data: list[int] = []
    name = ""
    for fnum, wire, value in _fields(buf):
        if fnum == 1:
            dims.extend(_packed_ints(wire, value))
        elif fnum == 2 and wire == _VARINT:
            dtype_code = value
        elif fnum == 4:
            if wire == _LEN:
                float_data.extend(struct.unpack(f"<{len(value) // 4}f", value))
            else:
                float_data.append(struct.unpack("<f", value)[0])
        elif fnum == 7:
            int64_data.extend(_packed_ints(wire, value))
        elif fnum == 8 and wire == _LEN:
            name = value.decode("utf-8")
        elif fnum == 9 and wire == _LEN:
            raw = value
        elif fnum == 13:
            raise ModelFormatError("external tensor data is not supported")
    if dtype_code not in _TENSOR_DTYPES:
        raise ModelFormatError(f"unsupported tensor data type {dtype_code} for {name!r}")
    dtype = _TENSOR_DTYPES[dtype_code]
    if raw:
        arr = np.frombuffer(raw, dtype=np.dtype(dtype).newbyteorder("<")).astype(dtype)
    elif float_data:
        arr = np.array(float_data, dtype=dtype)
    elif int64_data:
        arr = np.array(int64_data, dtype=dtype)
    else:
        arr = np.zeros(0, dtype=dtype)
    expected = int(np.prod(dims)) if dims else arr.size
    if arr.size != expected:
        raise ModelFormatError(
            f"tensor {name!r} payload holds {arr.size} values, shape {dims} needs {expected}"
        )
    return name, arr.reshape(dims)


def _parse_attribute(buf: bytes) -> tuple[str, object]:
    name = ""
    value: object = None
    ints: list[int] = []
    floats: list[float] = []
    for fnum, wire, payload in _fields(buf):
        if fnum == 1 and wire == _LEN:
            name = payload.decode("utf-8")
        elif fnum == 2 and wire == _I32:
            value = struct.unpack("<f", payload)[0]
        elif fnum == 3 and wire == _VARINT:
            value = _signed(payload)
        elif fnum == 4 and wire == _LEN:
            value = payload.decode("utf-8", errors="replace")
        elif fnum == 5 and wire == _LEN:
            value = _parse_tensor(payload)[1]
        elif fnum == 7:
            if wire == _LEN:
                floats.extend(struct.unpack(f"<{len(payload) // 4}f", payload))
            else:
                floats.append(struct.unpack("<f", payload)[0])
        elif fnum == 8:
            ints.extend(_packed_ints(wire, payload))
    if ints:
        value = ints
    elif floats:
        value = floats
    return name, value


def _parse_node(buf: bytes) -> OnnxNode:
    node = OnnxNode(op_type="", inputs=[], outputs=[])
    for fnum, wire, value in _fields(buf):
        if fnum == 1 and wire == _LEN:
            node.inputs.append(value.decode("utf-8"))
        elif fnum == 2 and wire == _LEN:
            node.outputs.append(value.decode("utf-8"))
        elif fnum == 3 and wire == _LEN:
            node.name = value.decode("utf-8")
        elif fnum == 4 and wire == _LEN:
            node.op_type = value.decode("utf-8")
        elif fnum == 5 and wire == _LEN:
            aname, aval = _parse_attribute(value)
            node.attrs[aname] = aval
    return node


def _parse_value_info(buf: bytes) -> tuple[str, list[int]]:
    name = ""
    shape: list[int] = []
    for fnum, wire, value in _fields(buf):
        if fnum == 1 and wire == _LEN:
            name = value.decode("utf-8")
        elif fnum == 2 and wire == _LEN:  # TypeProto
            for f2, w2, v2 in _fields(value):
                if f2 == 1 and w2 == _LEN:  # tensor_type
                    for f3, w3, v3 in _fields(v2):
                        if f3 == 2 and w3 == _LEN:  # shape
                            for f4, w4, v4 in _fields(v3):
                                if f4 == 1 and w4 == _LEN:  # Dimension
                                    dim = -1
                                    for f5, w5, v5 in _fields(v4):
                                        if f5 == 1 and w5 == _VARINT:
                                            dim = _signed(v5)
                                    shape.append(dim)
    return name, shape


def load_model(source: str | Path | bytes) -> OnnxModel:
    """Parse an interchange model file into a runnable graph."""
    if isinstance(source, (str, Path)):
        try:
            data = Path(source).read_bytes()
        except OSError as exc:
            raise ModelFormatError(f"cannot read backbone file {source}: {exc}") from None
    else:
        data = source
    graph_buf = None
    producer = ""
    try:
        for fnum, wire, value in _fields(data):
            if fnum == 7 and wire == _LEN:
                graph_buf = value
            elif fnum == 2 and wire == _LEN:
                producer = value.decode("utf-8", errors="replace")
    except ModelFormatError:
        raise
    except Exception as exc:  # noqa: BLE001 - decoding garbage input
        raise ModelFormatError(f"not a valid model file: {exc}") from None
    if graph_buf is None:
        raise ModelFormatError("model file contains no graph")

    nodes: list[OnnxNode] = []
    initializers: dict[str, np.ndarray] = {}
    inputs: list[tuple[str, list[int]]] = []
    outputs: list[tuple[str, list[int]]] = []
    for fnum, wire, value in _fields(graph_buf):
        if fnum == 1 and wire == _LEN:
            nodes.append(_parse_node(value))
        elif fnum == 5 and wire == _LEN:
            name, arr = _parse_tensor(value)
            initializers[name] = arr
        elif fnum == 11 and wire == _LEN:
            inputs.append(_parse_value_info(value))
        elif fnum == 12 and wire == _LEN:
            outputs.append(_parse_value_info(value))
    real_inputs = [(n, s) for n, s in inputs if n not in initializers]
    if len(real_inputs) != 1:
        raise ModelFormatError(f"expected exactly one graph input, found {len(real_inputs)}")
    if len(outputs) != 1:
        raise ModelFormatError(f"expected exactly one graph output, found {len(outputs)}")
    return OnnxModel(
        nodes=nodes,
        initializers=initializers,
        input_name=real_inputs[0][0],
        input_shape=real_inputs[0][1],
        output_name=outputs[0][0],
        output_shape=outputs[0][1],
        producer=producer,
    )


# ---------------------------------------------------------------------------
# graph execution (single image, channel-first)


def _attr_pads(attrs: dict, spatial: int = 2) -> tuple[int, int, int, int]:
    pads = attrs.get("pads", [0] * 2 * spatial)
    if len(pads) != 4:
        raise ModelFormatError(f"expected 4 pad values, got {pads}")
    return tuple(int(p) for p in pads)  # type: ignore[return-value]


def _attr_pair(attrs: dict, key: str, default: int = 1) -> tuple[int, int]:
    vals = attrs.get(key, [default, default])
    if isinstance(vals, int):
        vals = [vals, vals]
    if len(vals) != 2:
        raise ModelFormatError(f"expected 2 values for {key}, got {vals}")
    return int(vals[0]), int(vals[1])


def _run_node(node: OnnxNode, values: dict[str, np.ndarray]) -> np.ndarray:
    def arg(i: int) -> np.ndarray:
        name = node.inputs[i]
        if name not in values:
            raise ModelFormatError(f"node {node.name!r} needs unavailable value {name!r}")
        return values[name]

    op = node.op_type
    if op == "Conv":
        x = arg(0)
        w = arg(1)
        b = values.get(node.inputs[2]) if len(node.inputs) > 2 else None
        if node.attrs.get("auto_pad", "NOTSET") not in ("NOTSET", ""):
            raise ModelFormatError("auto_pad convolutions are not supported")
        if any(d != 1 for d in node.attrs.get("dilations", [1, 1])):
            raise ModelFormatError("dilated convolutions are not supported")
        return _kernels.conv2d(
            x,
            w,
            b,
            strides=_attr_pair(node.attrs, "strides"),
            pads=_attr_pads(node.attrs),
            groups=int(node.attrs.get("group", 1)),
        )
    if op == "Relu":
        return np.maximum(arg(0), 0)
    if op == "MaxPool":
        return _kernels.maxpool2d(
            arg(0),
            kernel=_attr_pair(node.attrs, "kernel_shape"),
            strides=_attr_pair(node.attrs, "strides"),
            pads=_attr_pads(node.attrs),
        )
    if op == "AveragePool":
        if int(node.attrs.get("count_include_pad", 0)) != 0:
            raise ModelFormatError("count_include_pad averaging is not supported")
        return _kernels.avgpool2d(
            arg(0),
            kernel=_attr_pair(node.attrs, "kernel_shape"),
            strides=_attr_pair(node.attrs, "strides"),
            pads=_attr_pads(node.attrs),
        )
    if op == "GlobalAveragePool":
        x = arg(0)
        return x.mean(axis=(1, 2), keepdims=True)
    if op == "BatchNormalization":
        x, scale, bias, mean, var = (arg(i) for i in range(5))
        eps = float(node.attrs.get("epsilon", 1e-5))
        inv = (scale / np.sqrt(var + eps)).astype(x.dtype)
        return x * inv[:, None, None] + (bias - mean * inv)[:, None, None].astype(x.dtype)
    if op == "Add":
        return arg(0) + arg(1)
    if op == "Concat":
        axis = int(node.attrs.get("axis", 1))
        if axis not in (0, 1):
            raise ModelFormatError(f"Concat axis {axis} is not supported")
        return np.concatenate([arg(i) for i in range(len(node.inputs))], axis=0)
    if op == "Flatten":
        return arg(0).reshape(-1)
    raise ModelFormatError(f"unsupported operator {op!r} in backbone file")


def run_model(model: OnnxModel, image_chw: np.ndarray) -> np.ndarray:
    """Run one channel-first image through the graph; returns a flat vector.

    The graph works on single images: batch dimensions of size one in the
    declared input shape are accepted and stripped.
    """
    x = np.asarray(image_chw, dtype=np.float32)
    if x.ndim == 4 and x.shape[0] == 1:
        x = x[0]
    if x.ndim != 3:
        raise ModelFormatError(f"expected a CHW image, got shape {x.shape}")
    declared = model.input_shape
    spatial = [d for d in declared if d > 0][-3:] if declared else []
    if len(spatial) == 3 and list(x.shape) != spatial:
        raise ModelFormatError(
            f"input shape {list(x.shape)} does not match model expectation {spatial}"
        )
    values: dict[str, np.ndarray] = dict(model.initializers)
    values[model.input_name] = x
    for node in model.nodes:
        out = _run_node(node, values)
        values[node.outputs[0]] = out
    result = values.get(model.output_name)
    if result is None:
        raise ModelFormatError(f"graph never produced output {model.output_name!r}")
    return np.asarray(result, dtype=np.float32).reshape(-1)
