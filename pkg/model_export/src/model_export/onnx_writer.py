"""Minimal ONNX serializer: enough of the protobuf wire format for a small CNN.

The onnx package is not a dependency; model files are assembled directly in
the protobuf wire encoding (field key = field_number << 3 | wire_type;
varints, length-delimited submessages, fixed32 floats). Field numbers follow
onnx.proto3. The writer covers exactly the ops the exported encoder uses:
Conv, Relu, GlobalAveragePool, Flatten, Gemm.
"""

from __future__ import annotations

import struct

import numpy as np

OPSET_VERSION = 13
IR_VERSION = 8

FLOAT = 1  # TensorProto.DataType

_ATTR_FLOAT = 1
_ATTR_INT = 2
_ATTR_INTS = 7


def _varint(n: int) -> bytes:
    if n < 0:
        raise ValueError("negative varint")
    out = bytearray()
    while True:
        b = n & 0x7F
        n >>= 7
        if n:
            out.append(b | 0x80)
        else:
            out.append(b)
            return bytes(out)


def _key(field: int, wire: int) -> bytes:
    return _varint((field << 3) | wire)


def _vint(field: int, value: int) -> bytes:
    return _key(field, 0) + _varint(value)

def _bytes(field: int, payload: bytes) -> bytes:
    return _key(field, 2) + _varint(len(payload)) + payload


def _string(field: int, s: str) -> bytes:
    return _bytes(field, s.encode("utf-8"))


def _float(field: int, value: float) -> bytes:
    return _key(field, 5) + struct.pack("<f", value)


def tensor(name: str, array: np.ndarray) -> bytes:
    """TensorProto with float32 raw data."""
    a = np.ascontiguousarray(array, dtype=np.float32)
    parts = [_vint(1, d) for d in a.shape]
    parts.append(_vint(2, FLOAT))
    parts.append(_string(8, name))
    parts.append(_bytes(9, a.tobytes()))
    return b"".join(parts)


def attr_int(name: str, value: int) -> bytes:
    return _string(1, name) + _vint(3, value) + _vint(20, _ATTR_INT)


def attr_ints(name: str, values: tuple[int, ...]) -> bytes:
    parts = [_string(1, name)]
    parts.extend(_vint(8, v) for v in values)
    parts.append(_vint(20, _ATTR_INTS))
    return b"".join(parts)


def attr_float(name: str, value: float) -> bytes:
    return _string(1, name) + _float(2, value) + _vint(20, _ATTR_FLOAT)


def node(
    op_type: str,
    inputs: tuple[str, ...],
    outputs: tuple[str, ...],
    name: str,
    attrs: tuple[bytes, ...] = (),
) -> bytes:
    parts = [_string(1, i) for i in inputs]
    parts.extend(_string(2, o) for o in outputs)
    parts.append(_string(3, name))
    parts.append(_string(4, op_type))
    parts.extend(_bytes(5, a) for a in attrs)
    return b"".join(parts)


def value_info(name: str, dims: tuple[int, ...]) -> bytes:
    shape = b"".join(_bytes(1, _vint(1, d)) for d in dims)
    tensor_type = _vint(1, FLOAT) + _bytes(2, shape)
    return _string(1, name) + _bytes(2, _bytes(1, tensor_type))


def graph(
    name: str,
    nodes: tuple[bytes, ...],
    initializers: tuple[bytes, ...],
    inputs: tuple[bytes, ...],
    outputs: tuple[bytes, ...],
) -> bytes:
    parts = [_bytes(1, n) for n in nodes]
    parts.append(_string(2, name))
    parts.extend(_bytes(5, t) for t in initializers)
    parts.extend(_bytes(11, vi) for vi in inputs)
    parts.extend(_bytes(12, vi) for vi in outputs)
    return b"".join(parts)


def model(graph_bytes: bytes, producer: str = "model-export") -> bytes:
    parts = [
        _vint(1, IR_VERSION),
        _string(2, producer),
        _bytes(7, graph_bytes),
        _bytes(8, _vint(2, OPSET_VERSION)),
    ]
    return b"".join(parts)


def conv_node(name: str, src: str, dst: str, stride: int, pad: int) -> bytes:
    return node(
        "Conv",
        (src, f"{name}.weight", f"{name}.bias"),
        (dst,),
        name,
        attrs=(
            attr_ints("dilations", (1, 1)),
            attr_int("group", 1),
            attr_ints("kernel_shape", (3, 3)),
            attr_ints("pads", (pad, pad, pad, pad)),
            attr_ints("strides", (stride, stride)),
        ),
    )


def encoder_model_bytes(weights: dict[str, np.ndarray], input_size: int) -> bytes:
    """The exported image-encoder graph.

    input (1x3xSxS) -> Conv s2 -> Relu -> Conv s2 -> Relu ->
    GlobalAveragePool -> Flatten -> Gemm -> embedding (1xD). The layer
    weights come in under the same names the source model uses, so the two
    executions stay comparable weight-for-weight.
    """
    dim = weights["fc.weight"].shape[0]
    nodes = (
        conv_node("conv1", "input", "c1", stride=2, pad=1),
        node("Relu", ("c1",), ("r1",), "relu1"),
        conv_node("conv2", "r1", "c2", stride=2, pad=1),
        node("Relu", ("c2",), ("r2",), "relu2"),
        node("GlobalAveragePool", ("r2",), ("pooled",), "pool"),
        node("Flatten", ("pooled",), ("flat",), "flatten", attrs=(attr_int("axis", 1),)),
        node(
            "Gemm",
            ("flat", "fc.weight", "fc.bias"),
            ("embedding",),
            "fc",
            attrs=(attr_float("alpha", 1.0), attr_float("beta", 1.0), attr_int("transB", 1)),
        ),
    )
    initializers = tuple(tensor(name, weights[name]) for name in sorted(weights))
    g = graph(
        "image_encoder",
        nodes,
        initializers,
        inputs=(value_info("input", (1, 3, input_size, input_size)),),
        outputs=(value_info("embedding", (1, dim)),),
    )
    return model(g)
