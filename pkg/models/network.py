import enum
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np
from pydantic import Field, root_validator, validator

from models.schema import Schema

ParamKey = Tuple[int, str]

PATCH_SIZE = 27
OUTPUT_SIZE = 5
OUTPUT_UNITS = OUTPUT_SIZE * OUTPUT_SIZE


class LayerKind(str, enum.Enum):
    CONVOLUTION = "convolution"
    DENSE = "dense"
    RELU = "relu"
    SIGMOID = "sigmoid"
    DROPOUT = "dropout"
    FLATTEN = "flatten"


class LayerSpec(Schema):
    kind: LayerKind
    feature_maps: Optional[int] = Field(None, ge=1)
    kernel_size: int = 3
    stride: int = 1
    padding: int = 1
    output_width: Optional[int] = Field(None, ge=1)
    drop_rate: Optional[float] = Field(None, ge=0.0, lt=1.0)

    @validator("kind", pre=True)
    def reject_pooling(cls, value):
        if isinstance(value, str) and "pool" in value.lower():
            raise ValueError(f"pooling layers are not supported: {value}")
        return value

    @root_validator(skip_on_failure=True)
    def check_kind_fields(cls, values):
        kind = values.get("kind")
        if kind == LayerKind.CONVOLUTION:
            if values.get("feature_maps") is None:
                raise ValueError("convolution layer needs feature_maps")
            if (values.get("kernel_size"), values.get("stride"), values.get("padding")) != (3, 1, 1):
                raise ValueError("convolution layers use a 3x3 kernel, stride 1 and padding 1")
        elif kind == LayerKind.DENSE and values.get("output_width") is None:
            raise ValueError("dense layer needs output_width")
        elif kind == LayerKind.DROPOUT and values.get("drop_rate") is None:
            raise ValueError("dropout layer needs drop_rate")
        return values

    @property
    def has_params(self) -> bool:
        return self.kind in (LayerKind.CONVOLUTION, LayerKind.DENSE)


class NetworkSpec(Schema):
    """Layer layout of one structured-prediction network"""

    layers: List[LayerSpec]
    input_shape: Tuple[int, int, int] = (PATCH_SIZE, PATCH_SIZE, 3)

    @root_validator(skip_on_failure=True)
    def check_chain(cls, values):
        layers = values.get("layers") or []
        if not layers:
            raise ValueError("network needs at least one layer")
        shapes = _chain_shapes(layers, tuple(values["input_shape"]))
        if layers[-1].kind != LayerKind.SIGMOID or shapes[-1] != (OUTPUT_UNITS,):
            raise ValueError(f"final layer must be a sigmoid over {OUTPUT_UNITS} units")
        return values

    def layer_shapes(self) -> List[Tuple[int, ...]]:
        """Output shape of every layer, in order"""
        return _chain_shapes(self.layers, tuple(self.input_shape))

    def parameter_shapes(self) -> Dict[ParamKey, Tuple[int, ...]]:
        shapes: Dict[ParamKey, Tuple[int, ...]] = {}
        previous = tuple(self.input_shape)
        for index, (layer, out_shape) in enumerate(zip(self.layers, self.layer_shapes())):
            if layer.kind == LayerKind.CONVOLUTION:
                k = layer.feature_maps
                shapes[(index, "weights")] = (k, 3, 3, previous[-1])
                shapes[(index, "bias")] = (k,)
            elif layer.kind == LayerKind.DENSE:
                shapes[(index, "weights")] = (previous[0], layer.output_width)
                shapes[(index, "bias")] = (layer.output_width,)
            previous = out_shape
        return shapes

    def with_dropout(self, rate: float) -> "NetworkSpec":
        layers = [
            layer.copy(update={"drop_rate": rate}) if layer.kind == LayerKind.DROPOUT else layer
            for layer in self.layers
        ]
        return NetworkSpec.build(layers=[layer.dict() for layer in layers], input_shape=self.input_shape)


def _chain_shapes(layers: List[LayerSpec], input_shape: Tuple[int, ...]) -> List[Tuple[int, ...]]:
    shapes = []
    shape = input_shape
    for index, layer in enumerate(layers):
        if layer.kind == LayerKind.CONVOLUTION:
            if len(shape) != 3:
                raise ValueError(f"layer {index}: convolution needs an HxWxC input, got {shape}")
            shape = (shape[0], shape[1], layer.feature_maps)
        elif layer.kind == LayerKind.FLATTEN:
            shape = (int(np.prod(shape)),)
        elif layer.kind == LayerKind.DENSE:
            if len(shape) != 1:
                raise ValueError(f"layer {index}: dense needs a flattened input, got {shape}")
            shape = (layer.output_width,)
        shapes.append(shape)
    return shapes


def default_network_spec(dropout_rate: float = 0.5) -> NetworkSpec:
    """conv(16)-conv(16)-conv(32)-conv(32)-dense(64)-dropout-dense(25)-sigmoid, ReLU between"""
    layers = []
    for maps in (16, 16, 32, 32):
        layers.append({"kind": "convolution", "feature_maps": maps})
        layers.append({"kind": "relu"})
    layers += [
        {"kind": "flatten"},
        {"kind": "dense", "output_width": 64},
        {"kind": "relu"},
        {"kind": "dropout", "drop_rate": dropout_rate},
        {"kind": "dense", "output_width": OUTPUT_UNITS},
        {"kind": "sigmoid"},
    ]
    return NetworkSpec.build(layers=layers)


def gradcheck_network_spec() -> NetworkSpec:
    """Small 9x9x3 network used by the gradient audit"""
    layers = [
        {"kind": "convolution", "feature_maps": 4},
        {"kind": "relu"},
        {"kind": "convolution", "feature_maps": 4},
        {"kind": "relu"},
        {"kind": "flatten"},
        {"kind": "dense", "output_width": OUTPUT_UNITS},
        {"kind": "sigmoid"},
    ]
    return NetworkSpec.build(layers=layers, input_shape=(9, 9, 3))


class TrainConfig(Schema):
    learning_rate: float = Field(0.001, gt=0)
    momentum: float = Field(0.9, ge=0, lt=1)
    batch_size: int = Field(256, ge=1)
    epochs: int = Field(20, ge=1)
    l2_beta: float = Field(5e-4, ge=0)
    dropout_rate: float = Field(0.5, ge=0, lt=1)
    rng_seed: int = 0


class NetworkParams:
    """Weights and biases of one network, keyed by (layer index, "weights" | "bias")"""

    def __init__(self, tensors: Dict[ParamKey, np.ndarray]):
        self.tensors = {key: tensors[key] for key in sorted(tensors, key=_key_order)}

    def __getitem__(self, key: ParamKey) -> np.ndarray:
        return self.tensors[key]

    def __setitem__(self, key: ParamKey, value: np.ndarray) -> None:
        self.tensors[key] = value

    def __iter__(self) -> Iterator[ParamKey]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def keys(self) -> List[ParamKey]:
        return list(self.tensors)

    def items(self) -> List[Tuple[ParamKey, np.ndarray]]:
        return list(self.tensors.items())

    def weight_keys(self) -> List[ParamKey]:
        return [key for key in self.tensors if key[1] == "weights"]

    def parameter_count(self) -> int:
        return int(sum(t.size for t in self.tensors.values()))

    def copy(self) -> "NetworkParams":
        return NetworkParams({key: t.copy() for key, t in self.tensors.items()})

    def astype(self, dtype) -> "NetworkParams":
        return NetworkParams({key: t.astype(dtype) for key, t in self.tensors.items()})

    def equals(self, other: "NetworkParams") -> bool:
        """Bit-exact comparison, dtypes included"""
        if self.keys() != other.keys():
            return False
        return all(
            a.dtype == b.dtype and a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in zip(self.tensors.values(), other.tensors.values())
        )


def _key_order(key: ParamKey) -> Tuple[int, int]:
    return key[0], 0 if key[1] == "weights" else 1
