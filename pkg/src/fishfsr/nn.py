"""Parameter containers: a minimal ``Module`` base, ``Conv2d`` and the
named ``ParameterStore``."""

from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from .rng import Rng
from .tensor import Tensor, conv2d


class Module:
    """Parameters and sub-modules are discovered from instance attributes in
    assignment order, so names follow construction order ("index-path"
    naming: ``head.ups.0.conv.weight``)."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.numel for p in self.parameters()))

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


# kaiming-uniform gain for negative slope sqrt(5); bound = 1 / sqrt(fan_in)
INIT_GAIN = np.sqrt(1.0 / 3.0)


def kaiming_uniform(rng: Rng, shape: tuple, fan_in: int, gain: float = INIT_GAIN) -> np.ndarray:
    """Fan-in Kaiming-uniform: U(-b, b) with b = gain * sqrt(3 / fan_in)."""
    bound = gain * np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, shape)


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, k: int, rng: Rng, dtype=np.float32, bias: bool = True):
        self.cin, self.cout, self.k = cin, cout, k
        self.weight = Tensor(kaiming_uniform(rng, (cout, cin, k, k), cin * k * k).astype(dtype),
                             requires_grad=True)
        self.bias = Tensor(np.zeros((1, cout, 1, 1), dtype=dtype), requires_grad=True) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, stride=1, padding=self.k // 2)


class ParameterStore:
    """Ordered name -> tensor mapping over one or more modules."""

    def __init__(self, params: "OrderedDict[str, Tensor] | None" = None):
        self.params: OrderedDict[str, Tensor] = OrderedDict(params or ())

    @classmethod
    def from_modules(cls, **modules: Module) -> "ParameterStore":
        store = cls()
        for prefix, module in modules.items():
            for name, p in module.named_parameters(prefix + "."):
                store.params[name] = p
        return store

    def __iter__(self):
        return iter(self.params.items())

    def __len__(self):
        return len(self.params)

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def names(self) -> list[str]:
        return list(self.params)

    def subset(self, prefix: str) -> "ParameterStore":
        return ParameterStore(OrderedDict((k, v) for k, v in self.params.items() if k.startswith(prefix)))

    def numel(self) -> int:
        return int(sum(p.numel for p in self.params.values()))

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def to_bytes(self) -> bytes:
        return b"".join(p.data.tobytes() for p in self.params.values())

    def load_arrays(self, arrays: dict[str, np.ndarray], strict: bool = True):
        """Copy arrays into the matching parameters (in place)."""
        if strict:
            missing = [k for k in self.params if k not in arrays]
            if missing:
                raise KeyError(f"missing parameters: {missing[:5]}")
        for name, arr in arrays.items():
            if name not in self.params:
                if strict:
                    raise KeyError(f"unexpected parameter {name!r}")
                continue
            p = self.params[name]
            if p.shape != arr.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data[...] = arr
