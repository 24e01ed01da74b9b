"""Named parameter trees and their layouts."""
from __future__ import annotations

from typing import Dict, Iterator, Mapping, Tuple

import numpy as np
from scipy import stats

from .tensor import Tensor

# name -> (shape, init kind); kinds: "trunc", "zeros", "ones"
ParamSpec = Dict[str, Tuple[Tuple[int, ...], str]]

TRUNC_STD = 0.02


def prefixed(prefix: str, spec: Mapping[str, Tuple[Tuple[int, ...], str]]) -> ParamSpec:
    return {f"{prefix}.{k}": v for k, v in spec.items()}


def spec_count(spec: Mapping[str, Tuple[Tuple[int, ...], str]]) -> int:
    return int(sum(int(np.prod(shape)) for shape, _ in spec.values()))


class ParamScope:
    """Read-only view of a store under a dotted prefix."""

    __slots__ = ("store", "prefix")

    def __init__(self, store: "ParamStore", prefix: str):
        self.store = store
        self.prefix = prefix

    def __getitem__(self, name: str) -> Tensor:
        return self.store[f"{self.prefix}.{name}" if self.prefix else name]

    def __contains__(self, name: str) -> bool:
        return (f"{self.prefix}.{name}" if self.prefix else name) in self.store

    def scope(self, name: str) -> "ParamScope":
        return ParamScope(self.store, f"{self.prefix}.{name}" if self.prefix else name)


class ParamStore:
    """Ordered map from dotted path to trainable tensor.

    Iteration is lexicographic by path regardless of insertion order.
    """

    def __init__(self, tensors: Mapping[str, Tensor] | None = None):
        self._items: Dict[str, Tensor] = {}
        for name, t in (tensors or {}).items():
            self.add(name, t)

    def add(self, name: str, value) -> Tensor:
        if name in self._items:
            raise KeyError(f"duplicate parameter path {name!r}")
        t = value if isinstance(value, Tensor) else Tensor(np.asarray(value))
        t.requires_grad = True
        t.name = name
        self._items[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._items[name]

    def __contains__(self, name: str) -> bool:
        return name in self._items

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self) -> Iterator[str]:
        return iter(sorted(self._items))

    def names(self) -> list:
        return sorted(self._items)

    def items(self):
        return [(k, self._items[k]) for k in sorted(self._items)]

    def tensors(self) -> list:
        return [self._items[k] for k in sorted(self._items)]

    def scope(self, prefix: str) -> ParamScope:
        return ParamScope(self, prefix)

    def count(self) -> int:
        return int(sum(t.data.size for t in self._items.values()))

    def astype(self, dtype) -> "ParamStore":
        return ParamStore({k: Tensor(v.data.astype(dtype)) for k, v in self.items()})

    def copy(self) -> "ParamStore":
        return ParamStore({k: Tensor(v.data.copy()) for k, v in self.items()})

    def zero_grad(self) -> None:
        for t in self._items.values():
            t.grad = np.zeros_like(t.data)


def init_from_spec(spec: Mapping[str, Tuple[Tuple[int, ...], str]], seed: int,
                   dtype=np.float32) -> ParamStore:
    """Materialize a layout. Draws happen in lexicographic path order from one stream."""
    rng = np.random.default_rng(seed)
    store = ParamStore()
    for name in sorted(spec):
        shape, kind = spec[name]
        if kind == "zeros":
            value = np.zeros(shape)
        elif kind == "ones":
            value = np.ones(shape)
        elif kind == "trunc":
            value = stats.truncnorm.rvs(-2.0, 2.0, loc=0.0, scale=TRUNC_STD,
                                        size=shape, random_state=rng)
        else:
            raise ValueError(f"unknown init kind {kind!r} for {name}")
        store.add(name, np.asarray(value, dtype=dtype).reshape(shape))
    return store
