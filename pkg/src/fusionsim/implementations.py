"""Execution entities: pluggable pure functions behind implementation ids.

An implementation is called as ``fn(inputs, params, n_outputs)`` and returns a
tuple with one value per output port. Raising any exception is reported as an
internal node error by the engine.
"""
from __future__ import annotations

from typing import Any, Callable, Mapping

Implementation = Callable[[tuple, Mapping[str, Any], int], tuple]

REGISTRY: dict[str, Implementation] = {}


def register(name: str, registry: dict[str, Implementation] | None = None):
    target = REGISTRY if registry is None else registry

    def deco(fn: Implementation) -> Implementation:
        target[name] = fn
        return fn

    return deco


def resolve(name: str, registry: Mapping[str, Implementation] | None = None) -> Implementation:
    reg = REGISTRY if registry is None else registry
    try:
        return reg[name]
    except KeyError:
        raise KeyError(f"no implementation registered under {name!r}") from None


def _first(inputs: tuple) -> Any:
    return inputs[0] if inputs else None


@register("identity")
def identity(inputs, params, n_outputs):
    return (_first(inputs),) * n_outputs


@register("sum")
def add(inputs, params, n_outputs):
    return (sum(inputs),) * n_outputs


@register("mean")
def mean(inputs, params, n_outputs):
    return (sum(inputs) / len(inputs),) * n_outputs


@register("scale")
def scale(inputs, params, n_outputs):
    return (_first(inputs) * params.get("factor", 1),) * n_outputs


@register("filter")
def video_filter(inputs, params, n_outputs):
    return (f"{params.get('filter', 'none')}({_first(inputs)})",) * n_outputs


@register("split")
def split(inputs, params, n_outputs):
    # one copy of the input per output port
    return tuple(_first(inputs) for _ in range(n_outputs))


@register("display")
def display(inputs, params, n_outputs):
    return ()


@register("overflow")
def overflow(inputs, params, n_outputs):
    raise OverflowError("arithmetic overflow")


@register("timeout")
def timeout(inputs, params, n_outputs):
    raise TimeoutError("execution entity timed out")
