"""Decorator-driven staged runs with resumable per-step snapshots.

A policy class is an attrs class whose fields carry a kind:

``spec()``
    Identity of the run. Frozen after construction and written to
    ``spec.yaml``; reopening a directory with a different spec fails.
``input()``
    Runtime data such as the dataset. Never persisted.
``state()``
    Persisted after every finished step and restored from snapshots.
    Networks are stored as tensor records, everything else as JSON.
``transient()``
    Scratch values, the save path among them.

Steps run in strictly increasing ``order``. With a save path every finished
step leaves ``<step_id>.ckpt``; calling a step whose snapshot exists restores
the state instead of running the body again.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import wraps
from pathlib import Path
from typing import Any, Callable, Literal, TypeVar, cast, dataclass_transform

import attrs
import torch.nn as nn
from loguru import logger
from pydantic import BaseModel
from ruamel.yaml import YAML

from ..arch import ArchSpec, build_network
from ..checkpoint import Checkpoint, load_checkpoint, load_state_records, save_checkpoint, state_records
from ..errors import CheckpointVersionError, ConfigError
from ..io import atomic_write_via

FieldKind = Literal["spec", "input", "state", "transient"]

KIND_METADATA_KEY = "ebnet.policy.kind"
INTERNAL_METADATA_KEY = "ebnet.policy.internal"
POLICY_META_ATTR = "__ebnet_policy_meta__"
STEP_ID_ATTR = "__ebnet_policy_step_id__"
STEP_ORDER_ATTR = "__ebnet_policy_step_order__"
SPEC_FILE_NAME = "spec.yaml"
SNAPSHOT_SUFFIX = ".ckpt"
_VALID_STEP_ID_RE = re.compile(r"^[A-Za-z0-9_]+$")
_RUNTIME_FIELD_NAME = "_ebnet_runtime_state"

_yaml = YAML(typ="safe")
_yaml.default_flow_style = False


def _policy_field(kind: FieldKind, **kwargs: Any) -> Any:
    metadata = dict(kwargs.pop("metadata", None) or {})
    metadata[KIND_METADATA_KEY] = kind
    return attrs.field(metadata=metadata, **kwargs)


def spec(**kwargs: Any) -> Any:
    """Like ``attrs.field()``, but frozen and part of the run identity."""
    if "on_setattr" in kwargs:
        raise ValueError("spec() does not allow overriding on_setattr; spec fields are always frozen")
    if kwargs.get("init") is False:
        raise ValueError("spec() does not allow init=False; spec fields must be constructor-initialized")
    kwargs["on_setattr"] = attrs.setters.frozen
    return _policy_field("spec", **kwargs)


def input(**kwargs: Any) -> Any:
    if kwargs.get("init") is False:
        raise ValueError("input() does not allow init=False; input fields must be constructor-initialized")
    return _policy_field("input", **kwargs)


def state(**kwargs: Any) -> Any:
    return _policy_field("state", **kwargs)


def transient(**kwargs: Any) -> Any:
    return _policy_field("transient", **kwargs)


@dataclass
class RuntimeState:
    bootstrapped: bool = False
    cache_enabled: bool = False
    save_path: Path | None = None
    finished_steps: set[str] = field(default_factory=set)
    running_step_id: str | None = None


@dataclass(frozen=True)
class PolicyMeta:
    save_path_field: str
    seed_field: str | None
    fields_by_kind: dict[FieldKind, tuple[str, ...]]
    field_schema: dict[str, FieldKind]
    step_sequence: tuple[str, ...]
    step_order_by_id: dict[str, int]


def _build_meta(cls: type, *, save_path_field: str, seed_field: str | None) -> PolicyMeta:
    grouped: dict[FieldKind, list[str]] = {"spec": [], "input": [], "state": [], "transient": []}
    schema: dict[str, FieldKind] = {}
    for f in attrs.fields(cls):
        if f.metadata.get(INTERNAL_METADATA_KEY):
            continue
        kind = f.metadata.get(KIND_METADATA_KEY, "transient")
        schema[f.name] = kind
        grouped[kind].append(f.name)
    if save_path_field not in schema:
        raise ValueError(f"save_path_field={save_path_field!r} is not a field on {cls.__name__}")
    if schema[save_path_field] != "transient":
        raise ValueError(f"save_path_field={save_path_field!r} must be transient(), got {schema[save_path_field]!r}")
    if seed_field is not None and schema.get(seed_field) != "spec":
        raise ValueError(f"seed_field={seed_field!r} must name a spec() field")

    steps: dict[str, int] = {}
    for owner in reversed(cls.__mro__):
        for value in vars(owner).values():
            step_id = getattr(value, STEP_ID_ATTR, None)
            if step_id is not None:
                steps[step_id] = getattr(value, STEP_ORDER_ATTR)
    orders = list(steps.values())
    if len(set(orders)) != len(orders):
        raise ValueError(f"{cls.__name__} has steps sharing an order: {steps}")
    sequence = tuple(sorted(steps, key=steps.__getitem__))
    return PolicyMeta(
        save_path_field=save_path_field,
        seed_field=seed_field,
        fields_by_kind={k: tuple(v) for k, v in grouped.items()},
        field_schema=schema,
        step_sequence=sequence,
        step_order_by_id=steps,
    )


_C = TypeVar("_C", bound=type)


@dataclass_transform(field_specifiers=(spec, input, state, transient, attrs.field))
def define_policy(
    maybe_cls: _C | None = None,
    *,
    save_path_field: str,
    seed_field: str | None = None,
    **attrs_define_kwargs: Any,
) -> _C | Callable[[_C], _C]:
    def decorator(cls: _C) -> _C:
        annotations = dict(cls.__dict__.get("__annotations__", {}))
        annotations[_RUNTIME_FIELD_NAME] = RuntimeState
        cls.__annotations__ = annotations
        setattr(
            cls,
            _RUNTIME_FIELD_NAME,
            attrs.field(
                init=False,
                factory=RuntimeState,
                repr=False,
                eq=False,
                metadata={INTERNAL_METADATA_KEY: True},
            ),
        )
        wrapped = cast(_C, attrs.define(**attrs_define_kwargs)(cls))
        setattr(wrapped, POLICY_META_ATTR, _build_meta(wrapped, save_path_field=save_path_field, seed_field=seed_field))
        return wrapped

    if maybe_cls is not None:
        return decorator(maybe_cls)
    return decorator


def policy_step(*, id: str, order: int):
    if not isinstance(id, str) or _VALID_STEP_ID_RE.fullmatch(id) is None:
        raise ValueError("policy_step id must match ^[A-Za-z0-9_]+$")
    if not isinstance(order, int) or isinstance(order, bool) or order < 0:
        raise ValueError(f"policy_step order must be a non-negative int, got {order!r}")

    def decorator(fn: Callable[[Any], None]) -> Callable[[Any], None]:
        @wraps(fn)
        def wrapped(self: Any, *args: Any, **kwargs: Any) -> None:
            if args or kwargs:
                raise TypeError(f"Step {id!r} takes no arguments; pass data through input or state fields")
            return _run_step(self, step_id=id, fn=fn)

        setattr(wrapped, STEP_ID_ATTR, id)
        setattr(wrapped, STEP_ORDER_ATTR, order)
        return wrapped

    return decorator


def _require_meta(cls: type) -> PolicyMeta:
    meta = getattr(cls, POLICY_META_ATTR, None)
    if meta is None:
        raise TypeError(f"{cls.__name__} is not a policy class; decorate it with @define_policy(...)")
    return meta


def _runtime(instance: Any) -> RuntimeState:
    return getattr(instance, _RUNTIME_FIELD_NAME)


def finished_steps(instance: Any) -> list[str]:
    meta = _require_meta(type(instance))
    done = _runtime(instance).finished_steps
    return [s for s in meta.step_sequence if s in done]


def snapshot_path(instance: Any, step_id: str) -> Path | None:
    runtime = _runtime(instance)
    return None if runtime.save_path is None else runtime.save_path / f"{step_id}{SNAPSHOT_SUFFIX}"


def normalize_value(value: Any, *, path: str) -> Any:
    """Plain YAML/JSON data for a spec or state value."""
    if value is None or isinstance(value, (str, int, float, bool)):
        return value
    if isinstance(value, BaseModel):
        return value.model_dump(mode="json")
    if attrs.has(type(value)):
        return normalize_value(attrs.asdict(value, recurse=False), path=path)
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, dict):
        out = {}
        for key, item in value.items():
            if not isinstance(key, str):
                raise TypeError(f"Key at {path} must be str, got {type(key)!r}")
            out[key] = normalize_value(item, path=f"{path}.{key}")
        return out
    if isinstance(value, (list, tuple)):
        return [normalize_value(item, path=f"{path}[]") for item in value]
    raise TypeError(f"Unsupported value at {path}: {type(value)!r}")


def _collect_spec(instance: Any, meta: PolicyMeta) -> dict[str, Any]:
    return {name: normalize_value(getattr(instance, name), path=f"spec.{name}") for name in meta.fields_by_kind["spec"]}


def _write_spec_file(path: Path, payload: dict[str, Any]) -> None:
    atomic_write_via(path, lambda stream: _yaml.dump(payload, stream), binary=False)


def _bootstrap(instance: Any, meta: PolicyMeta, runtime: RuntimeState) -> None:
    if runtime.bootstrapped:
        return
    raw = getattr(instance, meta.save_path_field)
    runtime.bootstrapped = True
    if raw is None:
        return
    runtime.cache_enabled = True
    runtime.save_path = Path(raw)
    runtime.save_path.mkdir(parents=True, exist_ok=True)

    current = {"spec_fields": _collect_spec(instance, meta), "field_schema": dict(meta.field_schema)}
    spec_file = runtime.save_path / SPEC_FILE_NAME
    if spec_file.exists():
        existing = _yaml.load(spec_file.read_text(encoding="utf-8"))
        if not isinstance(existing, dict) or existing.get("spec_fields") != current["spec_fields"]:
            raise CheckpointVersionError("run spec differs from the saved spec.yaml", path=spec_file)
        if existing.get("field_schema") != current["field_schema"]:
            raise CheckpointVersionError("policy fields differ from the saved spec.yaml", path=spec_file)
    else:
        if any(runtime.save_path.glob(f"*{SNAPSHOT_SUFFIX}")):
            raise CheckpointVersionError(
                "spec.yaml is missing but step snapshots exist; clean the run directory", path=spec_file
            )
        _write_spec_file(spec_file, current)

    missing = None
    for step_id in meta.step_sequence:
        exists = (runtime.save_path / f"{step_id}{SNAPSHOT_SUFFIX}").exists()
        if exists and missing is not None:
            raise CheckpointVersionError(
                f"snapshot of step {step_id!r} exists but earlier step {missing!r} has none",
                path=runtime.save_path,
            )
        if not exists and missing is None:
            missing = step_id


def _enforce_order(meta: PolicyMeta, runtime: RuntimeState, step_id: str) -> None:
    expected = next((s for s in meta.step_sequence if s not in runtime.finished_steps), None)
    if expected is None:
        raise ConfigError(f"all steps already finished, got step {step_id!r}")
    if step_id != expected:
        raise ConfigError(
            f"expected step {expected!r} (order={meta.step_order_by_id[expected]}), "
            f"got {step_id!r} (order={meta.step_order_by_id[step_id]}); steps run in increasing order"
        )


def _snapshot(instance: Any, meta: PolicyMeta, runtime: RuntimeState, step_id: str) -> Checkpoint:
    records: dict = {}
    networks: dict[str, Any] = {}
    plain: dict[str, Any] = {}
    for name in meta.fields_by_kind["state"]:
        value = getattr(instance, name)
        if isinstance(value, nn.Module):
            arch = getattr(value, "spec", None)
            if not isinstance(arch, ArchSpec):
                raise TypeError(f"state field {name!r} holds a module without an ArchSpec")
            networks[name] = arch.model_dump(mode="json")
            records.update(state_records(value, prefix=f"{name}."))
        else:
            plain[name] = normalize_value(value, path=f"state.{name}")
    if not networks:
        raise ConfigError(f"step {step_id!r} finished without a network to snapshot")
    done = finished_steps(instance)
    return Checkpoint(
        arch=ArchSpec.model_validate(next(iter(networks.values()))),
        records=records,
        seed=int(getattr(instance, meta.seed_field)) if meta.seed_field else 0,
        counters={"steps_finished": len(done)},
        meta={"step": step_id, "finished": done, "networks": networks, "state": plain},
    )


def _restore(instance: Any, meta: PolicyMeta, runtime: RuntimeState, step_id: str) -> bool:
    path = snapshot_path(instance, step_id)
    if path is None or not path.exists():
        return False
    ckpt = load_checkpoint(path)
    finished = list(ckpt.meta.get("finished", []))
    if finished != list(meta.step_sequence[: len(finished)]) or step_id not in finished:
        raise CheckpointVersionError(f"snapshot does not record step {step_id!r} as finished", path=path)

    for name in meta.fields_by_kind["state"]:
        if name in ckpt.meta.get("networks", {}):
            arch = ArchSpec.model_validate(ckpt.meta["networks"][name])
            current = getattr(instance, name)
            if not (isinstance(current, nn.Module) and getattr(current, "spec", None) == arch):
                current = build_network(arch)
            load_state_records(current, ckpt.records, prefix=f"{name}.")
            setattr(instance, name, current)
        elif name in ckpt.meta.get("state", {}):
            setattr(instance, name, ckpt.meta["state"][name])
    runtime.finished_steps = set(finished)
    logger.info("Step {} restored from {}", step_id, path)
    return True


def _run_step(instance: Any, *, step_id: str, fn: Callable[[Any], None]) -> None:
    meta = _require_meta(type(instance))
    runtime = _runtime(instance)
    if runtime.running_step_id is not None:
        raise ConfigError(f"step {runtime.running_step_id!r} is still running; cannot start {step_id!r}")
    runtime.running_step_id = step_id
    try:
        _bootstrap(instance, meta, runtime)
        _enforce_order(meta, runtime, step_id)
        if _restore(instance, meta, runtime, step_id):
            return None

        logger.info("Running step {}", step_id)
        result = fn(instance)
        if result is not None:
            raise TypeError(f"Step {step_id!r} must return None, got {type(result)!r}")
        runtime.finished_steps.add(step_id)
        path = snapshot_path(instance, step_id)
        if path is not None:
            save_checkpoint(path, _snapshot(instance, meta, runtime, step_id))
        return None
    finally:
        runtime.running_step_id = None
