"""Coordinate-wise architecture search.

Round 1 varies each direction on its own around the seed, keeps the
candidates that fit the budget and scores them with the proxy. Every later
round takes the best ``keep_top`` settings of each direction so far and
scores their cross product.
"""

from __future__ import annotations

import csv
import io
import itertools
from concurrent.futures import ThreadPoolExecutor
from os import PathLike
from typing import Callable, Literal

import attrs
from loguru import logger
from pydantic import Field, ValidationError, field_validator

from ..errors import ConfigError
from ..io import atomic_write_text
from ..settings import YamlSettings
from .cost import CostReport, cost_model
from .spec import N_STAGES, ArchSpec

Direction = Literal["blocks", "depth", "width", "groups"]
DIRECTIONS: tuple[Direction, ...] = ("blocks", "depth", "width", "groups")
ProxyEval = Callable[[ArchSpec], float]


class SearchConfig(YamlSettings):
    directions: list[Direction] = Field(
        default_factory=lambda: ["blocks", "width", "groups"],
        min_length=1,
        description="Directions explored around the seed architecture.",
    )
    max_bops: int = Field(gt=0, description="Upper bound on binary operations per sample.")
    max_flops: int = Field(gt=0, description="Upper bound on real-valued operations per sample.")
    rounds: int = Field(
        default=3,
        ge=1,
        description="Total rounds: the per-direction sweep, then combination rounds of the kept settings.",
    )
    keep_top: int = Field(default=2, ge=1, description="Settings per direction carried into the next round.")
    settings: dict[Direction, list[str]] = Field(
        default_factory=dict,
        description=(
            "Explicit setting lists per direction; missing directions are generated from the seed. "
            "blocks: '1133', depth: '+0100', width: '2', groups: '1:1:2:2'."
        ),
    )
    workers: int = Field(default=1, ge=1, description="Threads evaluating proxy scores concurrently.")
    proxy_epochs: int = Field(default=2, ge=1)
    proxy_dataset: str = "cifar10"

    @field_validator("directions")
    @classmethod
    def _unique(cls, value: list[Direction]) -> list[Direction]:
        if len(set(value)) != len(value):
            raise ValueError(f"duplicate search directions: {value}")
        return value


def _digits(text: str, what: str) -> tuple[int, ...]:
    if len(text) != N_STAGES or not text.isdigit():
        raise ConfigError(f"{what} setting {text!r} needs {N_STAGES} digits")
    return tuple(int(c) for c in text)


def apply_setting(spec: ArchSpec, direction: Direction, setting: str) -> ArchSpec:
    """Return ``spec`` with one direction's setting applied; invalid results raise ValidationError."""
    if direction == "blocks":
        return spec.replace(blocks=_digits(setting, "blocks"))
    if direction == "depth":
        if not setting.startswith("+"):
            raise ConfigError(f"depth setting {setting!r} must look like '+0100'")
        extra = _digits(setting[1:], "depth")
        return spec.replace(blocks=tuple(b + e for b, e in zip(spec.blocks, extra)))
    if direction == "width":
        return spec.replace(expansion=int(setting))
    if direction == "groups":
        parts = setting.split(":")
        if len(parts) != N_STAGES:
            raise ConfigError(f"groups setting {setting!r} needs {N_STAGES} values")
        return spec.replace(groups=tuple(int(p) for p in parts))
    raise ConfigError(f"Unknown search direction {direction!r}")


def default_settings(seed: ArchSpec, direction: Direction) -> list[str]:
    out: list[str] = []
    if direction == "blocks":
        for src, dst in itertools.permutations(range(N_STAGES), 2):
            b = list(seed.blocks)
            if b[src] > 1 and b[dst] < 9:
                b[src] -= 1
                b[dst] += 1
                out.append("".join(map(str, b)))
    elif direction == "depth":
        for i in range(N_STAGES):
            if seed.blocks[i] < 9:
                out.append("+" + "".join("1" if j == i else "0" for j in range(N_STAGES)))
    elif direction == "width":
        out = ["1", "2", "4"]
    elif direction == "groups":
        for i in range(N_STAGES):
            for factor in (0.5, 2):
                g = list(seed.groups)
                g[i] = int(g[i] * factor)
                if g[i] >= 1 and g[i] != seed.groups[i]:
                    out.append(":".join(map(str, g)))
    return list(dict.fromkeys(out))


@attrs.frozen
class Candidate:
    spec: ArchSpec
    choice: tuple[tuple[Direction, str], ...]
    cost: CostReport
    score: float | None = None

    @property
    def name(self) -> str:
        return self.spec.name


@attrs.frozen
class SearchRound:
    index: int
    enumerated: tuple[Candidate, ...]
    scored: tuple[Candidate, ...]

    def to_csv(self) -> str:
        """Every enumerated candidate; ``score`` stays empty for those over budget."""
        scores = {c.choice: c.score for c in self.scored}
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["spec", "experts", "choice", "score", "bops", "flops", "size_bytes", "within_budget"])
        for c in self.enumerated:
            score = scores.get(c.choice)
            writer.writerow(
                [
                    c.name,
                    c.spec.n_experts,
                    " ".join(f"{d}={s}" for d, s in c.choice),
                    "" if score is None else f"{score:.6g}",
                    c.cost.bops,
                    c.cost.flops,
                    c.cost.model_size_bytes,
                    int(c.choice in scores),
                ]
            )
        return buf.getvalue()

    def write_csv(self, path: str | PathLike) -> None:
        atomic_write_text(path, self.to_csv())


@attrs.frozen
class SearchResult:
    status: Literal["ok", "empty"]
    candidates: tuple[Candidate, ...]
    rounds: tuple[SearchRound, ...] = ()

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["spec", "score", "bops", "flops", "size_bytes"])
        for c in self.candidates:
            writer.writerow([c.name, f"{c.score:.6g}", c.cost.bops, c.cost.flops, c.cost.model_size_bytes])
        return buf.getvalue()

    def write_csv(self, path: str | PathLike) -> None:
        atomic_write_text(path, self.to_csv())


class _Scorer:
    """Memoised proxy evaluation keyed by the formatted spec and expert count."""

    def __init__(self, proxy_eval: ProxyEval, workers: int) -> None:
        self.proxy_eval = proxy_eval
        self.workers = workers
        self.cache: dict[str, float] = {}

    @staticmethod
    def key(spec: ArchSpec) -> str:
        return f"{spec.name}/{spec.n_experts}"

    def score(self, specs: list[ArchSpec]) -> list[float]:
        pending = list(dict.fromkeys(self.key(s) for s in specs if self.key(s) not in self.cache))
        by_key = {self.key(s): s for s in specs}
        if pending:
            if self.workers > 1:
                with ThreadPoolExecutor(max_workers=self.workers) as pool:
                    scores = list(pool.map(lambda k: self.proxy_eval(by_key[k]), pending))
            else:
                scores = [self.proxy_eval(by_key[k]) for k in pending]
            self.cache.update(zip(pending, (float(s) for s in scores)))
        return [self.cache[self.key(s)] for s in specs]


def _enumerate(seed: ArchSpec, choices: list[tuple[tuple[Direction, str], ...]]) -> list[Candidate]:
    out = []
    for choice in choices:
        spec = seed
        try:
            for direction, setting in choice:
                spec = apply_setting(spec, direction, setting)
        except (ValidationError, ConfigError, ValueError) as exc:
            logger.debug("Skipping {}: {}", choice, exc)
            continue
        out.append(Candidate(spec, choice, cost_model(spec)))
    return out


def _score_round(index: int, enumerated: list[Candidate], cfg: SearchConfig, scorer: _Scorer) -> SearchRound:
    feasible = [c for c in enumerated if c.cost.within(cfg.max_bops, cfg.max_flops)]
    scores = scorer.score([c.spec for c in feasible])
    scored = tuple(attrs.evolve(c, score=s) for c, s in zip(feasible, scores))
    logger.info(
        "Search round {}: {} candidates, {} within budget", index, len(enumerated), len(scored)
    )
    return SearchRound(index, tuple(enumerated), scored)


def _top_settings(history: list[Candidate], direction: Direction, keep: int) -> list[str]:
    best: dict[str, float] = {}
    for c in history:
        for d, setting in c.choice:
            if d == direction and c.score is not None:
                best[setting] = max(best.get(setting, float("-inf")), c.score)
    ranked = sorted(best.items(), key=lambda kv: -kv[1])
    return [s for s, _ in ranked[:keep]]


def search(seed: ArchSpec, cfg: SearchConfig, proxy_eval: ProxyEval) -> SearchResult:
    seed_cost = cost_model(seed)
    if not seed_cost.within(cfg.max_bops, cfg.max_flops):
        logger.warning(
            "Seed {} ({} BOPs, {} FLOPs) exceeds the budget; nothing to search", seed.name, seed_cost.bops, seed_cost.flops
        )
        return SearchResult("empty", ())

    settings = {d: cfg.settings.get(d) or default_settings(seed, d) for d in cfg.directions}
    scorer = _Scorer(proxy_eval, cfg.workers)
    rounds: list[SearchRound] = []
    history: list[Candidate] = []

    first = [((d, s),) for d in cfg.directions for s in settings[d]]
    rounds.append(_score_round(1, _enumerate(seed, first), cfg, scorer))
    history.extend(rounds[-1].scored)

    for index in range(2, cfg.rounds + 1):
        tops = [[(d, s) for s in _top_settings(history, d, cfg.keep_top)] for d in cfg.directions]
        if not all(tops):
            logger.info("Search stops after round {}: a direction has no feasible setting", index - 1)
            break
        combos = [tuple(c) for c in itertools.product(*tops)]
        rounds.append(_score_round(index, _enumerate(seed, combos), cfg, scorer))
        history.extend(rounds[-1].scored)

    unique: dict[str, Candidate] = {}
    for c in history:
        unique.setdefault(_Scorer.key(c.spec), c)
    ranked = sorted(unique.values(), key=lambda c: -float(c.score))
    if not ranked:
        return SearchResult("empty", (), tuple(rounds))
    return SearchResult("ok", tuple(ranked), tuple(rounds))
