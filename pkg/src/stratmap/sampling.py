"""Parent selection and cousin selection.

All randomness comes from an injected ``numpy.random.Generator``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .feature_map import CandidateRecord, EvolutionaryDatabase, FeatureDimension, FeatureVector


class EmptyIsland(ValueError):
    pass


@dataclass(frozen=True)
class SamplingConfig:
    alpha: float = 0.5
    sigma_d: float = 1.0
    k_bf: int | None = None  # None -> round(n / 4), at least 1
    n_best: int = 2
    n_diverse: int = 3
    n_random: int = 2
    attempts_per_diverse: int = 10

    def __post_init__(self):
        if not 0 <= self.alpha <= 1:
            raise ValueError("alpha must be in [0, 1]")
        if self.sigma_d <= 0:
            raise ValueError("sigma_d must be > 0")
        if min(self.n_best, self.n_diverse, self.n_random) < 0:
            raise ValueError("cousin counts must be >= 0")

    def bitflips(self, width: int) -> int:
        if self.k_bf is not None:
            return self.k_bf
        return default_k_bf(width)


def default_k_bf(width: int) -> int:
    return max(1, int(math.floor(width / 4 + 0.5)))


def _members(island) -> list[str]:
    return list(getattr(island, "population", island))


def sample_parent(island, db: EvolutionaryDatabase, config: SamplingConfig | float,
                  rng: np.random.Generator) -> CandidateRecord:
    """Two-stage mixture: with prob ``alpha`` pick uniformly among the island's cell occupants,
    otherwise uniformly over the island's whole population.

    ``island`` is an Island or a plain list of record ids.
    """
    alpha = config.alpha if isinstance(config, SamplingConfig) else float(config)
    population = _members(island)
    if not population:
        raise EmptyIsland("island has no members")
    elite_ids = set(db.cells.values())
    on_map = [rid for rid in population if rid in elite_ids]
    pool = on_map if (rng.random() < alpha and on_map) else population
    return db.records[pool[int(rng.integers(len(pool)))]]


def bitflip_perturb(bits: str, k_bf: int, rng: np.random.Generator) -> str:
    if k_bf < 0:
        raise ValueError("k_bf must be >= 0")
    out = list(bits)
    for _ in range(k_bf):
        i = int(rng.integers(len(out)))
        out[i] = "1" if out[i] == "0" else "0"
    return "".join(out)


def perturb_feature_vector(parent: FeatureVector, dims: list[FeatureDimension],
                           config: SamplingConfig, rng: np.random.Generator,
                           sigma: float | None = None) -> FeatureVector:
    """Continuous bins become floor(N(bin, sigma^2)) clamped; category bits get k_bf flips."""
    sigma = config.sigma_d if sigma is None else sigma
    out = []
    for v, d in zip(parent.values, dims):
        if d.kind == "categorical":
            out.append(bitflip_perturb(v, config.bitflips(d.width), rng))
        else:
            b = math.floor(rng.normal(v, sigma))
            out.append(min(max(b, 0), d.bins - 1))
    return FeatureVector(tuple(out))


def sample_cousins(parent: CandidateRecord, island, db: EvolutionaryDatabase,
                   config: SamplingConfig, rng: np.random.Generator) -> list[CandidateRecord]:
    """Best, then diverse (perturbed-vector cell lookups), then random cousins, de-duplicated."""
    population = _members(island)
    chosen: list[str] = []

    def take(rid: str) -> None:
        if rid != parent.id and rid not in chosen:
            chosen.append(rid)

    members = [rid for rid in population if rid != parent.id]
    ranked = sorted((db.records[rid] for rid in members if not db.records[rid].failed),
                    key=lambda r: -r.score)
    for rec in ranked[: config.n_best]:
        take(rec.id)

    if parent.feature_vector is not None and config.n_diverse:
        found, attempts = 0, 0
        budget = config.attempts_per_diverse * config.n_diverse
        while found < config.n_diverse and attempts < budget:
            attempts += 1
            fv = perturb_feature_vector(parent.feature_vector, db.dimensions, config, rng)
            occ = db.occupant(fv.key)
            if occ is None or occ.id == parent.id or occ.id in chosen:
                continue
            chosen.append(occ.id)
            found += 1

    if members and config.n_random:
        k = min(config.n_random, len(members))
        for i in rng.choice(len(members), size=k, replace=False):
            take(members[int(i)])
    return [db.records[rid] for rid in chosen]
