"""Warm-started tournament evolution over architecture genomes.

A single controller owns the population. Candidate evaluation goes through
a small pool interface so the same loop runs serially (deterministic) or
with a thread pool (parent chosen from the population at dispatch time,
replacement applied at completion time).
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
import hashlib
import json
import os
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .genome import FUSION, Genome, iter_blocks, mutate
from .seeds import SEED_KINDS, seed_genome, unimodal_seed
from .vocab import DEFAULT_VOCABULARY, Vocabulary

EVALUATORS = ("neural", "surrogate")
MODES = ("sync", "async")

CHECKPOINT_FORMAT = "fusenas-checkpoint"
CHECKPOINT_VERSION = 1

# Evaluators map (genome, seed) to a fitness in [0, 1].
Evaluator = Callable[[Genome, int], float]


@dataclass(frozen=True)
class Individual:
    genome: Genome
    fitness: float
    id: int
    parent_id: Optional[int]
    created_at: int


@dataclass(frozen=True)
class SearchConfig:
    population_size: int = 100
    tournament_size: int = 30
    candidates: int = 5000
    mutation_rate: float = 0.01875
    seed_kind: str = "hybrid"
    modalities: int = 3
    rng_seed: int = 0
    evaluator: str = "neural"
    mode: str = "sync"

    def __post_init__(self):
        if self.population_size < 1:
            raise ValueError("population_size must be at least 1")
        if not 1 <= self.tournament_size <= self.population_size:
            raise ValueError("tournament_size must be in [1, population_size]")
        if self.candidates < 1:
            raise ValueError("candidates must be at least 1")
        if not 0.0 <= self.mutation_rate <= 1.0:
            raise ValueError("mutation_rate must be in [0, 1]")
        if self.seed_kind not in SEED_KINDS + ("unimodal",):
            raise ValueError(f"unknown seed kind {self.seed_kind!r}")
        if self.modalities < 1:
            raise ValueError("modalities must be at least 1")
        if self.evaluator not in EVALUATORS:
            raise ValueError(f"evaluator must be one of {EVALUATORS}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")


@dataclass(frozen=True)
class SearchResult:
    best: Individual
    history: Tuple[Individual, ...]
    population: Tuple[Individual, ...]
    failures: int = 0


def starting_genome(config: SearchConfig, vocab: Vocabulary) -> Genome:
    if config.seed_kind == "unimodal":
        return unimodal_seed(vocab)
    return seed_genome(config.seed_kind, config.modalities, vocab)


def candidate_seed(base_seed: int, candidate_id: int) -> int:
    """Stable per-candidate training seed, independent of worker timing."""
    digest = hashlib.sha256(f"{base_seed}:{candidate_id}".encode()).hexdigest()
    return int(digest[:8], 16)


# ---------------------------------------------------------------------------
# surrogate landscape

def surrogate_fitness(genome: Genome, vocab: Vocabulary = DEFAULT_VOCABULARY
                      ) -> float:
    """Training-free score in [0, 1]:

        0.7 * (share of modality blocks whose left layer is attention)
      + 0.3 * (share of fusion blocks whose combiner is concat)

    The optimum 1.0 is every modality block on an attention left branch and
    every fusion combiner set to concat; a section with no blocks
    contributes zero to its term.
    """
    attn = {i for i, op in enumerate(vocab.layers) if op.name == "attention"}
    concat = vocab.combiner_index("concat")

    n_mod = hits_mod = n_fus = hits_fus = 0
    for arch, _, block in iter_blocks(genome):
        if arch == FUSION:
            n_fus += 1
            hits_fus += block.combiner == concat
        else:
            n_mod += 1
            hits_mod += block.left.layer in attn
    mod_share = hits_mod / n_mod if n_mod else 0.0
    fus_share = hits_fus / n_fus if n_fus else 0.0
    return 0.7 * mod_share + 0.3 * fus_share


def make_surrogate_evaluator(vocab: Vocabulary = DEFAULT_VOCABULARY
                             ) -> Evaluator:
    return lambda genome, seed: surrogate_fitness(genome, vocab)


# ---------------------------------------------------------------------------
# selection

def tournament(population: List[Individual], size: int,
               rng: np.random.Generator, objective: str = "max") -> Individual:
    """Best (or worst) of `size` members sampled without replacement; ties
    go to the lower id."""
    if not population:
        raise ValueError("tournament over an empty population")
    if not 1 <= size <= len(population):
        raise ValueError("tournament size must be in [1, population size]")
    if objective not in ("max", "min"):
        raise ValueError(f"objective must be 'max' or 'min', got {objective!r}")
    picks = rng.choice(len(population), size=size, replace=False)
    chosen = [population[i] for i in picks]
    if objective == "max":
        return max(chosen, key=lambda m: (m.fitness, -m.id))
    return min(chosen, key=lambda m: (m.fitness, m.id))


# ---------------------------------------------------------------------------
# evaluation pools

class SerialPool:
    """One evaluation in flight; work happens inside next_completion."""

    capacity = 1

    def __init__(self, evaluator: Evaluator):
        self._evaluator = evaluator
        self._queue: List[Tuple[int, Genome, int]] = []

    def submit(self, ticket: int, genome: Genome, seed: int) -> None:
        self._queue.append((ticket, genome, seed))

    @property
    def in_flight(self) -> int:
        return len(self._queue)

    def next_completion(self) -> Tuple[int, float, Optional[Exception]]:
        ticket, genome, seed = self._queue.pop(0)
        try:
            return ticket, float(self._evaluator(genome, seed)), None
        except Exception as exc:
            return ticket, 0.0, exc

    def close(self) -> None:
        pass


class ThreadPool:
    """Up to `workers` evaluations in flight on a thread pool."""

    def __init__(self, evaluator: Evaluator, workers: int):
        if workers < 1:
            raise ValueError("workers must be at least 1")
        self.capacity = workers
        self._evaluator = evaluator
        self._executor = concurrent.futures.ThreadPoolExecutor(workers)
        self._pending: Dict[concurrent.futures.Future, int] = {}

    def submit(self, ticket: int, genome: Genome, seed: int) -> None:
        future = self._executor.submit(self._evaluator, genome, seed)
        self._pending[future] = ticket

    @property
    def in_flight(self) -> int:
        return len(self._pending)

    def next_completion(self) -> Tuple[int, float, Optional[Exception]]:
        done, _ = concurrent.futures.wait(
            self._pending, return_when=concurrent.futures.FIRST_COMPLETED)
        future = min(done, key=self._pending.__getitem__)
        ticket = self._pending.pop(future)
        try:
            return ticket, float(future.result()), None
        except Exception as exc:
            return ticket, 0.0, exc

    def close(self) -> None:
        self._executor.shutdown(wait=True)


# ---------------------------------------------------------------------------
# configuration hash and checkpoints

def config_fingerprint(config: SearchConfig, vocab: Vocabulary) -> str:
    doc = dataclasses.asdict(config)
    # the candidate budget is a stopping point, not part of the search
    # trajectory's identity: a checkpoint may be resumed with a larger
    # budget and continues bit-exactly
    doc.pop("candidates")
    doc["vocabulary"] = vocab.fingerprint()
    raw = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(raw.encode()).hexdigest()


def _genome_doc(genome: Genome) -> dict:
    from .genome import _block_doc  # canonical block encoding

    return {
        "modality_blocks": [[_block_doc(b) for b in blocks]
                            for blocks in genome.modality_blocks],
        "fusion_blocks": [_block_doc(b) for b in genome.fusion_blocks],
        "meta": {"seed": genome.meta.seed,
                 "generation": genome.meta.generation},
    }


def _genome_from_doc(doc: dict) -> Genome:
    from .genome import GenomeMeta, _block_from

    return Genome(
        modality_blocks=tuple(tuple(_block_from(b) for b in blocks)
                              for blocks in doc["modality_blocks"]),
        fusion_blocks=tuple(_block_from(b) for b in doc["fusion_blocks"]),
        meta=GenomeMeta(**doc["meta"]),
    )


def _individual_doc(ind: Individual) -> dict:
    return {"id": ind.id, "parent_id": ind.parent_id, "fitness": ind.fitness,
            "created_at": ind.created_at, "genome": _genome_doc(ind.genome)}


def _individual_from_doc(doc: dict) -> Individual:
    return Individual(genome=_genome_from_doc(doc["genome"]),
                      fitness=doc["fitness"], id=doc["id"],
                      parent_id=doc["parent_id"],
                      created_at=doc["created_at"])


def write_checkpoint(path: str, config: SearchConfig, vocab: Vocabulary,
                     rng: np.random.Generator,
                     population: List[Individual], next_id: int,
                     candidates_done: int, best: Optional[Individual],
                     failures: int) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config_hash": config_fingerprint(config, vocab),
        "rng_state": rng.bit_generator.state,
        "population": [_individual_doc(m) for m in population],
        "next_id": next_id,
        "candidates_done": candidates_done,
        "best": _individual_doc(best) if best is not None else None,
        "failures": failures,
    }
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
    os.replace(tmp, path)


def read_checkpoint(path: str, config: SearchConfig,
                    vocab: Vocabulary) -> dict:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a search checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    expected = config_fingerprint(config, vocab)
    if doc["config_hash"] != expected:
        raise ValueError(
            "checkpoint was written under a different configuration; "
            "refusing to resume")
    return doc


# ---------------------------------------------------------------------------
# search

def init_population(config: SearchConfig, evaluator: Evaluator,
                    rng: np.random.Generator,
                    vocab: Vocabulary = DEFAULT_VOCABULARY
                    ) -> Tuple[List[Individual], int]:
    """P mutated copies of the seed, each evaluated; returns (members,
    evaluator failure count)."""
    seed = starting_genome(config, vocab)
    members: List[Individual] = []
    failures = 0
    for i in range(config.population_size):
        genome = mutate(seed, config.mutation_rate, rng, vocab)
        try:
            fitness = float(evaluator(genome, candidate_seed(
                config.rng_seed, i)))
        except Exception:
            fitness = 0.0
            failures += 1
        members.append(Individual(genome=genome, fitness=fitness, id=i,
                                  parent_id=None, created_at=0))
    if failures == config.population_size:
        # an evaluator that failed on every warm-start member cannot
        # score children either
        raise RuntimeError("evaluator failed on every initial individual")
    return members, failures


def run_search(config: SearchConfig, evaluator: Evaluator, *,
               vocab: Vocabulary = DEFAULT_VOCABULARY,
               workers: int = 1,
               pool=None,
               checkpoint_path: Optional[str] = None,
               checkpoint_every: int = 1,
               resume: bool = False,
               log_fn: Optional[Callable[[dict], None]] = None
               ) -> SearchResult:
    """Evolve until `config.candidates` children have been evaluated.

    Serial mode draws rng in the order: parent tournament, mutation, kill
    tournament; with an async pool the kill tournament happens at
    completion time against the then-current population. When resuming,
    history covers only the candidates produced by this call.
    """
    rng = np.random.default_rng(config.rng_seed)

    if resume:
        if checkpoint_path is None:
            raise ValueError("resume requires a checkpoint path")
        doc = read_checkpoint(checkpoint_path, config, vocab)
        population = [_individual_from_doc(d) for d in doc["population"]]
        rng.bit_generator.state = doc["rng_state"]
        next_id = doc["next_id"]
        done = doc["candidates_done"]
        best = (_individual_from_doc(doc["best"])
                if doc["best"] is not None else None)
        failures = doc["failures"]
    else:
        population, failures = init_population(config, evaluator, rng, vocab)
        next_id = config.population_size
        done = 0
        best = None

    if pool is None:
        if config.mode == "sync":
            pool = SerialPool(evaluator)
        else:
            pool = ThreadPool(evaluator, workers)

    pending: Dict[int, Tuple[Optional[int], Genome]] = {}
    history: List[Individual] = []
    dispatched = done

    try:
        while done < config.candidates:
            while (dispatched < config.candidates
                   and pool.in_flight < pool.capacity):
                parent = tournament(population, config.tournament_size, rng,
                                    "max")
                child_genome = mutate(parent.genome, config.mutation_rate,
                                      rng, vocab)
                pending[next_id] = (parent.id, child_genome)
                pool.submit(next_id, child_genome,
                            candidate_seed(config.rng_seed, next_id))
                next_id += 1
                dispatched += 1

            cid, fitness, error = pool.next_completion()
            parent_id, child_genome = pending.pop(cid)
            if error is not None:
                failures += 1
            done += 1
            child = Individual(genome=child_genome, fitness=fitness, id=cid,
                               parent_id=parent_id, created_at=done)
            dead = tournament(population, config.tournament_size, rng, "min")
            population.remove(dead)
            population.append(child)
            history.append(child)
            if best is None or child.fitness > best.fitness:
                best = child
            if log_fn is not None:
                log_fn({"id": child.id, "parent_id": child.parent_id,
                        "fitness": child.fitness, "timestamp": time.time()})
            if checkpoint_path is not None and (
                    done == config.candidates
                    or (checkpoint_every and done % checkpoint_every == 0)):
                write_checkpoint(checkpoint_path, config, vocab, rng,
                                 population, next_id, done, best, failures)
    finally:
        pool.close()

    return SearchResult(best=best, history=tuple(history),
                        population=tuple(population), failures=failures)
