"""Evolutionary search over multimodal fusion architectures, on plain numpy.

The pieces compose bottom-up: a discrete architecture encoding
(:mod:`fusenas.genome`, :mod:`fusenas.vocab`, :mod:`fusenas.seeds`)
compiles to a computation graph (:mod:`fusenas.compiler`) executed by a
tape-based autodiff engine (:mod:`fusenas.autodiff`, :mod:`fusenas.ops`,
:mod:`fusenas.executor`). A trainer scores genomes on synthetic multimodal
sequence data (:mod:`fusenas.trainer`, :mod:`fusenas.data`) and a
tournament-selection loop evolves them (:mod:`fusenas.evolution`). The
``fusenas`` console script (:mod:`fusenas.cli`) wires it all together.
"""

from .compiler import (
    BudgetExceeded,
    CompileError,
    ComputationGraph,
    classify_fusion,
    compile_genome,
    count_parameters,
    to_dot,
)
from .data import Dataset, DatasetSpec, generate, load_dataset, save_dataset
from .evolution import (
    Individual,
    SearchConfig,
    SearchResult,
    make_surrogate_evaluator,
    run_search,
    surrogate_fitness,
    tournament,
)
from .genome import (
    BlockGene,
    BranchGene,
    Genome,
    cardinality,
    genome_from_text,
    genome_to_text,
    linearize,
    mutate,
)
from .seeds import seed_genome, unimodal_seed
from .trainer import FitnessResult, TrainConfig, evaluate_candidate
from .vocab import DEFAULT_VOCABULARY, Vocabulary

__version__ = "0.1.0"

__all__ = [
    "BlockGene",
    "BranchGene",
    "BudgetExceeded",
    "CompileError",
    "ComputationGraph",
    "Dataset",
    "DatasetSpec",
    "DEFAULT_VOCABULARY",
    "FitnessResult",
    "Genome",
    "Individual",
    "SearchConfig",
    "SearchResult",
    "TrainConfig",
    "Vocabulary",
    "cardinality",
    "classify_fusion",
    "compile_genome",
    "count_parameters",
    "evaluate_candidate",
    "generate",
    "genome_from_text",
    "genome_to_text",
    "linearize",
    "load_dataset",
    "make_surrogate_evaluator",
    "mutate",
    "run_search",
    "save_dataset",
    "seed_genome",
    "surrogate_fitness",
    "to_dot",
    "tournament",
    "unimodal_seed",
]
