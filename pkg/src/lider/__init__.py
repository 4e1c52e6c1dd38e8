"""LIDER: a clustering-based learned index for approximate nearest-neighbor
search over high-dimensional dense embeddings.

Queries are reduced to sortable bit hashkeys, located in sorted key arrays
by small linear-regression models, expanded into candidate windows, and
verified by exact cosine similarity. A two-layer clustered layout keeps
every model's search space small.
"""

from .bench import (
    EvalReport,
    ExperimentConfig,
    mrr_at_10,
    recall_at_k,
    run_experiment,
)
from .core_model import (
    CoreModel,
    CoreModelParams,
    build_core,
    expansion_search,
    search_core,
)
from .hashkey import (
    Hashkey,
    SortedHashkeyArray,
    build_sorted_array,
    compare,
    extended_distance,
    extended_element_distance,
    non_prefix_length,
)
from .index import (
    Clustering,
    LiderIndex,
    LiderParams,
    QueryResult,
    build_index,
    kmeans,
    load_index,
    merge_topk,
    query,
    save_index,
)
from .lsh import CompoundHashFunction, collision_law_check, make_compound_functions
from .rmi import KeyRescaler, LinearModel, RmiModel, predict, prediction_audit, train
from .sklsh import SkLshIndex, build_sklsh, search_sklsh
from .vectorstore import (
    ScoredHit,
    VectorCollection,
    cosine_similarity,
    exact_topk,
    generate_synthetic,
    load_vectors,
    normalize,
    write_vectors,
)

__version__ = "0.1.0"
