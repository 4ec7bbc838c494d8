"""Region datasets, synthetic generation, meta-splits and episodic task sampling."""
from .splits import (
    KMeansResult,
    extract_features,
    kmeans,
    region_features,
    split_meta_clustered,
    split_meta_random,
    split_to_map,
)
from .synthetic import GeneratorConfigError, SyntheticConfig, generate_synthetic_regions
from .tasks import (
    SamplingExhaustedError,
    Task,
    TaskSampler,
    sample_segmentation_task,
    sample_task,
)
from .tiles import (
    META_SETS,
    META_TEST,
    META_TRAIN,
    META_VAL,
    LabelError,
    LabeledTile,
    RegionDataset,
    TileFormatError,
    TileMissingError,
    assign_partitions,
    load_tiles,
    majority_label,
    read_tile,
    write_tile,
    write_tiles,
)
