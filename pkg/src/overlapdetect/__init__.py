"""Detecting overlaps between pairs of reads drawn from a random sequence."""

from .detectors import (
    COMPARE_EPS,
    Decision,
    DetectorConfig,
    detect_noiseless,
    detect_noisy,
    map_decide,
    markov_exact_score,
    min_detectable_overlap,
)
from .errors import (
    BoundUndefined,
    DivergenceUndefined,
    ExponentUndefined,
    InvalidArgument,
    ModelInvalid,
    OverlapDetectError,
    Unsupported,
)
from .reading_channel import (
    Channel,
    binary_symmetric_channel,
    chernoff_exponents,
    identity_channel,
    pair_statistics,
    renyi_divergence,
    symmetric_channel,
    theta_star,
)
from .sampler import ReadPair, overlap_prior, sample_pair, sample_pair_given_t
from .source_models import (
    Markov,
    MarkovKernel,
    Memoryless,
    Pmf,
    entropy_rate,
    renyi_entropy_rate,
    stationary_distribution,
    symmetric_kernel,
    uniform,
)

__version__ = "0.1.0"
