"""chartrl: verifiable rewards and data curation for chart-to-code RL.

The package renders candidate plotting code in a supervised sandbox,
verifies the rendered chart against atomic QA facts and visual embeddings,
standardizes rewards into group-relative advantages, and implements the
dataset filters, contamination checks and evaluation normalization used
around that loop.
"""

from .errors import (
    ChartRLError,
    ComponentUnavailable,
    ConfigError,
    DataError,
    EncoderMismatch,
    EncoderUnavailable,
    InspectorUnavailable,
    SandboxUnavailable,
    TypeMismatch,
    UnparseableAnswer,
    ZeroVector,
)
from .model import (
    AnswerType,
    ChartSample,
    Provenance,
    QACategory,
    QADistributionReport,
    QAItem,
    QASet,
    RewardBreakdown,
    RolloutGroup,
    load_shard,
    validate_qa_distribution,
    validate_sample,
    write_shard,
)
from .matching import NormalizedAnswer, match_answer, normalize_answer, verdict_for
from .inspector import InspectorClient, InspectorConfig, MockInspectorBackend, MockRule
from .sandbox import (
    ExecutionLimits,
    MockRenderRule,
    MockSandbox,
    RenderOutcome,
    RenderStatus,
    SubprocessSandbox,
    extract_code_block,
)
from .embedding import (
    DeterministicStubEncoder,
    FeatureVector,
    cosine_similarity,
    embed,
    kmeans,
    nearest_neighbors,
    representative_sample,
)
from .rewards import (
    RewardConfig,
    compute_advantages,
    compute_qa_reward,
    compute_total_reward,
    compute_visual_reward,
    kl_estimate,
    score_rollout_group,
)
from .toyloop import ToyPolicy, TrainingTrace, build_toy_fixture, run_toy_rl_loop

__version__ = "0.1.0"
