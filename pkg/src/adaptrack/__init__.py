"""Domain-adaptive multi-object tracking toolkit.

Pieces: MOT file I/O and box geometry (mot_data), an online two-stage
tracker (tracker), CLEAR/IDF1/HOTA evaluation (metrics), confidence-based
pseudo-labeling (pseudo_label), cross-domain mosaic augmentation (mosaic),
float32 checkpoint archives with uniform/greedy/EMA averaging (soup), and
a round-based self-training pipeline (pipeline). The `adaptrack` CLI in
cli exposes all of it.
"""

from .errors import (
    AdaptrackError,
    ArchiveError,
    BadMagicError,
    CorruptArchiveError,
    ExternalCommandError,
    IncompatibleArchivesError,
    NumericalError,
    ParseError,
    TruncatedArchiveError,
    UnsupportedVersionError,
    ValidationError,
)
from .mot_data import (
    BBox,
    Detection,
    SequenceInfo,
    TrackRecord,
    group_by_frame,
    iou,
    parse_detections,
    parse_ground_truth,
    parse_seqinfo,
    write_annotations,
)
from .assignment import solve_assignment
from .kalman import KalmanState, kalman_init, kalman_predict, kalman_update
from .tracker import TrackerConfig, TrackerSession, run_sequence
from .metrics import (
    ALPHA_GRID,
    ClearResult,
    FrameMatching,
    HotaResult,
    MetricsReport,
    clear_mot,
    evaluate,
    hota,
    idf1,
    match_frame,
)
from .pseudo_label import PseudoLabelConfig, filter_by_confidence, generate_pseudo_labels
from .mosaic import (
    LabeledSample,
    MosaicSpec,
    TileSpec,
    compose,
    plan_mosaic,
    pool_from_mot,
    remap_bbox,
    sample_batch,
)
from .soup import (
    SoupResult,
    TensorArchive,
    check_compatible,
    ema_update,
    greedy_soup,
    make_command_evaluator,
    read_archive,
    read_archive_file,
    uniform_soup,
    write_archive,
    write_archive_file,
)
from .pipeline import (
    PipelineConfig,
    pipeline_status,
    resume_round,
    run_pipeline,
    run_round,
)

__version__ = "0.1.0"
