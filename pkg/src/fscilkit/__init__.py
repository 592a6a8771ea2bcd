"""fscilkit: feature-space toolkit for few-shot class-incremental learning.

The pieces compose into one pipeline: a toy extractor trained with
mixture-style surplus targets emits paired transferable/discriminative
feature datasets; session protocols split them into base + incremental
streams; prototype or Gaussian-mixture banks classify by set-cosine, with
optional two-stage dual-feature inference; resistance and calibration keep
the banks adapted across sessions; a metrics suite scores accuracy balance.
"""

from .data import (
    EmbeddingDataset,
    EmbeddingRecord,
    ProtocolConfig,
    SessionStream,
    build_protocol,
    load_embeddings,
    save_embeddings,
    synth_generate,
)
from .errors import FscilError
from .gmm import GmmBank, GmmParams, fit_gmm, gmm_classify, overall_mean
from .classify import Prediction, dual_classify, evaluate_session, ncm_classify
from .metrics import MetricsReport, SessionResult, aggregate, fmo_report, session_metrics
from .prototypes import DualPrototype, PrototypeBank, build_prototypes
from .runner import RunConfig, execute_run
from .selfopt import (
    CalibConfig,
    ResistConfig,
    absorb_labeled,
    accumulate_resistance,
    calibrate_gmm,
    calibrate_prototypes,
    resist_for_inference,
    resist_gmm,
)
from .training import ToyModel, TrainConfig, export_features, margin_ce_loss, train
from .vectors import DualFeature, cosine, cosine_set, fmo, l2_normalize

__version__ = "0.1.0"
