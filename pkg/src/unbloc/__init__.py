"""Class-based localisation of UNB sensor nodes from RSSI fingerprints, with optional D2D refinement."""
from .channel import ChannelModel, CrlbInputs, NodeKind, crlb_rssi, crlb_toa, rssi_sample, simulate_campaign
from .classify import Algorithm, KnnConfig, OnlineTrainer, TrainedClassifier, online_step, predict, train
from .dataset import (
    MISSING,
    FingerprintMatrix,
    MessageRecord,
    MessageSet,
    anchor_split,
    average_k,
    build_fingerprints,
    load_messages,
    select_features,
)
from .evaluate import CampaignConfig, build_campaign, confusion, error_cdf, run_sweep, run_two_step
from .forest import ForestConfig
from .geo import ClassPartition, GeoPoint, PlanarPoint, assign_class, make_partition, project, unproject
from .kernels import BACKEND
from .locate import Anchor, LocalizationResult, Mode, in_range, localize, multilaterate
from .ranging import CurveKind, RangingCurve, RangingSample, fit_polynomial, fit_power, invert_distance
from .svm import SvmConfig

__version__ = "0.1.0"
