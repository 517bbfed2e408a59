"""Self-supervised binary segmentation with thresholding pseudo-labels at desk scale."""

from .imaging import compute_histogram, read_image, resize_bilinear, tile_image, to_grayscale
from .losses import LossSpec, make_loss
from .metrics import Collapse, EvalReport, collapse_diagnose, iou
from .segmenter import SegmenterParams, backward, forward, init_params
from .thresholding import ThresholdMethod, generate_pseudo_mask, ght_threshold, met_threshold, otsu_threshold
from .trainer import TrainConfig, evaluate, multi_seed_run, train

__version__ = "0.1.0"
