"""Open-world recognition with a growing cascade of one-class classifiers."""

from .cascade import Cascade, ReferenceSet, load_cascade, save_cascade
from .config import RunConfig, load_config, preset
from .data import Dataset, Instance, load_dataset, synth_generate
from .evaluation import StageReport, StreamSchedule, en_accuracy, f_score, run_protocol
from .openmax import UNKNOWN

__version__ = "0.1.0"
