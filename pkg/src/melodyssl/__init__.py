"""Semi-supervised vocal melody extraction with teacher-student self-training."""

from .pitch import N_CLASSES, freq_to_label, label_to_freq
from .audio import AudioClip, load_wav, write_wav, stft_logmag, to_mono_8k
from .model import ModelParams, init_params, predict_contour, save_checkpoint, load_checkpoint
from .metrics import evaluate, evaluate_corpus
from .ssl import SslConfig, TsMode, TrainSchedule, self_train, train_teacher

__version__ = "0.1.0"
