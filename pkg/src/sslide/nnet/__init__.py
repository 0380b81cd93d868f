from .model import ModelConfig, TrainingRecord, backward, forward, init_params, loss_localization, loss_multipath
from .train import TrainConfig, TrainResult, predict_location, train
from .checkpoint import load_checkpoint, save_checkpoint
