from .assembly import DNGPA_KINDS, KINDS, ModelAssembly, ModelConfig, ModelError, build_model
from .gp import GpHead, StaleFactorError, gp_posterior_sigma
from .predict import Prediction, dqr_sigma, predict
from .training import HISTORY_COLUMNS, TrainConfig, TrainingDivergence, TrainResult, evaluation_loss, train
