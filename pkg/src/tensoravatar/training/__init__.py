from .losses import LossWeights, loss_geom, loss_image, loss_opacity_penalty, ssim
from .optim import AdamState, adam_step
from .sampling import FrameCluster, balanced_sampler, frame_distance_matrix, spectral_cluster, uniform_sampler
from .trainer import TrainLog, Trainer, frame_objective, train
