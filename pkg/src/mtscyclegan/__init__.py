"""Unpaired domain translation for multivariate time series with LSTM-based CycleGAN networks."""
from .synthgen import (ChannelMapping, DomainDataset, DomainParams, DriverSpec, Window, WindowSpec,
                       analytic_cross_domain_map, default_source_params, default_target_params,
                       derive_channels, generate_dataset, generate_driver, load_dataset,
                       save_dataset, slice_windows)
from .nets import DiscriminatorConfig, GeneratorConfig, Network, build_discriminator, build_generator, translate
from .training import (CycleModels, LossBreakdown, LossWeights, TrainConfig, fit, load_checkpoint,
                       save_checkpoint, train_step)
from .paramrec import build_report, estimate_affine, estimate_lag, recover_window, recover_windows

__version__ = "0.1.0"
