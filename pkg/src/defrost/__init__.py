"""Layer-wise defrosting for transfer learning on controllable synthetic data."""

__version__ = "0.1.0"

from .datagen import (
    AutoencoderClone,
    GMClone,
    IsoGMClone,
    LabeledDataset,
    ReferenceConfig,
    Standardizer,
    clone_via_autoencoder,
    fit_gm,
    fit_isogm,
    make_reference,
    sample_mixture,
    standardize,
    subsample_balanced,
    train_autoencoder,
)
from .estimators import DenseClassifier
from .network import ElasticCoupling, NetworkSpec, ParamSet, TrainConfig
from .protocols import (
    DefrostingProfile,
    LayerwiseDefroster,
    TransferTask,
    build_profile,
    compliant_sweep,
    defrost_at,
    efficient_probe,
    optimal_depth,
)
from .simmetrics import information_imbalance, layerwise_curve, linear_cka, neighborhood_overlap, spearman_neighborhoods
