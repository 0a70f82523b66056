from .gradcheck import finite_difference_check, numerical_gradient
from .layers import (
    EVAL,
    ConcreteDropout,
    Context,
    Dense,
    Dropout,
    FrozenProjection,
    Layer,
    Relu,
    ResidualBlock,
    RffLayer,
    ShapeError,
    SpectralNormDense,
    sigmoid,
    softplus,
    softplus_inv,
)
from .losses import (
    NLL_SIGMA_FLOOR,
    QUANTILES,
    LossError,
    gaussian_nll_grad,
    gaussian_nll_loss,
    multi_quantile_loss,
    multi_quantile_loss_grad,
    quantile_loss,
    quantile_loss_grad,
)
from .optim import Adam
