"""Variable-metric linesearch proximal-gradient optimization toolkit."""

from .diagnostics import AuditReport, audit_trace, dense_prox_oracle, fd_gradient_check, mse, psnr
from .operators import (
    ConvOperator2D,
    ForwardDifference2D,
    IdentityOperator,
    Laplacian2D,
    LinearOperator,
    VStackOperator,
    gaussian_psf,
    isotropic_tv,
)
from .problems import (
    CauchyDeblurProblem,
    MaskCompressionProblem,
    SignalDependentGaussianProblem,
    Toy1DBoxProblem,
    cartoon_image,
    degrade_synthetic,
    smooth_image,
)
from .prox import (
    BoxProx,
    DualTVProx,
    InexactProxError,
    ProxCertificate,
    TVNonnegRegularizer,
    exact_prox_box,
    project_dual_tv,
)
from .solver import (
    IterateRecord,
    IterateState,
    LinesearchError,
    SolveResult,
    SolverConfig,
    SolverError,
    armijo_backtrack,
    eval_h_gamma,
    minimize,
    proximal_target,
    solver_step,
)
from .strategies import (
    DiagonalMetric,
    bb_steplength,
    make_metric_strategy,
    make_steplength_strategy,
    reduced_gradient,
    ritz_steplengths,
)

__version__ = "0.1.0"
