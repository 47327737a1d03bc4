"""Seed-reproducible simulation and checks for the asymmetric simple exclusion process."""

__version__ = "0.1.0"

from .kernel import (  # noqa: E402
    JumpKernel,
    StepProfileParams,
    burgers_profile,
    characteristic_speeds,
    integrated_profile,
    parse_kernel,
    validate_kernel,
)
from .engine import (  # noqa: E402
    Configuration,
    Event,
    EventStream,
    Window,
    apply_event,
    count_interval,
    evolve_to,
    next_event,
    sample_initial_step,
    shift_stream,
)
from .coupling import (  # noqa: E402
    ClassView,
    NestedFamily,
    burn_in_coupled,
    class_view,
    evolve_nested,
    merge_T,
    reclass_at,
    reflect_holes,
    reflect_stream,
    truncate_left,
    truncate_right,
)
from .observables import (  # noqa: E402
    BufferInadequate,
    FluxCounter,
    SubadditiveRecord,
    bernoulli_marginal_test,
    empirical_density,
    estimate_X_infinity,
    flux_identity_check,
    flux_observe,
    lln_error,
    subadditive_array,
)
