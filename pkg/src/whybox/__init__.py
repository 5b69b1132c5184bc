"""Local causal explanations for black-box classifiers.

For one prediction the engine produces a local surrogate equation, supporting
counterfactual instances, a fidelity report and a machine-checkable
certificate that the equation causally explains the prediction under testing
interventions.
"""

from .counterfactual import (
    CostConfig,
    CounterfactualInstance,
    boundary_line_search,
    check_feasibility,
    check_plausibility,
    delta_cost,
    search_counterfactuals,
)
from .explain import (
    EngineConfig,
    ExplanationReport,
    PipelineError,
    explain,
    render,
    to_canonical,
)
from .model import (
    BlackBoxModel,
    ModelSpecError,
    Prediction,
    QueryCounter,
    class_of,
    load_model,
    model_from_dict,
    predict,
)
from .sampling import (
    Neighbourhood,
    PerturbationDistributions,
    fit_distributions,
    generate_neighbourhood,
    kernel_weight,
)
from .schema import (
    Dataset,
    FeatureDecl,
    FeatureSchema,
    Observation,
    SchemaError,
    ValidationError,
    encode_observation,
    decode_observation,
    load_dataset,
    load_schema,
    observation_from_dict,
)
from .surrogate import (
    CausalEquation,
    FitError,
    Term,
    build_terms,
    evaluate,
    fit_equation,
    stepwise_select,
)
from .woodward import (
    TestingInterventionResult,
    WoodwardCertificate,
    certify,
    direct_causes,
    fidelity_error,
    invariance_check,
    testing_intervention,
)

__version__ = "0.1.0"
