"""Attention-modulated evidence accumulation for driver decisions.

Simulation, summary statistics and genetic-algorithm fitting for a
drift-diffusion model whose attentional discount depends on evidence
clarity and whose bounds collapse exponentially, plus the fixed-discount,
fixed-bound aDDM it reduces to.
"""

from deam.core import (
    ConfigError,
    EvidenceAffordance,
    InvalidParams,
    InvalidState,
    ModelParams,
    ScenarioKind,
    SignConvention,
    TrialCondition,
    evidence_bias,
    evidence_clarity,
    make_condition,
)
from deam.attention import (
    FixationConfig,
    FixationSchedule,
    FixationTarget,
    fixation_at,
    generate_schedule,
    theta,
)
from deam.accumulator import (
    Choice,
    MomentarySample,
    TrialOutcome,
    bound_lower,
    bound_upper,
    rdv_step,
    sample_momentary_evidence,
    simulate_trial,
)

__version__ = "0.1.0"
