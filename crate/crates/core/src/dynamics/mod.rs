//! Local jump rates, generators and reversibility checks.

mod conditions;
mod generator;
mod rates;
mod verify;

pub use conditions::{check_rate_conditions, ConditionReport, ConditionResult, Witness, MAX_CONNECTIVITY_STATES};
pub use generator::SparseGenerator;
pub use rates::{
    make_cyclic, make_heat_bath, max_rate_difference, mix, modulate_speed, time_reversal, CompiledRates, CompiledRule, RateFamily, Rule,
};
pub use verify::{
    assemble_generator, beta_tail, detailed_balance_residual, detailed_balance_residual_of, max_oscillation_residual, max_switching_residual,
    oscillation_residual, oscillation_residual_compiled, oscillation_window_residual, reversal_regularity, switching_residual, RegularityCheck,
    MAX_GENERATOR_STATES,
};
