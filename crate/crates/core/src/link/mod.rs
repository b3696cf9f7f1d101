//! Link-level Monte Carlo: modulation, DL precoding, UL detection and the
//! trial engine.

pub mod downlink;
pub mod engine;
pub mod modem;
pub mod uplink;

pub use downlink::{
    decompose_dl_interference, dl_effective_gains, dl_interference_powers, mf_precode_downlink,
    mf_precode_downlink_with_noise, DlDecomposition, DlInterferencePowers,
};
pub use modem::{bit_errors, qam4_demod, qam4_mod, random_bits};
pub use uplink::{matched_filter_uplink, remove_sp_pilots};
pub use engine::{run_trial, run_trials, AggregateReport, Experiment, FieldStat, Scheme, TrialContext, TrialResult, UserTrial};
