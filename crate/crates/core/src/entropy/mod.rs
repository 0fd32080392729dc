//! Windowed relative entropy functionals on lattice measures.

mod functionals;
mod scheme;
mod source;

pub use functionals::{
    boundary_constant, bulk_functionals, dichotomy, f_term, g_n, g_tilde_n, h_window, one_sided_boundary_constant, s_n, translation_count,
    truncated_rate, BulkReport, DichotomyReport, Functional, RatioOrientation, S_n,
};
pub use scheme::{corrected_sequence, fill_configuration, volume_correction, CorrectedSequence, TruncationScheme};
pub use source::{EmpiricalSource, MarginalSource, MarkovSource, ProductSource, SourceKind};
