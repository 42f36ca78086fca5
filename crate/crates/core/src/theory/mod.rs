//! Positive-pair graphs, expansion quantities, the spectral contrastive
//! loss, preconditioned feature averaging, and brute-force checks of the
//! accompanying inequalities on small instances.

pub mod bounds;
pub mod graph;
pub mod pfa;
pub mod spectral;
pub mod suites;

pub use bounds::{decompose_risk, verify_l2_01_bound, L2BoundCheck, RiskDecomposition};
pub use graph::{check_assumptions, expansions, AssumptionReport, Expansion, GraphAssumptionParams, PositivePairGraph};
pub use pfa::{pfa_fit, pfa_fit_uniform, pfa_predict, BoundCheckConfig, LabeledRep, PfaModel};
pub use spectral::{fit_spectral_representations, spectral_contrastive_loss, SpectralFitConfig};
pub use suites::{run_suite, SuiteConfig, SuiteReport, TheorySuite};
