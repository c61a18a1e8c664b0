//! Statistics relating movement energy to the audio that played: Pearson
//! correlation, PCA, CCA, PLS regression and random-forest importances,
//! plus the per-session pipeline that feeds them.

pub mod cca;
pub mod correlation;
pub mod dataset;
mod error;
pub mod forest;
pub mod linalg;
pub mod pca;
pub mod pls;
pub mod report;
pub mod session;

pub use cca::{cca, Cca, CcaOptions};
pub use correlation::{correlation_p_value, pearson, permutation_p_value, Correlation};
pub use dataset::{SessionDataset, SegmentRow};
pub use error::{AnalysisError, Result};
pub use forest::{rf_importance, ForestOptions, ForestResult};
pub use pca::{pca, Pca, PcaOptions};
pub use pls::{pls_regression, PlsModel, PlsOptions, PlsResult};
pub use report::{AnalysisReport, Outcome};
pub use session::{analyze_dataset, analyze_session, AnalysisOptions};
