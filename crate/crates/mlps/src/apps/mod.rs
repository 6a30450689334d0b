//! Reference applications driven by the runtime.

pub mod dml;
pub mod lasso;

pub use dml::DmlApp;
pub use lasso::LassoApp;
