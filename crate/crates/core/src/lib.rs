//! Threat-severity classification of security tweets, tweet/CVE linking and
//! CVE severity forecasting.

pub mod annotation;
pub mod classifier;
pub mod convnet;
pub mod corpus;
pub mod digest;
pub mod error;
pub mod featurize;
pub mod forecast;
pub mod glove;
pub mod insights;
pub mod linker;
pub mod linmodel;
pub mod metrics;
pub mod nvd;

pub use error::{Error, Result};
