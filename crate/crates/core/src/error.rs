use thiserror::Error;

use crate::filtering::FilterError;
use crate::hedging::HedgeError;
use crate::measure::MeasureError;
use crate::model::ModelError;
use crate::pde::PdeError;
use crate::simulate::SimError;

/// Any failure raised by the numerical pipeline, tagged by the module that
/// raised it.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("simulate: {0}")]
    Simulate(#[from] SimError),
    #[error("measure: {0}")]
    Measure(#[from] MeasureError),
    #[error("filtering: {0}")]
    Filtering(#[from] FilterError),
    #[error("pde: {0}")]
    Pde(#[from] PdeError),
    #[error("hedging: {0}")]
    Hedging(#[from] HedgeError),
}

impl Error {
    /// Name of the module where the failure originated. Errors that wrap
    /// another module's error report the innermost one.
    pub fn module(&self) -> &'static str {
        match self {
            Error::Model(_) => "model_core",
            Error::Simulate(e) => match e {
                SimError::Model(_) => "model_core",
                _ => "simulate",
            },
            Error::Measure(e) => match e {
                MeasureError::Model(_) => "model_core",
                _ => "measure",
            },
            Error::Filtering(e) => match e {
                FilterError::Model(_) => "model_core",
                _ => "filtering",
            },
            Error::Pde(e) => match e {
                PdeError::Model(_) => "model_core",
                PdeError::Simulation(s) => Error::Simulate(s.clone()).module(),
                _ => "pde",
            },
            Error::Hedging(e) => match e {
                HedgeError::Model(_) => "model_core",
                HedgeError::Simulation(s) => Error::Simulate(s.clone()).module(),
                HedgeError::Filter(f) => Error::Filtering(f.clone()).module(),
                HedgeError::Pde(p) => Error::Pde(p.clone()).module(),
                _ => "hedging",
            },
        }
    }
}
