//! Multi-aspect review rating with attention-derived keywords and
//! lecturer/audience uncertainty.

mod error;
pub mod fsutil;
pub mod seeds;

pub mod autograd;
pub mod corpus;
pub mod akr;
pub mod model;
pub mod training;
pub mod lead;
pub mod attention;

pub use error::{Error, Result};
