pub mod bourgain;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod imethod;
pub mod kdv;
pub mod modulation;
pub mod soliton;
pub mod spectral_ops;
pub mod weighted;

pub use error::{Error, Result};
