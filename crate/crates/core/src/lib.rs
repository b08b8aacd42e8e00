pub mod certificate;
pub mod criteria;
pub mod detector;
pub mod error;
pub mod io;
pub mod linalg;
pub mod maps;
pub mod repro;
pub mod sdp;
pub mod states;

pub use error::{Error, Result};
