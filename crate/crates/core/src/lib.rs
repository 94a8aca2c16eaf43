pub mod derivatives;
pub mod error;
pub mod experiments;
pub mod hessian;
pub mod model;
pub mod moments;
pub mod oracle;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Mat;
