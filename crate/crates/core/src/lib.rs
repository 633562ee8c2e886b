pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod discriminator;
pub mod error;
pub mod extractor;
pub mod generator;
pub mod haze;
pub mod image_tensor;
pub mod inference;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use image_tensor::ImageTensor;
pub use tensor::{Real, Tensor};
