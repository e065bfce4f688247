//! Metal-sheet defect inspection toolkit.
pub mod bbox;
pub mod detection;
pub mod evalkit;
pub mod imgsynth;
pub mod manifest;
pub mod ndgrad;
pub mod scalar;
pub mod singen;
pub use scalar::Scalar;
pub mod yolite;

/// Double-precision aliases for the common case.
pub type Tensor = ndgrad::Tensor<f64>;
pub type Graph = ndgrad::Graph<f64>;
pub type ParamSet = ndgrad::ParamSet<f64>;
pub type ImageBuffer = imgsynth::ImageBuffer<f64>;
pub type Detector = yolite::Detector<f64>;
pub type GanModel = singen::GanModel<f64>;
