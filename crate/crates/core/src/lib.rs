//! Learnable higher-order (Volterra-expansion) convolutions with symmetric
//! weight storage, a minimal f64 training engine, maximum-entropy
//! multipoint-correlation textures, and representational analysis tools.
//!
//! Everything is deterministic: fixed seeds reproduce datasets, training
//! runs, and analyses bit-for-bit.

pub mod analysis;
pub mod error;
pub mod formats;
pub mod hoconv;
pub mod layers;
pub mod model;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod textures;
pub mod train;

pub use error::{Error, Result};
pub use hoconv::{
    cumulative_count, enumerate_monomials, expand_to_full_tensor, flop_count, param_count,
    unique_count, HoConvLayer, HoKernel, MonomialIndex,
};
pub use layers::{ActKind, Layer, Mode};
pub use model::{
    build_texture_cnn, build_texture_hocnn, build_texture_model, Model, ModelKind,
};
pub use rng::RngState;
pub use tensor::{patch_extract, Tensor};
pub use textures::{
    generate_dataset, generate_texture, glider_parity_statistic, mix_perturbation, GliderClass,
    TextureDataset, GLIDER_CLASSES,
};
pub use train::{evaluate, softmax_cross_entropy, train, TrainConfig, TrainHistory};
