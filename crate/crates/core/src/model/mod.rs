//! Learnable core: a reverse-mode tensor tape, two small encoder-decoder
//! networks (g predicts specular/shadow maps, h performs parametric
//! diffusion conditioned on t), iterated-diffusion albedo estimation with a
//! tint regressor, and the two-stage Adam training loop that fits them.

pub mod albedo;
pub mod gradcheck;
pub mod graph;
pub mod params;
pub mod tensor;
pub mod train;
pub mod unet;

pub use albedo::{estimate_tint, iterated_albedo, skin_crop, untint};
pub use graph::{Gradients, Graph, NodeId};
pub use params::ModelParams;
pub use tensor::Tensor;
pub use train::{train, write_history_csv, HistoryRow, TrainConfig, TrainingExample, TrainingOutput};
pub use unet::{forward_diffusion, forward_specshadow, init_params, HeadKind, NetConfig};
