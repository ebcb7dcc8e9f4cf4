//! Margin-penalty softmax losses with elastic (Gaussian-sampled) margins,
//! hand-derived gradients, a toy 2-D embedding trainer and the evaluation
//! machinery used to compare and select loss configurations.

pub mod elastic;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod loss;
pub mod matrix;
pub mod metrics;
pub mod rng;
pub mod trainer;

pub use elastic::{assign_margins_plus, sample_margins, MarginDraw};
pub use error::{Error, Result};
pub use loss::{
    apply_margin, cosine_logits, loss_backward, margin_softmax_loss,
    margin_softmax_loss_with_margins, softmax_cross_entropy, ClassWeights, ElasticMargin,
    EmbeddingBatch, Gradients, LossOutput, MarginFamily, MarginSpec,
};
pub use matrix::{l2_normalize_rows, Matrix};
pub use rng::SeededStream;
