//! The conditioned encoder and its parameter-count oracle.

pub mod batch;
pub mod checkpoint;
pub mod config;
pub mod encoder;
pub mod gradcheck;

pub use batch::MaskedBatch;
pub use config::{
    count_parameters, ConcatMode, MethodKind, ModelConfig, MASK_ID, PAD_ID, RESERVED_IDS,
};
pub use encoder::{
    BlockParams, ContextParams, ContextualBert, DenseIds, FnnIds, Forward, GlobalState, MlmHead,
    NormIds, PreparedInput, SetLayout, TransferParams,
};
pub use gradcheck::{
    check_model_gradients, desk_suite, has_zero_gradient, randomize_parameters, GradCheckReport,
    DESK_PARAM_STD, MODEL_FD_EPS,
};
