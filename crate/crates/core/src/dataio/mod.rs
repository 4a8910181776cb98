//! On-disk formats shared with external producers of supervision.
//!
//! A dataset directory holds `manifest.json` plus the files it references:
//! `MFT1` tensors for images, per-mask embeddings, text embeddings and
//! ground-truth maps, and run-length coded binary masks. Images and
//! embeddings are stored as `f32`; label maps as `i32`. Checkpoints reuse the
//! tensor container with `f64` payloads so training resumes bit for bit.

mod checkpoint;
mod dataset;
mod export;
mod rle;
mod tensor;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_expecting, save_checkpoint,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use dataset::{load_dataset, save_dataset, SceneDataset, Split, ViewRecord, MANIFEST_FILE, MANIFEST_VERSION};
pub use export::{decode_label_pgm, decode_pbm, encode_label_pgm, encode_pbm, scores_csv, write_bytes};
pub use rle::{decode_mask_rle, encode_mask_rle, mask_runs};
pub use tensor::{DType, Tensor, TensorData, MAGIC as TENSOR_MAGIC};
