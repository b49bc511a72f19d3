//! Image codecs, dataset ingestion and the checkpoint container.

mod checkpoint;
mod dataset;
mod image;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_trainer, save_checkpoint,
    save_trainer, Checkpoint, CheckpointHeader, Dtype, TensorEntry, TrainerState, FORMAT_VERSION,
    MAGIC,
};
pub use dataset::{
    channel_mean, held_out_count, ingest_dataset, list_images, split_indices, synthetic_image,
    synthetic_images, write_synthetic_dataset, Dataset, SyntheticKind,
};
pub use image::{
    decode_image, load_image, resize_and_center_crop, resize_bilinear, save_image, save_pgm,
    save_png, save_ppm,
};
