//! Gridded tensors, the valid-cell mask, and the on-disk GTF format.

mod cube;
pub mod gtf;
mod mask;
mod targets;

pub use cube::{
    channel_list, channel_manifest_hash, validate_channels, PredictorCube, SplitRole, Stage, TargetGrid,
    FORTNIGHTS, MICRO_CHANNELS, PREDICTOR_CHANNELS, SST_CHANNEL,
};
pub use gtf::{decode_gtf, encode_gtf, read_gtf, write_gtf, GtfManifest};
pub use mask::{build_valid_mask, flatten_target, reverse_map, TargetVector, ValidMask};
pub use targets::TargetSet;
