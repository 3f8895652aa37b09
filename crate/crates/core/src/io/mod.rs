//! File formats: PFM float maps, 16-bit disparity and 8-bit mask PNGs, and
//! mixture-field directories.

mod field;
mod pfm;
mod png;

pub use field::{read_field, write_field, FieldManifest};
pub use pfm::{read_pfm, write_pfm, PfmImage};
pub use png::{read_disparity_png16, read_mask_png8, write_disparity_png16, write_mask_png8, PNG16_MAX_DISPARITY};
