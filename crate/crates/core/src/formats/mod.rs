//! File formats: OFF meshes, IDX digits, PGM/PPM images and `.sphs` signals.

pub mod idx;
pub mod off;
pub mod pnm;
pub mod sphs;

pub use idx::{parse_idx, read_idx_images, read_idx_labels, Idx, IdxImages};
pub use off::{parse_off, read_off, write_off, OffMesh};
pub use pnm::{parse_pnm, read_pnm, write_pgm, write_pnm, Image};
pub use sphs::{load_sphs, parse_sphs, read_sphs, save_sphs, save_sphs_labels, write_sphs, write_sphs_labels, Sphs};
