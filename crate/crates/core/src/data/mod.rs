//! Synthetic cine data, preprocessing transforms and on-disk formats.

mod io;
mod phantom;
mod transform;

pub use io::{read_cine, write_cine, write_pgm, CINE_HEADER_LEN, CINE_MAGIC, CINE_VERSION, SCALAR_F32};
pub use phantom::{phantom_generate, PhantomParams};
pub use transform::{erase_region, normalize_crop, paste, ErasePolicy, ErasedRegion, ERASE_SIZE};
