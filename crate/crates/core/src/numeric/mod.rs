//! Numeric substrate: tensors, random streams, gradient checking and the
//! on-disk tensor container.

mod gradcheck;
pub mod io;
mod rng;
mod tensor;

pub use gradcheck::grad_check;
pub use rng::{RngState, RngStream};
pub use tensor::{grad, Tensor};

/// SHA-256 over the little-endian bytes of a sequence of tensors, hex encoded.
pub fn content_hash<'a>(tensors: impl IntoIterator<Item = &'a Tensor>) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for t in tensors {
        for &d in t.shape() {
            h.update((d as u64).to_le_bytes());
        }
        for &v in t.data() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
