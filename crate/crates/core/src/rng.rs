//! Named random substreams derived from one root seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

fn digest(seed: u64, name: &str, index: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    h.update([0u8]);
    h.update(index.to_le_bytes());
    h.finalize().into()
}

/// Independent generator for component `name` of item `index`.
pub fn substream(seed: u64, name: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(digest(seed, name, index))
}

/// Integer seed for APIs that take one.
pub fn substream_seed(seed: u64, name: &str, index: u64) -> u64 {
    let d = digest(seed, name, index);
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}
