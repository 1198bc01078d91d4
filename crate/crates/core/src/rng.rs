//! Derived random streams.
//!
//! Every stochastic task draws from its own ChaCha stream keyed by the run seed
//! and a path of labels (session id, system id, replay index, ...). Output is
//! therefore independent of iteration order and worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Stream = ChaCha8Rng;

/// One component of a stream path.
pub enum Key<'a> {
    Str(&'a str),
    Int(u64),
}

impl<'a> From<&'a str> for Key<'a> {
    fn from(s: &'a str) -> Self {
        Key::Str(s)
    }
}

impl<'a> From<&'a String> for Key<'a> {
    fn from(s: &'a String) -> Self {
        Key::Str(s.as_str())
    }
}

impl From<u64> for Key<'_> {
    fn from(v: u64) -> Self {
        Key::Int(v)
    }
}

impl From<usize> for Key<'_> {
    fn from(v: usize) -> Self {
        Key::Int(v as u64)
    }
}

impl From<u32> for Key<'_> {
    fn from(v: u32) -> Self {
        Key::Int(u64::from(v))
    }
}

/// Build a stream from `seed` and a key path.
pub fn stream<'a, I>(seed: u64, path: I) -> Stream
where
    I: IntoIterator<Item = Key<'a>>,
{
    let mut h = Sha256::new();
    h.update(b"simeval-stream-v1");
    h.update(seed.to_le_bytes());
    for key in path {
        match key {
            Key::Str(s) => {
                h.update([0x01]);
                h.update((s.len() as u64).to_le_bytes());
                h.update(s.as_bytes());
            }
            Key::Int(v) => {
                h.update([0x02]);
                h.update(v.to_le_bytes());
            }
        }
    }
    let digest: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

/// Shorthand: `derive!(seed; "a", id, 3usize)`.
#[macro_export]
macro_rules! derive_stream {
    ($seed:expr; $($k:expr),* $(,)?) => {
        $crate::rng::stream($seed, [$($crate::rng::Key::from($k)),*])
    };
}
