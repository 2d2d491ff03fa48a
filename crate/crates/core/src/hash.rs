//! FNV-1a hashing for fingerprints and golden values.

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct Fnv(u64);

impl Default for Fnv {
    fn default() -> Self {
        Fnv::new()
    }
}

impl Fnv {
    pub fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    pub fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x100_0000_01b3);
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = Fnv::new();
    h.write(bytes);
    h.finish()
}

/// Hash of a tensor's shape and its values rounded to `decimals` places,
/// stable across platforms for values well away from rounding boundaries.
pub fn quantized_hash(t: &Tensor, decimals: i32) -> u64 {
    let mut h = Fnv::new();
    for d in t.shape().dims() {
        h.write(&(d as u64).to_le_bytes());
    }
    let k = 10f64.powi(decimals);
    for v in t.data() {
        let q = (v * k).round() as i64;
        h.write(&q.to_le_bytes());
    }
    h.finish()
}
