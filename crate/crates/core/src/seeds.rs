//! Deterministic seed derivation so independent pipeline stages never share RNG streams.

/// Mix a base seed with a purpose tag and an index (FNV-1a then splitmix64).
pub fn derive(base: u64, tag: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in tag.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h ^= base.wrapping_mul(0x9e3779b97f4a7c15);
    h ^= index.rotate_left(32);
    splitmix64(h)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}
