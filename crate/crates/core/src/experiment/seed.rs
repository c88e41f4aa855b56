//! Seed derivation. Every random stream in a run is a pure function of the
//! configured seeds and a small tuple of coordinates, so client streams do not
//! depend on scheduling or on the roles of other clients.

/// Stream tag for the initial global weights.
pub const INIT_STREAM: u64 = 0x494e_4954;
/// Stream tag for per-client train/test holdout splits.
pub const HOLDOUT_STREAM: u64 = 0x484f_4c44;

/// The splitmix64 finalizer: a bijection on `u64` with full avalanche.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Order-sensitive: the rotation keeps `combine(mix64(a), b)` and
/// `combine(mix64(b), a)` apart.
fn combine(state: u64, value: u64) -> u64 {
    mix64(state.rotate_left(23) ^ mix64(value))
}

/// SGD shuffle seed of `client` in `round`.
pub fn derive_seed(global_seed: u64, client: usize, round: usize) -> u64 {
    combine(combine(mix64(global_seed), client as u64), round as u64)
}

/// Seed of a named stream that is not tied to a client round.
pub fn stream_seed(base_seed: u64, stream: u64, index: u64) -> u64 {
    combine(combine(mix64(base_seed), stream), index)
}
