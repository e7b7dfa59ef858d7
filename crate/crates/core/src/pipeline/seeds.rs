//! Every random stream of a run is derived from the master seed and a tag,
//! so no two stages share a generator state.

/// Independent random streams of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Data = 1,
    Init = 2,
    Pretext = 3,
    Supervised = 4,
    Discovery = 5,
    Hng = 6,
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn derive_seed(master: u64, stream: Stream) -> u64 {
    splitmix64(splitmix64(master) ^ (stream as u64).wrapping_mul(0xD1B5_4A32_D192_ED03))
}
