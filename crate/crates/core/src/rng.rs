use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for one keyed draw site. Each distinct key path gets its own
/// stream, so results never depend on the order draws are made in.
pub(crate) fn keyed_rng(seed: u64, keys: &[u64]) -> ChaCha8Rng {
    let mixed = keys
        .iter()
        .fold(splitmix(seed), |acc, &k| splitmix(acc ^ splitmix(k)));
    ChaCha8Rng::seed_from_u64(mixed)
}
