//! Fixtures shared by the benchmarks: preset draws with a fixed seed.

use kpod_core::{gen_mask, preset, sample_gmm, DataMatrix, MaskMatrix, McarSpec, RngSeed};

/// `n` rows from a preset mixture with every column missing at `rate`,
/// returned as the masked data and its mask.
pub fn masked_preset(name: &str, n: usize, rate: f64) -> (DataMatrix, MaskMatrix) {
    let setup = preset(name).expect("known preset");
    let seed = RngSeed(0xbe4c);
    let (x, _) = sample_gmm(&setup.gmm, n, seed.derive("data")).expect("valid preset");
    let mcar = McarSpec::uniform_missing_rate(setup.gmm.p(), rate).expect("rate in [0, 1)");
    let mask = gen_mask(n, &mcar, seed.derive("mask")).expect("valid mask spec");
    (x.masked(&mask).expect("shapes agree"), mask)
}
