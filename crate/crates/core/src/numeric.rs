//! Small numeric helpers shared across modules: display rounding, stable
//! sub-seed derivation, and population statistics.

/// Round to `decimals` places, ties away from zero.
///
/// This is the display-rounding rule used everywhere a report shows a fixed
/// number of decimals (change-rate percentages, per-trade profits). It is
/// applied to the binary double as stored, so e.g. `0.25` at one decimal
/// rounds to `0.3`, and `-0.25` to `-0.3`.
pub fn round_half_away_from_zero(x: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    let rounded = (x.abs() * scale + 0.5).floor() / scale * x.signum();
    // Normalise -0.0 so formatted output never shows a signed zero.
    if rounded == 0.0 {
        0.0
    } else {
        rounded
    }
}

/// Derive an independent stream seed from a base seed and a purpose tag.
///
/// Implemented as FNV-1a over the little-endian seed bytes followed by the
/// tag bytes. The standard library hasher is documented as unstable across
/// releases, so this hand-rolled hash is what keeps derived streams
/// reproducible on any platform and toolchain.
pub fn subseed(seed: u64, tag: &str) -> u64 {
    const OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut hash = OFFSET_BASIS;
    for byte in seed.to_le_bytes().into_iter().chain(tag.bytes()) {
        hash ^= byte as u64;
        hash = hash.wrapping_mul(PRIME);
    }
    hash
}

/// Arithmetic mean. Empty input returns 0.0; callers that care check first.
pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation (divides by N, not N-1).
pub fn population_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mu = mean(values);
    let var = values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / values.len() as f64;
    var.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_is_half_away_from_zero() {
        assert_eq!(round_half_away_from_zero(0.25, 1), 0.3);
        assert_eq!(round_half_away_from_zero(-0.25, 1), -0.3);
        assert_eq!(round_half_away_from_zero(2.5, 0), 3.0);
        assert_eq!(round_half_away_from_zero(-2.5, 0), -3.0);
        assert_eq!(round_half_away_from_zero(0.16114592658907126, 1), 0.2);
        assert_eq!(round_half_away_from_zero(3.235294117647059, 1), 3.2);
        assert_eq!(round_half_away_from_zero(-1.8518518518518517, 1), -1.9);
        assert_eq!(round_half_away_from_zero(7.402031930333818, 1), 7.4);
    }

    #[test]
    fn rounding_never_emits_negative_zero() {
        let r = round_half_away_from_zero(-0.01, 1);
        assert_eq!(r, 0.0);
        assert!(r.is_sign_positive());
    }

    #[test]
    fn subseed_is_stable_and_tag_sensitive() {
        // Frozen value: this must never change across releases, or every
        // seeded pipeline in the field would silently produce new numbers.
        assert_eq!(subseed(42, "train"), 1647791488168851479);
        assert_ne!(subseed(42, "train"), subseed(42, "forecast"));
        assert_ne!(subseed(42, "train"), subseed(43, "train"));
    }

    #[test]
    fn population_stats_match_hand_computation() {
        let closes = [109.90, 110.10, 110.20, 111.50, 111.70];
        let mu = mean(&closes);
        let sigma = population_std(&closes);
        assert!((mu - 110.68).abs() < 1e-12);
        assert!((sigma - 0.7600000000000001).abs() < 1e-12);
    }
}
