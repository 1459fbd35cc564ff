use std::f64::consts::PI;

use crate::data::WEEKS_PER_YEAR;

/// Calendar encoding of week `m`: for `k = 1..=c/2`, slot `2(k-1)` holds
/// `sin(2 m pi / (52 k))` and slot `2(k-1)+1` the matching cosine.
pub fn week_encoding(week: u32, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; c];
    for k in 1..=c / 2 {
        let angle = 2.0 * f64::from(week) * PI / (f64::from(WEEKS_PER_YEAR) * k as f64);
        out[2 * (k - 1)] = angle.sin();
        out[2 * (k - 1) + 1] = angle.cos();
    }
    out
}

/// Sinusoidal position encoding for 1-based position `i`: slot `2k` holds
/// `sin(i / 10000^(2k/d))` and slot `2k+1` the cosine.
pub fn position_encoding(i: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d];
    for k in 0..d / 2 {
        let angle = i as f64 / 10000f64.powf(2.0 * k as f64 / d as f64);
        out[2 * k] = angle.sin();
        out[2 * k + 1] = angle.cos();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn week_52_is_a_full_turn() {
        let e = week_encoding(52, 16);
        assert!(e[0].abs() < 1e-12);
        assert!((e[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn week_13_is_a_quarter_turn() {
        assert!((week_encoding(13, 2)[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn first_frequency_has_52_week_period() {
        for m in 1..200 {
            let a = week_encoding(m, 16);
            let b = week_encoding(m + 52, 16);
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn position_one() {
        let d = 8;
        let e = position_encoding(1, d);
        for k in 0..d / 2 {
            let f = 1.0 / 10000f64.powf(2.0 * k as f64 / d as f64);
            assert_eq!(e[2 * k], f.sin());
            assert_eq!(e[2 * k + 1], f.cos());
        }
        assert_ne!(position_encoding(1, d), position_encoding(2, d));
    }

    #[test]
    fn dot_product_depends_on_offset_only() {
        let d = 16;
        let enc: Vec<Vec<f64>> = (1..=20).map(|i| position_encoding(i, d)).collect();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        for offset in 1..5 {
            let base = dot(&enc[0], &enc[offset]);
            for i in 0..20 - offset {
                assert!((dot(&enc[i], &enc[i + offset]) - base).abs() < 1e-9);
            }
        }
    }
}
