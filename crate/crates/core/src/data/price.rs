use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Discretises prices into equal-probability ranges of a logistic
/// distribution fitted to log-prices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceBinner {
    pub mu: f64,
    pub scale: f64,
    pub n_bins: usize,
    /// `n_bins - 1` ascending cut points in log-price space.
    pub boundaries: Vec<f64>,
}

impl PriceBinner {
    /// Method-of-moments fit on `ln(price)`: `mu` is the mean and
    /// `scale = std * sqrt(3) / pi`. Cut points are the `q / n_bins`
    /// quantiles of the fitted CDF.
    pub fn fit(prices: &[f64], n_bins: usize) -> Result<Self> {
        if n_bins < 2 {
            return Err(Error::Config(format!("need at least 2 price bins, got {n_bins}")));
        }
        if let Some(bad) = prices.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
            return Err(Error::Domain(format!("price must be positive, got {bad}")));
        }
        let logs: Vec<f64> = prices.iter().map(|p| p.ln()).collect();
        let n = logs.len() as f64;
        if logs.len() < 2 {
            return Err(Error::DegenerateFit("need at least two prices".into()));
        }
        let mu = logs.iter().sum::<f64>() / n;
        let var = logs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n;
        if var <= 0.0 || !var.is_finite() {
            return Err(Error::DegenerateFit("all prices are identical".into()));
        }
        let scale = var.sqrt() * 3f64.sqrt() / PI;
        Ok(Self::from_params(mu, scale, n_bins))
    }

    pub fn from_params(mu: f64, scale: f64, n_bins: usize) -> Self {
        let boundaries = (1..n_bins)
            .map(|q| {
                let p = q as f64 / n_bins as f64;
                mu + scale * (p / (1.0 - p)).ln()
            })
            .collect();
        Self {
            mu,
            scale,
            n_bins,
            boundaries,
        }
    }

    /// 0-based bin `b` with `boundaries[b-1] <= ln(price) < boundaries[b]`.
    pub fn bin(&self, price: f64) -> Result<usize> {
        if !(price.is_finite() && price > 0.0) {
            return Err(Error::Domain(format!("price must be positive, got {price}")));
        }
        let x = price.ln();
        Ok(self.boundaries.partition_point(|&b| b <= x))
    }

    pub fn cdf(&self, log_price: f64) -> f64 {
        1.0 / (1.0 + (-(log_price - self.mu) / self.scale).exp())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_bins_cut_at_median() {
        let b = PriceBinner::fit(&[10.0, 100.0, 1000.0], 2).unwrap();
        assert_eq!(b.boundaries.len(), 1);
        assert!((b.boundaries[0] - b.mu).abs() < 1e-12);
    }

    #[test]
    fn symmetric_sample_centre_lands_on_middle_boundary() {
        let prices: Vec<f64> = [-2.0f64, -1.0, 1.0, 2.0].iter().map(|x| (5.0 + x).exp()).collect();
        let b = PriceBinner::fit(&prices, 10).unwrap();
        // exp(mu) sits on the q = 1/2 cut; the round trip through ln may move it by an ulp.
        let centre = b.bin(b.mu.exp()).unwrap();
        assert!(centre == 4 || centre == 5, "bin {centre}");
    }

    #[test]
    fn extremes() {
        let b = PriceBinner::from_params(0.0, 1.0, 10);
        assert_eq!(b.bin(1e-9).unwrap(), 0);
        assert_eq!(b.bin(1e9).unwrap(), 9);
    }

    #[test]
    fn degenerate_and_domain_errors() {
        assert!(matches!(PriceBinner::fit(&[3.0, 3.0, 3.0], 10), Err(Error::DegenerateFit(_))));
        let b = PriceBinner::from_params(0.0, 1.0, 10);
        assert!(matches!(b.bin(0.0), Err(Error::Domain(_))));
        assert!(matches!(b.bin(-1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn agrees_with_linear_scan() {
        let b = PriceBinner::from_params(7.0, 0.8, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let p: f64 = (rng.random::<f64>() * 8.0 + 3.0).exp();
            let x = p.ln();
            let mut expect = 0;
            for (i, &cut) in b.boundaries.iter().enumerate() {
                if x >= cut {
                    expect = i + 1;
                }
            }
            assert_eq!(b.bin(p).unwrap(), expect);
        }
    }

    #[test]
    fn boundaries_are_cdf_quantiles() {
        let b = PriceBinner::from_params(2.0, 0.5, 10);
        for (q, &cut) in b.boundaries.iter().enumerate() {
            assert!((b.cdf(cut) - (q + 1) as f64 / 10.0).abs() < 1e-12);
        }
        assert!(b.boundaries.windows(2).all(|w| w[0] < w[1]));
    }

    proptest! {
        #[test]
        fn bin_is_monotone(a in 1e-3f64..1e6, b in 1e-3f64..1e6) {
            let binner = PriceBinner::from_params(5.0, 1.3, 10);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(binner.bin(lo).unwrap() <= binner.bin(hi).unwrap());
        }
    }
}
