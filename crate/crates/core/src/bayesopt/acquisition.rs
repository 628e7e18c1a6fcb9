//! Expected improvement for minimization.

use statrs::function::erf::erfc;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Standard normal distribution function, accurate in both tails.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// `E[max(f* − Y − ξ, 0)]` for `Y ~ N(μ, σ²)`. Zero when `σ = 0`.
pub fn expected_improvement(mu: f64, sigma: f64, f_star: f64, xi: f64) -> f64 {
    if !(sigma > 0.0) {
        return 0.0;
    }
    let gain = f_star - mu - xi;
    let z = gain / sigma;
    (gain * normal_cdf(z) + sigma * normal_pdf(z)).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn degenerate_posterior() {
        assert_eq!(expected_improvement(0.1, 0.0, 0.5, 1e-4), 0.0);
    }

    #[test]
    fn zero_gain_is_sigma_times_density() {
        let sigma = 0.37;
        let ei = expected_improvement(0.4 - 1e-4, sigma, 0.4, 1e-4);
        assert_abs_diff_eq!(ei, sigma * 0.398_942_280_401_432_7, epsilon = 1e-15);
    }

    #[test]
    fn cdf_tails() {
        assert_abs_diff_eq!(normal_cdf(0.0), 0.5, epsilon = 1e-15);
        assert!(normal_cdf(-40.0) >= 0.0);
        assert_abs_diff_eq!(normal_cdf(1.959_963_984_540_054), 0.975, epsilon = 1e-11);
    }
}
