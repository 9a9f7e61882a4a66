//! Goodness-of-fit helpers.

/// Upper tail of the chi-square distribution for an even number of degrees
/// of freedom: `e^{-x/2} Σ_{i<df/2} (x/2)^i / i!`.
pub fn chi_square_sf_even(x: f64, df: usize) -> f64 {
    assert!(df >= 2 && df % 2 == 0, "closed form needs an even df");
    let h = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for i in 1..df / 2 {
        term *= h / i as f64;
        sum += term;
    }
    (-h).exp() * sum
}

/// Pearson statistic of observed counts against expected probabilities.
pub fn chi_square(counts: &[f64], p: &[f64]) -> f64 {
    let n: f64 = counts.iter().sum();
    counts.iter().zip(p).map(|(o, q)| (o - n * q).powi(2) / (n * q)).sum()
}

