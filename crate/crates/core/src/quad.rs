//! Composite Gauss-Legendre quadrature.

const X: [f64; 5] = [
    0.148_874_338_981_631_22,
    0.433_395_394_129_247_2,
    0.679_409_568_299_024_4,
    0.865_063_366_688_984_5,
    0.973_906_528_517_171_7,
];
const W: [f64; 5] = [
    0.295_524_224_714_752_87,
    0.269_266_719_309_996_35,
    0.219_086_362_515_982_04,
    0.149_451_349_150_580_6,
    0.066_671_344_308_688_14,
];

/// Ten-point rule on each of `panels` equal panels of `[a, b]`.
pub fn gauss_legendre<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
    let panels = panels.max(1);
    let h = (b - a) / panels as f64;
    let mut sum = 0.0;
    for p in 0..panels {
        let c = a + (p as f64 + 0.5) * h;
        let mut s = 0.0;
        for (x, w) in X.iter().zip(W) {
            s += w * (f(c + 0.5 * h * x) + f(c - 0.5 * h * x));
        }
        sum += s;
    }
    0.5 * h * sum
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_polynomials_and_exponentials() {
        assert!((gauss_legendre(|x| x.powi(19), 0.0, 1.0, 1) - 0.05).abs() < 1e-15);
        let e = gauss_legendre(f64::exp, 0.0, 3.0, 4);
        assert!((e - (3f64.exp() - 1.0)).abs() < 1e-13);
    }
}
