//! Summary statistics over metric populations.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator); zero for one sample.
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub spread: f64,
    /// Set for a single sample, whose std is undefined and reported as zero.
    pub single_sample: bool,
}

pub fn summarize(xs: &[f64]) -> Result<Summary> {
    if xs.is_empty() {
        return Err(Error::invalid("empty population"));
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("population contains non-finite values"));
    }
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(Summary {
        n,
        mean,
        std,
        min,
        max,
        spread: max - min,
        single_sample: n == 1,
    })
}

/// One histogram bin `[lo, lo + width)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bin {
    pub lo: f64,
    pub count: usize,
    pub pdf: f64,
    pub cdf: f64,
}

/// Histogram with bins aligned to multiples of `width`, covering every sample.
/// `pdf` is the fraction of samples per bin and `cdf` the running sum.
pub fn histogram_cdf(xs: &[f64], width: f64) -> Result<Vec<Bin>> {
    if !(width > 0.0) {
        return Err(Error::invalid("bin width must be positive"));
    }
    let s = summarize(xs)?;
    // Tolerate rounding on bin edges.
    let key = |x: f64| (x / width + 1e-9).floor() as i64;
    let first = key(s.min);
    let last = key(s.max);
    let mut counts = vec![0usize; (last - first + 1) as usize];
    for &x in xs {
        counts[(key(x) - first) as usize] += 1;
    }
    let n = xs.len() as f64;
    let mut acc = 0usize;
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(k, count)| {
            acc += count;
            Bin {
                lo: (first + k as i64) as f64 * width,
                count,
                pdf: count as f64 / n,
                cdf: acc as f64 / n,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Correlation {
    pub n: usize,
    pub r: f64,
    pub r2: f64,
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<Correlation> {
    if xs.len() != ys.len() {
        return Err(Error::invalid("correlation inputs differ in length"));
    }
    if xs.len() < 2 {
        return Err(Error::Degenerate(
            "correlation needs at least two pairs".into(),
        ));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate(
            "zero variance in correlation input".into(),
        ));
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    Ok(Correlation {
        n: xs.len(),
        r,
        r2: r * r,
    })
}

/// Normal density with moments matched to `s`, evaluated at `x`.
pub fn normal_fit_pdf(s: &Summary, x: f64) -> f64 {
    if s.std == 0.0 {
        return if x == s.mean { f64::INFINITY } else { 0.0 };
    }
    let z = (x - s.mean) / s.std;
    (-0.5 * z * z).exp() / (s.std * (2.0 * std::f64::consts::PI).sqrt())
}

/// Writes `bin_lo_mV,count,pdf,cdf,normal_fit` for values given in volts.
pub fn write_histogram_csv<W: Write>(xs: &[f64], width: f64, out: W) -> Result<()> {
    let bins = histogram_cdf(xs, width)?;
    let s = summarize(xs)?;
    let mut wr = csv::Writer::from_writer(out);
    wr.write_record(["bin_lo_mV", "count", "pdf", "cdf", "normal_fit"])?;
    for b in bins {
        // Fit probability mass of the bin, comparable with pdf.
        let fit = normal_fit_pdf(&s, b.lo + 0.5 * width) * width;
        wr.write_record([
            format!("{:.3}", b.lo * 1e3),
            b.count.to_string(),
            format!("{:.6}", b.pdf),
            format!("{:.6}", b.cdf),
            format!("{:.6}", if fit.is_finite() { fit } else { 1.0 }),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sample_std_of_small_population() {
        let s = summarize(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.mean, 2.5);
        assert!((s.std - 1.2909944487358056).abs() < 1e-12);
        assert_eq!((s.min, s.max, s.spread), (1.0, 4.0, 3.0));
        let flat = summarize(&[5.0, 5.0, 5.0]).unwrap();
        assert_eq!((flat.mean, flat.std, flat.spread), (5.0, 0.0, 0.0));
        let one = summarize(&[3.0]).unwrap();
        assert!(one.single_sample && one.std == 0.0);
        assert!(summarize(&[]).is_err());
    }

    #[test]
    fn pearson_known_value() {
        let c = pearson(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 1.0, 4.0, 3.0, 5.0]).unwrap();
        assert!((c.r - 0.8).abs() < 1e-12);
        assert!((c.r2 - 0.64).abs() < 1e-12);
        assert!(pearson(&[1.0, 1.0], &[2.0, 3.0]).is_err());
        assert!(pearson(&[1.0], &[2.0]).is_err());
    }

    #[test]
    fn histogram_bins_are_left_closed() {
        let xs = [0.50, 0.51, 0.51, 0.53, 0.535];
        let h = histogram_cdf(&xs, 0.01).unwrap();
        let counts: Vec<usize> = h.iter().map(|b| b.count).collect();
        assert_eq!(counts, vec![1, 2, 0, 2]);
        assert!((h[0].lo - 0.50).abs() < 1e-12);
        assert_eq!(h.last().unwrap().cdf, 1.0);
        assert!(h.windows(2).all(|w| w[1].cdf >= w[0].cdf));
    }

    #[test]
    fn uniform_grid_histogram() {
        let d = 0.01;
        let h = histogram_cdf(&[0.0, d, 2.0 * d, 3.0 * d], d).unwrap();
        assert!(h.iter().all(|b| b.pdf == 0.25));
        let cdf: Vec<f64> = h.iter().map(|b| b.cdf).collect();
        assert_eq!(cdf, vec![0.25, 0.5, 0.75, 1.0]);
        let spike = histogram_cdf(&[0.3; 5], d).unwrap();
        assert_eq!(spike.len(), 1);
        assert_eq!(spike[0].pdf, 1.0);
    }

    #[test]
    fn pearson_of_identical_and_negated() {
        let x = [0.1, 0.5, 0.2, 0.9];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &x).unwrap().r - 1.0).abs() < 1e-12);
        assert!((pearson(&x, &neg).unwrap().r + 1.0).abs() < 1e-12);
    }

    #[test]
    fn normal_fit_integrates_to_one() {
        let s = summarize(&[0.0, 1.0, 2.0, 3.0]).unwrap();
        let dx = 1e-3;
        let total: f64 = (-10_000..13_000)
            .map(|k| normal_fit_pdf(&s, k as f64 * dx) * dx)
            .sum();
        assert!((total - 1.0).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn pearson_invariant_under_affine_maps(
            pts in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 3..40),
            a in 0.1f64..10.0, b in -100.0f64..100.0,
        ) {
            let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
            if let Ok(c) = pearson(&xs, &ys) {
                let xs2: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
                let c2 = pearson(&xs2, &ys).unwrap();
                prop_assert!((c.r - c2.r).abs() < 1e-9);
                let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
                prop_assert!((pearson(&neg, &ys).unwrap().r + c.r).abs() < 1e-9);
            }
        }

        #[test]
        fn summary_invariant_under_permutation(
            xs in prop::collection::vec(-1e3f64..1e3, 1..50), rot in 0usize..50,
        ) {
            let s = summarize(&xs).unwrap();
            let mut ys = xs.clone();
            let k = rot % ys.len();
            ys.rotate_left(k);
            ys.reverse();
            let t = summarize(&ys).unwrap();
            prop_assert!((s.mean - t.mean).abs() < 1e-9);
            prop_assert!((s.std - t.std).abs() < 1e-9);
            prop_assert_eq!((s.min, s.max), (t.min, t.max));
        }

        #[test]
        fn summary_scales_and_shifts(
            xs in prop::collection::vec(-1e3f64..1e3, 2..50), a in 0.1f64..10.0, b in -100.0f64..100.0,
        ) {
            let s = summarize(&xs).unwrap();
            let ys: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
            let t = summarize(&ys).unwrap();
            prop_assert!((t.mean - (a * s.mean + b)).abs() < 1e-7 * (1.0 + t.mean.abs()));
            prop_assert!((t.std - a * s.std).abs() < 1e-7 * (1.0 + t.std));
        }

        #[test]
        fn histogram_counts_every_sample(
            xs in prop::collection::vec(0.0f64..1.0, 1..200), w in 0.005f64..0.2,
        ) {
            let h = histogram_cdf(&xs, w).unwrap();
            prop_assert_eq!(h.iter().map(|b| b.count).sum::<usize>(), xs.len());
            prop_assert!((h.last().unwrap().cdf - 1.0).abs() < 1e-12);
        }
    }
}
