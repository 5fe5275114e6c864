use serde::{Deserialize, Serialize};

use super::EvalError;

const SCAN_POINTS: usize = 512;
const GOLDEN_ITERS: usize = 200;

/// `log y = a · log(x + b) + c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthCurveFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Mean squared error in log space.
    pub residual: f64,
}

impl LengthCurveFit {
    pub fn predict_log(&self, x: f64) -> f64 {
        self.a * (x + self.b).ln() + self.c
    }

    pub fn predict(&self, x: f64) -> f64 {
        self.predict_log(x).exp()
    }
}

/// Least squares for (a, c) at fixed `b`, with the resulting log-space MSE.
fn solve_at(points: &[(f64, f64)], b: f64) -> LengthCurveFit {
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|&(x, _)| (x + b).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|&(_, y)| y.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let a = if sxx > 1e-300 { sxy / sxx } else { 0.0 };
    let c = my - a * mx;
    let residual = xs.iter().zip(&ys).map(|(x, y)| (y - a * x - c).powi(2)).sum::<f64>() / n;
    LengthCurveFit { a, b, c, residual }
}

/// Fits the curve by scanning `b` over `(−min x, 10·max x]` on a log grid
/// of `b + min x`, refining the best cell by golden-section search, and
/// solving (a, c) in closed form at each `b`.
pub fn fit_length_curve(points: &[(f64, f64)]) -> Result<LengthCurveFit, EvalError> {
    if points.len() < 3 {
        return Err(EvalError::TooFewPoints(points.len()));
    }
    if let Some((index, &(x, y))) =
        points.iter().enumerate().find(|(_, &(x, y))| !(x > 0.0 && y > 0.0 && x.is_finite() && y.is_finite()))
    {
        return Err(EvalError::InvalidPoint { index, x, y });
    }
    let min_x = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let max_x = points.iter().map(|p| p.0).fold(0.0, f64::max);
    // s = ln(b + min_x); b = exp(s) − min_x.
    let lo = (min_x * 1e-9).ln();
    let hi = (10.0 * max_x + min_x).ln();
    let at = |s: f64| solve_at(points, s.exp() - min_x);

    let grid: Vec<f64> = (0..SCAN_POINTS).map(|i| lo + (hi - lo) * i as f64 / (SCAN_POINTS - 1) as f64).collect();
    let fits: Vec<LengthCurveFit> = grid.iter().map(|&s| at(s)).collect();
    let k = (0..SCAN_POINTS).min_by(|&i, &j| fits[i].residual.total_cmp(&fits[j].residual)).expect("non-empty grid");
    let mut best = fits[k];

    let (mut a, mut b) = (grid[k.saturating_sub(1)], grid[(k + 1).min(SCAN_POINTS - 1)]);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (at(c), at(d));
    for _ in 0..GOLDEN_ITERS {
        if fc.residual <= fd.residual {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = at(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = at(d);
        }
        if (b - a).abs() < 1e-14 {
            break;
        }
    }
    for f in [fc, fd] {
        if f.residual < best.residual {
            best = f;
        }
    }
    Ok(best)
}

/// Mean lengths plus the fitted curve over (required, produced) pairs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LengthReport {
    pub n: usize,
    pub mean_groundtruth_tokens: f64,
    pub mean_output_tokens: f64,
    pub fit: Option<LengthCurveFit>,
    pub fit_error: Option<String>,
    pub pairs: Vec<(f64, f64)>,
}

impl LengthReport {
    /// `x,y` rows, one per pair.
    pub fn to_csv(&self) -> Result<String, EvalError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| EvalError::Csv(e.to_string());
        w.write_record(["x", "y"]).map_err(err)?;
        for (x, y) in &self.pairs {
            w.write_record([x.to_string(), y.to_string()]).map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| EvalError::Csv(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }
}

pub fn length_report(samples: &[(f64, f64)]) -> Result<LengthReport, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::NoSamples);
    }
    let n = samples.len() as f64;
    let (fit, fit_error) = match fit_length_curve(samples) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(LengthReport {
        n: samples.len(),
        mean_groundtruth_tokens: samples.iter().map(|s| s.0).sum::<f64>() / n,
        mean_output_tokens: samples.iter().map(|s| s.1).sum::<f64>() / n,
        fit,
        fit_error,
        pairs: samples.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn xs() -> Vec<f64> {
        (0..60).map(|i| 100.0 * 1.12f64.powi(i)).collect()
    }

    #[test]
    fn recovers_exact_parameters() {
        let pts: Vec<(f64, f64)> = xs().into_iter().map(|x| (x, (0.8 * (x + 1000.0).ln() + 0.5).exp())).collect();
        let f = fit_length_curve(&pts).unwrap();
        assert!((f.a - 0.8).abs() <= 0.01, "{f:?}");
        assert!((f.c - 0.5).abs() <= 0.05, "{f:?}");
        assert!((f.b - 1000.0).abs() / 1000.0 <= 0.1, "{f:?}");
        assert!(f.residual < 1e-12);
    }

    #[test]
    fn identity_and_constant() {
        let id: Vec<(f64, f64)> = xs().into_iter().map(|x| (x, x)).collect();
        let f = fit_length_curve(&id).unwrap();
        assert!((f.a - 1.0).abs() < 1e-3 && f.c.abs() < 1e-3 && f.b.abs() < 1.0, "{f:?}");
        let flat: Vec<(f64, f64)> = xs().into_iter().map(|x| (x, 250.0)).collect();
        let f = fit_length_curve(&flat).unwrap();
        assert!(f.a.abs() < 1e-9);
        assert!((f.c - 250f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn b_respects_lower_bracket() {
        let pts = [(5.0, 1.0), (50.0, 3.0), (500.0, 4.0), (5000.0, 4.5)];
        let f = fit_length_curve(&pts).unwrap();
        assert!(f.b > -5.0);
        assert!(f.b <= 50_000.0);
    }

    #[test]
    fn input_errors() {
        assert!(matches!(fit_length_curve(&[(1.0, 1.0), (2.0, 2.0)]), Err(EvalError::TooFewPoints(2))));
        assert!(matches!(
            fit_length_curve(&[(1.0, 1.0), (2.0, 0.0), (3.0, 3.0)]),
            Err(EvalError::InvalidPoint { index: 1, .. })
        ));
        assert!(matches!(length_report(&[]), Err(EvalError::NoSamples)));
    }

    #[test]
    fn degenerate_report() {
        let r = length_report(&[(17_100.0, 1_800.0)]).unwrap();
        assert_eq!((r.mean_groundtruth_tokens, r.mean_output_tokens), (17_100.0, 1_800.0));
        assert!(r.fit.is_none());
        assert!(r.fit_error.as_deref().unwrap().contains("at least 3"));
        assert_eq!(r.to_csv().unwrap(), "x,y\n17100,1800\n");
    }
}
