//! Correlation metric and fold statistics.

use crate::error::{Error, Result};

/// Sample Pearson correlation.
///
/// Errors if the lengths differ, fewer than two points are given, or either
/// vector is constant (the coefficient is undefined there, not zero).
pub fn pearson(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "pearson needs equal lengths, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    if pred.len() < 2 {
        return Err(Error::UndefinedCorrelation("fewer than two points".into()));
    }
    let n = pred.len() as f64;
    let mp = pred.iter().sum::<f64>() / n;
    let mt = truth.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (p, t) in pred.iter().zip(truth) {
        let (dp, dt) = (p - mp, t - mt);
        sxy += dp * dt;
        sxx += dp * dp;
        syy += dt * dt;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("constant input vector".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Mean and sample standard deviation (n - 1); sd is 0 for a single fold.
pub fn fold_summary(per_fold_r: &[f64]) -> Result<(f64, f64)> {
    if per_fold_r.is_empty() {
        return Err(Error::validation("per_fold_r", "no folds to summarize"));
    }
    let n = per_fold_r.len() as f64;
    let mean = per_fold_r.iter().sum::<f64>() / n;
    if per_fold_r.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = per_fold_r.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}

/// Mean of per-utterance correlations, skipping utterances where the
/// coefficient is undefined. Diagnostic only.
pub fn per_utterance_pearson(groups: &[(Vec<f64>, Vec<f64>)]) -> Option<f64> {
    let rs: Vec<f64> = groups.iter().filter_map(|(p, t)| pearson(p, t).ok()).collect();
    (!rs.is_empty()).then(|| rs.iter().sum::<f64>() / rs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_and_negated() {
        let t = [0.1, 0.5, 0.2, 0.9];
        assert!((pearson(&t, &t).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = t.iter().map(|v| -v).collect();
        assert!((pearson(&neg, &t).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn closed_form_example() {
        // Centered pred (-1.75,-0.75,0.25,2.25), truth (-3,-1,1,3):
        // r = 13 / sqrt(8.75 * 20).
        let r = pearson(&[1.0, 2.0, 3.0, 5.0], &[2.0, 4.0, 6.0, 8.0]).unwrap();
        let want = 13.0 / (8.75f64 * 20.0).sqrt();
        assert!((r - want).abs() < 1e-15);
        assert!((r - 0.982_707_629_8).abs() < 1e-10);
    }

    #[test]
    fn constant_vector_is_an_error() {
        assert!(matches!(
            pearson(&[1.0, 1.0, 1.0], &[0.0, 1.0, 2.0]),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert!(pearson(&[1.0], &[2.0]).is_err());
        assert!(pearson(&[1.0, 2.0], &[2.0]).is_err());
    }

    #[test]
    fn summaries() {
        let (m, s) = fold_summary(&[0.7, 0.7, 0.7]).unwrap();
        assert!((m - 0.7).abs() < 1e-15 && s.abs() < 1e-15);
        let (m, s) = fold_summary(&[0.6, 0.8]).unwrap();
        assert!((m - 0.7).abs() < 1e-15);
        assert!((s - 0.02f64.sqrt()).abs() < 1e-15);
        assert_eq!(fold_summary(&[0.5]).unwrap(), (0.5, 0.0));
        assert!(fold_summary(&[]).is_err());
    }
}
