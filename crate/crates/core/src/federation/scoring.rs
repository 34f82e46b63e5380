use super::ThresholdRule;
use crate::error::{Error, Result};

/// Anomaly scores (1 + loss_c) / (1 + sigma) with sigma the minimum finite
/// loss of the round. Divergent clients report loss = +inf and receive an
/// infinite score. Returns (scores, sigma).
pub fn anomaly_scores(losses: &[f64]) -> Result<(Vec<f64>, f64)> {
    if losses.is_empty() {
        return Err(Error::domain("anomaly scores of an empty round".to_string()));
    }
    if let Some(&bad) = losses.iter().find(|&&l| l.is_nan() || l < 0.0) {
        return Err(Error::domain(format!(
            "client loss {bad} must be ≥ 0 or +inf"
        )));
    }
    let sigma = losses
        .iter()
        .copied()
        .filter(|l| l.is_finite())
        .fold(f64::INFINITY, f64::min);
    if !sigma.is_finite() {
        return Err(Error::protocol(
            "every participant reported a non-finite loss".to_string(),
        ));
    }
    let scores = losses.iter().map(|&l| (1.0 + l) / (1.0 + sigma)).collect();
    Ok((scores, sigma))
}

/// Threshold over the finite scores: lower median (the ceil(n/2)-th smallest)
/// or the arithmetic mean. Infinite scores mark divergent clients and are
/// excluded so that they always exceed the cut.
pub fn threshold(scores: &[f64], rule: ThresholdRule) -> Result<f64> {
    let mut finite: Vec<f64> = scores.iter().copied().filter(|s| s.is_finite()).collect();
    if finite.is_empty() {
        return Err(Error::protocol(
            "no finite anomaly scores to threshold".to_string(),
        ));
    }
    Ok(match rule {
        ThresholdRule::Median => {
            finite.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
            finite[(finite.len() - 1) / 2]
        }
        ThresholdRule::Mean => finite.iter().sum::<f64>() / finite.len() as f64,
    })
}

/// Positions of scores strictly greater than the cut.
pub fn flag_anomalous(scores: &[f64], cut: f64) -> Vec<usize> {
    scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > cut)
        .map(|(i, _)| i)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_vector_matches_formula() {
        let (scores, sigma) = anomaly_scores(&[0.5, 0.6, 3.0]).unwrap();
        assert_eq!(sigma, 0.5);
        assert!((scores[0] - 1.0).abs() < 1e-9);
        assert!((scores[1] - 1.0666667).abs() < 1e-7);
        assert!((scores[2] - 2.6666667).abs() < 1e-7);
    }

    #[test]
    fn equal_losses_score_one_and_flag_nothing() {
        for v in [0.0, 0.7, 123.0] {
            let (scores, sigma) = anomaly_scores(&[v; 4]).unwrap();
            assert_eq!(sigma, v);
            assert!(scores.iter().all(|&s| s == 1.0));
            for rule in [ThresholdRule::Median, ThresholdRule::Mean] {
                let cut = threshold(&scores, rule).unwrap();
                assert_eq!(cut, 1.0);
                assert!(flag_anomalous(&scores, cut).is_empty());
            }
        }
    }

    #[test]
    fn minimum_loss_scores_exactly_one() {
        let (scores, _) = anomaly_scores(&[2.0, 0.25, 0.9]).unwrap();
        assert_eq!(scores[1], 1.0);
        assert!(scores.iter().all(|&s| s >= 1.0));
    }

    #[test]
    fn infinite_loss_scores_infinite_and_is_flagged() {
        let (scores, sigma) = anomaly_scores(&[0.5, f64::INFINITY, 0.6]).unwrap();
        assert_eq!(sigma, 0.5);
        assert!(scores[1].is_infinite());
        let cut = threshold(&scores, ThresholdRule::Mean).unwrap();
        assert!(cut.is_finite());
        assert_eq!(flag_anomalous(&scores, cut + 100.0), vec![1]);
    }

    #[test]
    fn all_infinite_losses_is_protocol_error() {
        let err = anomaly_scores(&[f64::INFINITY, f64::INFINITY]).unwrap_err();
        assert!(matches!(err, Error::Protocol(_)));
    }

    #[test]
    fn negative_or_nan_losses_rejected() {
        assert!(anomaly_scores(&[-0.1]).is_err());
        assert!(anomaly_scores(&[f64::NAN]).is_err());
        assert!(anomaly_scores(&[]).is_err());
    }

    #[test]
    fn median_is_lower_median() {
        let scores = [1.0, 1.0667, 2.6667];
        assert!((threshold(&scores, ThresholdRule::Median).unwrap() - 1.0667).abs() < 1e-12);
        assert_eq!(threshold(&[1.0, 2.0], ThresholdRule::Median).unwrap(), 1.0);
        assert_eq!(
            threshold(&[4.0, 1.0, 3.0, 2.0], ThresholdRule::Median).unwrap(),
            2.0
        );
    }

    #[test]
    fn mean_rule_averages() {
        let scores = [1.0, 2.0, 6.0];
        assert_eq!(threshold(&scores, ThresholdRule::Mean).unwrap(), 3.0);
    }

    #[test]
    fn flagging_is_strict() {
        let scores = [1.0, 1.0667, 2.6667];
        let cut = threshold(&scores, ThresholdRule::Median).unwrap();
        assert_eq!(flag_anomalous(&scores, cut), vec![2]);
        assert!(flag_anomalous(&scores, f64::INFINITY).is_empty());
    }

    #[test]
    fn worked_vector_flags_under_both_rules() {
        let (scores, _) = anomaly_scores(&[0.5, 0.6, 3.0]).unwrap();
        for rule in [ThresholdRule::Median, ThresholdRule::Mean] {
            let cut = threshold(&scores, rule).unwrap();
            assert_eq!(flag_anomalous(&scores, cut), vec![2], "rule {rule:?}");
        }
    }
}
