use super::ConfusionCounts;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub g_mean: f64,
    pub auc: Option<f64>,
}

/// Accuracy, sensitivity, specificity and their geometric mean.
pub fn metrics(c: &ConfusionCounts) -> Result<MetricReport> {
    let undefined = |metric, reason: &str| Error::UndefinedMetric {
        metric,
        reason: reason.to_string(),
    };
    if c.total() == 0 {
        return Err(undefined("accuracy", "no pixels were counted"));
    }
    if c.tp + c.fn_ == 0 {
        return Err(undefined("sensitivity", "TP + FN = 0 (no vessel pixels)"));
    }
    if c.tn + c.fp == 0 {
        return Err(undefined("specificity", "TN + FP = 0 (no background pixels)"));
    }
    let accuracy = (c.tn + c.tp) as f64 / c.total() as f64;
    let sensitivity = c.tp as f64 / (c.tp + c.fn_) as f64;
    let specificity = c.tn as f64 / (c.tn + c.fp) as f64;
    Ok(MetricReport {
        accuracy,
        sensitivity,
        specificity,
        g_mean: g_mean(sensitivity, specificity),
        auc: None,
    })
}

pub fn g_mean(sensitivity: f64, specificity: f64) -> f64 {
    (sensitivity * specificity).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sensitivity_example() {
        let c = ConfusionCounts {
            tp: 8,
            fn_: 2,
            tn: 5,
            fp: 1,
        };
        assert_eq!(metrics(&c).unwrap().sensitivity, 0.8);
    }

    #[test]
    fn perfect_counts() {
        let c = ConfusionCounts {
            tp: 3,
            tn: 9,
            fp: 0,
            fn_: 0,
        };
        let m = metrics(&c).unwrap();
        assert_eq!((m.accuracy, m.sensitivity, m.specificity, m.g_mean), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn zero_denominators_name_the_metric() {
        let no_vessels = ConfusionCounts {
            tn: 4,
            fp: 1,
            ..Default::default()
        };
        assert!(matches!(metrics(&no_vessels), Err(Error::UndefinedMetric { metric: "sensitivity", .. })));
        let no_background = ConfusionCounts {
            tp: 4,
            ..Default::default()
        };
        assert!(matches!(metrics(&no_background), Err(Error::UndefinedMetric { metric: "specificity", .. })));
        assert!(matches!(
            metrics(&ConfusionCounts::default()),
            Err(Error::UndefinedMetric { metric: "accuracy", .. })
        ));
    }
}
