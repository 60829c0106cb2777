use std::fmt;

use crate::error::{Error, Result};

/// Decision threshold on the positive-class probability.
pub const DECISION_THRESHOLD: f64 = 0.5;

/// Counts over the positive (unconscious) class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn record(&mut self, predicted_positive: bool, actual_positive: bool) {
        match (predicted_positive, actual_positive) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn from_scores(scores: &[f64], positives: &[bool], threshold: f64) -> Self {
        let mut cm = ConfusionMatrix::default();
        for (&s, &p) in scores.iter().zip(positives) {
            cm.record(s >= threshold, p);
        }
        cm
    }
}

impl std::ops::Add for ConfusionMatrix {
    type Output = ConfusionMatrix;

    fn add(self, o: Self) -> Self {
        ConfusionMatrix {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }
}

/// A ratio whose denominator may be empty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ratio {
    Defined(f64),
    Undefined,
}

impl Ratio {
    pub fn of(num: u64, den: u64) -> Ratio {
        if den == 0 {
            Ratio::Undefined
        } else {
            Ratio::Defined(num as f64 / den as f64)
        }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Ratio::Defined(v) => Some(v),
            Ratio::Undefined => None,
        }
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ratio::Defined(v) => write!(f, "{v:.6}"),
            Ratio::Undefined => f.write_str("undefined"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Overall {
    pub acc: f64,
    pub mf1: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostic {
    pub sp: Ratio,
    pub se: Ratio,
    pub ppv: Ratio,
    pub npv: Ratio,
}

/// F1 of one class as the fraction `2·hit / (2·hit + false alarms + misses)`;
/// a class that is neither present nor predicted has nothing to get wrong
/// and scores 1.
fn f1(hit: u64, false_alarm: u64, miss: u64) -> (i128, i128) {
    let den = 2 * hit as i128 + false_alarm as i128 + miss as i128;
    if den == 0 {
        (1, 1)
    } else {
        (2 * hit as i128, den)
    }
}

/// Exact fractions, one rounding each. `None` if the integers overflow.
fn exact(cm: &ConfusionMatrix) -> Option<(f64, f64)> {
    let (tp, fp, tn, fn_) = (cm.tp as i128, cm.fp as i128, cm.tn as i128, cm.fn_ as i128);
    let m = tp + fp + tn + fn_;
    let chance = (tp + fp)
        .checked_mul(tp + fn_)?
        .checked_add((tn + fn_).checked_mul(tn + fp)?)?;
    let kd = m.checked_mul(m)? - chance;
    let kappa = if kd == 0 {
        0.0
    } else {
        (m.checked_mul(tp + tn)? - chance) as f64 / kd as f64
    };
    let (a, b) = f1(cm.tp, cm.fp, cm.fn_);
    let (c, d) = f1(cm.tn, cm.fn_, cm.fp);
    let num = a.checked_mul(d)?.checked_add(c.checked_mul(b)?)?;
    let den = b.checked_mul(d)?.checked_mul(2)?;
    Some((kappa, num as f64 / den as f64))
}

pub fn compute_overall(cm: &ConfusionMatrix) -> Result<Overall> {
    let m = cm.total();
    if m == 0 {
        return Err(Error::InvalidArgument("confusion matrix is empty".into()));
    }
    let mf = m as f64;
    let acc = (cm.tp + cm.tn) as f64 / mf;
    if let Some((kappa, mf1)) = exact(cm) {
        return Ok(Overall { acc, mf1, kappa });
    }
    let ratio = |(n, d): (i128, i128)| n as f64 / d as f64;
    let mf1 = 0.5 * (ratio(f1(cm.tp, cm.fp, cm.fn_)) + ratio(f1(cm.tn, cm.fn_, cm.fp)));
    let pred_pos = (cm.tp + cm.fp) as f64;
    let pred_neg = (cm.tn + cm.fn_) as f64;
    let act_pos = (cm.tp + cm.fn_) as f64;
    let act_neg = (cm.tn + cm.fp) as f64;
    let pe = (pred_pos * act_pos + pred_neg * act_neg) / (mf * mf);
    let kappa = if pe == 1.0 { 0.0 } else { (acc - pe) / (1.0 - pe) };
    Ok(Overall { acc, mf1, kappa })
}

pub fn compute_diagnostic(cm: &ConfusionMatrix) -> Diagnostic {
    Diagnostic {
        se: Ratio::of(cm.tp, cm.tp + cm.fn_),
        sp: Ratio::of(cm.tn, cm.tn + cm.fp),
        ppv: Ratio::of(cm.tp, cm.tp + cm.fp),
        npv: Ratio::of(cm.tn, cm.tn + cm.fn_),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn huge_counts_fall_back_to_floats() {
        let cm = ConfusionMatrix {
            tp: u64::MAX / 3,
            fp: u64::MAX / 7,
            tn: u64::MAX / 3,
            fn_: u64::MAX / 8,
        };
        assert!(exact(&cm).is_none());
        let o = compute_overall(&cm).unwrap();
        assert!(o.kappa.is_finite() && o.mf1 > 0.0 && o.mf1 < 1.0);
    }

    #[test]
    fn worked_example() {
        let cm = ConfusionMatrix {
            tp: 50,
            fn_: 10,
            fp: 5,
            tn: 35,
        };
        let o = compute_overall(&cm).unwrap();
        assert!((o.acc - 0.85).abs() < 1e-12);
        assert!((o.mf1 - (100.0 / 115.0 + 70.0 / 85.0) / 2.0).abs() < 1e-15);
        // quoted to four places as 0.8466; the exact value is 0.846547
        assert!((o.mf1 - 0.8466).abs() <= 1e-4);
        assert!((o.kappa - 0.6939).abs() < 5e-5);
        let d = compute_diagnostic(&cm);
        let v = |r: Ratio| r.value().unwrap();
        assert!((v(d.se) - 0.8333).abs() < 5e-5);
        assert!((v(d.sp) - 0.875).abs() < 1e-12);
        assert!((v(d.ppv) - 0.9091).abs() < 5e-5);
        assert!((v(d.npv) - 0.7778).abs() < 5e-5);
    }

    #[test]
    fn degenerate_cases() {
        let perfect = ConfusionMatrix {
            tp: 4,
            fp: 0,
            tn: 6,
            fn_: 0,
        };
        let o = compute_overall(&perfect).unwrap();
        assert_eq!((o.acc, o.mf1, o.kappa), (1.0, 1.0, 1.0));
        let d = compute_diagnostic(&perfect);
        assert!([d.se, d.sp, d.ppv, d.npv].iter().all(|r| *r == Ratio::Defined(1.0)));

        let all_pos = ConfusionMatrix {
            tp: 5,
            fp: 5,
            tn: 0,
            fn_: 0,
        };
        assert_eq!(compute_overall(&all_pos).unwrap().kappa, 0.0);
        let none_pos = ConfusionMatrix {
            tp: 0,
            fp: 0,
            tn: 3,
            fn_: 2,
        };
        assert_eq!(compute_diagnostic(&none_pos).ppv, Ratio::Undefined);
        assert_eq!(Ratio::Undefined.to_string(), "undefined");
        assert!(compute_overall(&ConfusionMatrix::default()).is_err());
    }
}
