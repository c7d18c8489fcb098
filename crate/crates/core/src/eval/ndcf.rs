use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Confusion, DistanceClass, NdcfResult};

/// Which separations count as a contact, and the relative cost of each error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactRule {
    /// Meters; a class at or below it is a contact.
    pub threshold: f64,
    pub w_fn: f64,
    pub w_fp: f64,
}

impl Default for ContactRule {
    fn default() -> Self {
        Self {
            threshold: 1.8,
            w_fn: 1.0,
            w_fp: 1.0,
        }
    }
}

impl ContactRule {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if pos(self.threshold) && pos(self.w_fn) && pos(self.w_fp) {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "contact threshold and cost weights must be positive, got {self:?}"
            )))
        }
    }

    pub fn is_contact(&self, class: DistanceClass) -> bool {
        class.meters() <= self.threshold
    }
}

pub fn binarize(class: DistanceClass, rule: &ContactRule) -> bool {
    rule.is_contact(class)
}

pub fn confusion(
    predictions: &[DistanceClass],
    truths: &[DistanceClass],
    rule: &ContactRule,
) -> Result<Confusion> {
    if predictions.len() != truths.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    let mut c = Confusion::default();
    for (p, t) in predictions.iter().zip(truths) {
        match (rule.is_contact(*p), rule.is_contact(*t)) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// `(w_fn * P_fn + w_fp * P_fp) / min(w_fn, w_fp)`; a constant system scores 1
/// at equal weights.
pub fn ndcf_from_confusion(counts: Confusion, rule: &ContactRule) -> Result<NdcfResult> {
    rule.validate()?;
    let positives = counts.tp + counts.fn_;
    let negatives = counts.fp + counts.tn;
    if positives == 0 || negatives == 0 {
        return Err(Error::Domain(format!(
            "nDCF needs at least one true contact and one true non-contact (got {positives} and {negatives})"
        )));
    }
    let p_fn = counts.fn_ as f64 / positives as f64;
    let p_fp = counts.fp as f64 / negatives as f64;
    let ndcf = (rule.w_fn * p_fn + rule.w_fp * p_fp) / rule.w_fn.min(rule.w_fp);
    Ok(NdcfResult {
        p_fn,
        p_fp,
        w_fn: rule.w_fn,
        w_fp: rule.w_fp,
        ndcf,
        counts,
    })
}

pub fn ndcf(
    predictions: &[DistanceClass],
    truths: &[DistanceClass],
    rule: &ContactRule,
) -> Result<NdcfResult> {
    ndcf_from_confusion(confusion(predictions, truths, rule)?, rule)
}

pub fn accuracy(predictions: &[DistanceClass], truths: &[DistanceClass]) -> f64 {
    if truths.is_empty() {
        return 0.0;
    }
    let hits = predictions.iter().zip(truths).filter(|(p, t)| p == t).count();
    hits as f64 / truths.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use DistanceClass::*;

    #[test]
    fn binarize_examples() {
        let r = ContactRule::default();
        assert!(binarize(D1_2, &r));
        assert!(binarize(D1_8, &r));
        assert!(!binarize(D3_0, &r));
        assert!(!binarize(D4_5, &r));
    }

    #[test]
    fn ndcf_examples() {
        let truths = [D1_2, D1_8, D3_0, D4_5];
        let r = ContactRule::default();
        assert_eq!(ndcf(&truths, &truths, &r).unwrap().ndcf, 0.0);
        let never = ndcf(&[D4_5; 4], &truths, &r).unwrap();
        assert_eq!((never.p_fn, never.p_fp, never.ndcf), (1.0, 0.0, 1.0));
        let always = ndcf(&[D1_2; 4], &truths, &r).unwrap();
        assert_eq!(always.ndcf, 1.0);

        // 5 contacts with 1 miss, 10 non-contacts with 3 false alarms
        let counts = Confusion { tp: 4, fn_: 1, fp: 3, tn: 7 };
        let res = ndcf_from_confusion(counts, &r).unwrap();
        assert_eq!((res.p_fn, res.p_fp), (0.2, 0.3));
        assert_eq!(res.ndcf, 0.5);

        assert!(ndcf(&[D1_2], &[D1_2], &r).is_err());
        assert!(ndcf(&[D1_2], &[D1_2, D4_5], &r).is_err());
    }

    fn arb_class() -> impl Strategy<Value = DistanceClass> {
        (0usize..4).prop_map(|i| DistanceClass::ALL[i])
    }

    proptest! {
        #[test]
        fn bounded_permutation_and_scale_invariant(
            pairs in prop::collection::vec((arb_class(), arb_class()), 2..60),
            w_fn in 0.1f64..10.0,
            w_fp in 0.1f64..10.0,
            c in 0.01f64..100.0,
            rot in 0usize..60,
        ) {
            let mut pairs = pairs;
            pairs.push((D1_2, D1_2));
            pairs.push((D4_5, D4_5));
            let rule = ContactRule { threshold: 1.8, w_fn, w_fp };
            let (p, t): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
            let base = ndcf(&p, &t, &rule).unwrap();
            prop_assert!(base.ndcf >= 0.0);
            prop_assert!(base.ndcf <= (w_fn + w_fp) / w_fn.min(w_fp) + 1e-12);

            let mut rotated = pairs.clone();
            let k = rot % rotated.len();
            rotated.rotate_left(k);
            rotated.reverse();
            let (p2, t2): (Vec<_>, Vec<_>) = rotated.into_iter().unzip();
            prop_assert_eq!(ndcf(&p2, &t2, &rule).unwrap().ndcf, base.ndcf);

            let scaled = ContactRule { threshold: 1.8, w_fn: w_fn * c, w_fp: w_fp * c };
            prop_assert!((ndcf(&p, &t, &scaled).unwrap().ndcf - base.ndcf).abs() <= 1e-12 * base.ndcf.max(1.0));
        }
    }
}
