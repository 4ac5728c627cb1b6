use crate::error::{Error, Result};

/// `K x K` pixel counts; rows are ground truth, columns predictions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

/// Summary scores. Classes absent from both truth and prediction are
/// `None` per class and excluded from the means.
#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub miou: f64,
    /// Correct pixels over scored pixels.
    pub oa: f64,
    /// Per-class `(TP + TN) / (TP + TN + FP + FN)` averaged over classes.
    pub oa_per_class: f64,
    pub mf1: f64,
    pub iou: Vec<Option<f64>>,
    pub f1: Vec<Option<f64>>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        ConfusionMatrix { k, counts: vec![0; k * k] }
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn from_counts(k: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != k * k {
            return Err(Error::invalid("ConfusionMatrix", format!("{} counts for {k} classes", counts.len())));
        }
        Ok(ConfusionMatrix { k, counts })
    }

    /// Adds one batch. Pixels labelled `ignore` are skipped.
    pub fn update(&mut self, pred: &[usize], labels: &[u32], ignore: u32) -> Result<()> {
        if pred.len() != labels.len() {
            return Err(Error::invalid("ConfusionMatrix", format!("{} predictions, {} labels", pred.len(), labels.len())));
        }
        for (&p, &l) in pred.iter().zip(labels) {
            if l == ignore {
                continue;
            }
            if p >= self.k || l as usize >= self.k {
                return Err(Error::invalid("ConfusionMatrix", format!("class out of range: truth {l}, prediction {p}, K={}", self.k)));
            }
            self.counts[l as usize * self.k + p] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.k != self.k {
            return Err(Error::invalid("ConfusionMatrix", "class counts differ"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn finalize(&self) -> Result<Metrics> {
        let total = self.total();
        if total == 0 {
            return Err(Error::invalid("ConfusionMatrix", "no scored pixels"));
        }
        let k = self.k;
        let mut iou = Vec::with_capacity(k);
        let mut f1 = Vec::with_capacity(k);
        let mut acc = Vec::new();
        for i in 0..k {
            let tp = self.get(i, i);
            let fn_ = (0..k).map(|j| self.get(i, j)).sum::<u64>() - tp;
            let fp = (0..k).map(|j| self.get(j, i)).sum::<u64>() - tp;
            if tp + fn_ + fp == 0 {
                iou.push(None);
                f1.push(None);
                continue;
            }
            let tn = total - tp - fn_ - fp;
            iou.push(Some(tp as f64 / (tp + fp + fn_) as f64));
            f1.push(Some(2.0 * tp as f64 / (2 * tp + fn_ + fp) as f64));
            acc.push((tp + tn) as f64 / total as f64);
        }
        let mean = |v: &[Option<f64>]| {
            let present: Vec<f64> = v.iter().flatten().copied().collect();
            present.iter().sum::<f64>() / present.len() as f64
        };
        let trace: u64 = (0..k).map(|i| self.get(i, i)).sum();
        Ok(Metrics {
            miou: mean(&iou),
            oa: trace as f64 / total as f64,
            oa_per_class: acc.iter().sum::<f64>() / acc.len() as f64,
            mf1: mean(&f1),
            iou,
            f1,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_class_hand_case() {
        let cm = ConfusionMatrix::from_counts(2, vec![3, 1, 1, 3]).unwrap();
        let m = cm.finalize().unwrap();
        assert_eq!(m.iou, vec![Some(0.6), Some(0.6)]);
        assert_eq!(m.miou, 0.6);
        assert_eq!(m.oa, 0.75);
        assert_eq!(m.mf1, 0.75);
    }

    #[test]
    fn perfect_and_disjoint() {
        let mut cm = ConfusionMatrix::new(3);
        cm.update(&[0, 1, 2, 2], &[0, 1, 2, 2], 255).unwrap();
        assert!((0..3).all(|i| (0..3).all(|j| i == j || cm.get(i, j) == 0)));
        let m = cm.finalize().unwrap();
        assert_eq!((m.miou, m.oa, m.mf1, m.oa_per_class), (1.0, 1.0, 1.0, 1.0));

        let mut cm = ConfusionMatrix::new(3);
        cm.update(&[1, 2, 0], &[0, 1, 2], 255).unwrap();
        assert_eq!(cm.finalize().unwrap().miou, 0.0);
    }

    #[test]
    fn single_pixel_ignore_and_errors() {
        let mut cm = ConfusionMatrix::new(3);
        cm.update(&[2, 0], &[1, 255], 255).unwrap();
        assert_eq!(cm.get(1, 2), 1);
        assert_eq!(cm.total(), 1);
        assert!(cm.update(&[3], &[0], 255).is_err());
        assert!(ConfusionMatrix::new(2).finalize().is_err());
    }

    #[test]
    fn absent_classes_are_excluded() {
        let mut cm = ConfusionMatrix::new(4);
        cm.update(&[0, 0, 1], &[0, 1, 1], 255).unwrap();
        let m = cm.finalize().unwrap();
        assert_eq!(m.iou[2], None);
        assert!((m.miou - (0.5 + 0.5) / 2.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn streaming_equals_batch(seed in 0u64..10_000, k in 2usize..6) {
            let mut r = crate::rng::Rng::new(seed);
            let pairs: Vec<(usize, u32)> = (0..100).map(|_| (r.below(k), if r.below(10) == 0 { 255 } else { r.below(k) as u32 })).collect();
            let mut streamed = ConfusionMatrix::new(k);
            for chunk in pairs.chunks(7) {
                let (p, l): (Vec<usize>, Vec<u32>) = chunk.iter().copied().unzip();
                streamed.update(&p, &l, 255).unwrap();
            }
            let (p, l): (Vec<usize>, Vec<u32>) = pairs.iter().copied().unzip();
            let mut whole = ConfusionMatrix::new(k);
            whole.update(&p, &l, 255).unwrap();
            prop_assert_eq!(&streamed, &whole);
            let scored = l.iter().filter(|&&v| v != 255).count() as u64;
            prop_assert_eq!(whole.total(), scored);
        }
    }
}
