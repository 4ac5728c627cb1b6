use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::Mode;
use crate::tensor::{Element, Tensor};

/// Label id excluded from losses and metrics.
pub const IGNORE_INDEX: u32 = 255;
pub const DICE_EPS: f64 = 1e-6;
pub const AUX_WEIGHT: f64 = 0.4;

/// Mean over non-ignored pixels of `-ln softmax(logits)[label]`, with the
/// probability clamped below at 1e-12.
pub fn cross_entropy_loss<T: Element>(g: &mut Graph<T>, logits: Var, labels: &[u32], ignore: u32) -> Result<Var> {
    g.cross_entropy(logits, labels, ignore)
}

/// One-hot `[B,K,H,W]` target; ignored pixels are all-zero.
pub fn one_hot<T: Element>(labels: &[u32], shape: &[usize], ignore: u32) -> Result<Tensor<T>> {
    let (b, k, hw) = (shape[0], shape[1], shape[2] * shape[3]);
    if labels.len() != b * hw {
        return Err(Error::shape("one_hot", format!("{} labels for logits {shape:?}", labels.len())));
    }
    let mut t = Tensor::zeros(shape);
    for (i, &l) in labels.iter().enumerate() {
        if l == ignore {
            continue;
        }
        if l as usize >= k {
            return Err(Error::invalid("one_hot", format!("label {l} out of range for {k} classes")));
        }
        let (bi, p) = (i / hw, i % hw);
        t.data_mut()[(bi * k + l as usize) * hw + p] = T::one();
    }
    Ok(t)
}

/// Soft Dice on class probabilities:
/// `1 - (2/N) sum_n sum_k p*y / (p + y + eps)` over the `N` non-ignored
/// pixels.
pub fn dice_loss<T: Element>(g: &mut Graph<T>, probs: Var, labels: &[u32], ignore: u32, eps: f64) -> Result<Var> {
    let shape = g.shape(probs).to_vec();
    if shape.len() != 4 {
        return Err(Error::shape("dice_loss", format!("expected [B,K,H,W] probabilities, got {shape:?}")));
    }
    let n = labels.iter().filter(|&&l| l != ignore).count();
    if n == 0 {
        return Err(Error::invalid("dice_loss", "every pixel is ignored"));
    }
    let y = g.constant(one_hot(labels, &shape, ignore)?);
    let num = g.mul(probs, y)?;
    let den = g.add(probs, y)?;
    let den = g.add_scalar(den, T::of(eps));
    let r = g.div(num, den)?;
    let s = g.sum(r);
    let s = g.scale(s, T::of(-2.0 / n as f64));
    Ok(g.add_scalar(s, T::one()))
}

/// Components of the training objective.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: Var,
    pub ce: Var,
    pub dice: Var,
    /// Mean auxiliary cross-entropy, if any auxiliary logits were given.
    pub aux: Option<Var>,
}

/// `L_CE + L_DICE + aux_weight * mean(aux CE)`.
pub fn total_loss<T: Element>(
    g: &mut Graph<T>,
    logits: Var,
    aux: &[Var],
    labels: &[u32],
    ignore: u32,
    aux_weight: f64,
    mode: Mode,
) -> Result<LossParts> {
    if mode == Mode::Train && aux_weight != 0.0 && aux.is_empty() {
        return Err(Error::invalid("total_loss", "training with an auxiliary weight needs auxiliary logits"));
    }
    let ce = cross_entropy_loss(g, logits, labels, ignore)?;
    let probs = g.softmax(logits, 1)?;
    let dice = dice_loss(g, probs, labels, ignore, DICE_EPS)?;
    let mut total = g.add(ce, dice)?;
    let mut aux_mean = None;
    if !aux.is_empty() {
        let mut acc = cross_entropy_loss(g, aux[0], labels, ignore)?;
        for &a in &aux[1..] {
            let l = cross_entropy_loss(g, a, labels, ignore)?;
            acc = g.add(acc, l)?;
        }
        let mean = g.scale(acc, T::of(1.0 / aux.len() as f64));
        let weighted = g.scale(mean, T::of(aux_weight));
        total = g.add(total, weighted)?;
        aux_mean = Some(mean);
    }
    Ok(LossParts { total, ce, dice, aux: aux_mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn logits(shape: &[usize], f: impl FnMut(usize) -> f64) -> Tensor<f64> {
        Tensor::from_fn(shape, f)
    }

    /// Logits with a margin of 40 on the labelled class.
    fn perfect(labels: &[u32], k: usize, hw: usize) -> Tensor<f64> {
        let b = labels.len() / hw;
        let mut t = Tensor::zeros(&[b, k, hw, 1]);
        for (i, &l) in labels.iter().enumerate() {
            t.data_mut()[((i / hw) * k + l as usize) * hw + i % hw] = 40.0;
        }
        t
    }

    #[test]
    fn uniform_logits_give_ln_k() {
        for k in [2usize, 3, 7] {
            let mut g = Graph::new();
            let x = g.constant(logits(&[2, k, 3, 3], |_| 0.25));
            let labels: Vec<u32> = (0..18).map(|i| (i % k) as u32).collect();
            let l = cross_entropy_loss(&mut g, x, &labels, IGNORE_INDEX).unwrap();
            assert!((g.value(l).item() - (k as f64).ln()).abs() < 1e-6);
        }
    }

    #[test]
    fn perfect_predictions_reach_the_minima() {
        let labels: Vec<u32> = (0..2 * 12).map(|i| (i * 7 % 3) as u32).collect();
        let mut g = Graph::new();
        let x = g.constant(perfect(&labels, 3, 12));
        let ce = cross_entropy_loss(&mut g, x, &labels, IGNORE_INDEX).unwrap();
        let p = g.softmax(x, 1).unwrap();
        let d = dice_loss(&mut g, p, &labels, IGNORE_INDEX, DICE_EPS).unwrap();
        assert!(g.value(ce).item() <= 1e-6);
        assert!(g.value(d).item() <= 1e-6);
    }

    #[test]
    fn two_pixel_cross_entropy_by_hand() {
        // Pixel 0: logits (1, 3), label 0. Pixel 1: logits (2, -1), label 1.
        let t = Tensor::new(&[1, 2, 1, 2], vec![1.0, 2.0, 3.0, -1.0]).unwrap();
        let mut g = Graph::new();
        let x = g.constant(t);
        let l = cross_entropy_loss(&mut g, x, &[0, 1], IGNORE_INDEX).unwrap();
        let p0 = 1f64.exp() / (1f64.exp() + 3f64.exp());
        let p1 = (-1f64).exp() / (2f64.exp() + (-1f64).exp());
        let want = -(p0.ln() + p1.ln()) / 2.0;
        assert!((g.value(l).item() - want).abs() < 1e-12);
        // An ignored pixel drops out of the mean; all ignored is an error.
        let l = cross_entropy_loss(&mut g, x, &[0, IGNORE_INDEX], IGNORE_INDEX).unwrap();
        assert!((g.value(l).item() + p0.ln()).abs() < 1e-12);
        assert!(cross_entropy_loss(&mut g, x, &[IGNORE_INDEX, IGNORE_INDEX], IGNORE_INDEX).is_err());
    }

    #[test]
    fn dice_hand_case_and_total_disagreement() {
        let mut g = Graph::new();
        let p = g.constant(Tensor::full(&[1, 2, 1, 1], 0.5));
        let d = dice_loss(&mut g, p, &[0], IGNORE_INDEX, DICE_EPS).unwrap();
        let want = 1.0 - 2.0 * (0.5 / (0.5 + 1.0 + DICE_EPS));
        assert!((g.value(d).item() - want).abs() < 1e-12);
        let wrong = g.constant(Tensor::new(&[1, 2, 1, 2], vec![0.0, 0.0, 1.0, 1.0]).unwrap());
        let d = dice_loss(&mut g, wrong, &[0, 0], IGNORE_INDEX, DICE_EPS).unwrap();
        assert!(g.value(d).item() >= 1.0 - 1e-6);
    }

    #[test]
    fn total_requires_aux_in_training() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[1, 2, 1, 2]));
        assert!(total_loss(&mut g, x, &[], &[0, 1], IGNORE_INDEX, AUX_WEIGHT, Mode::Train).is_err());
        let main_only = total_loss(&mut g, x, &[], &[0, 1], IGNORE_INDEX, 0.0, Mode::Train).unwrap();
        let eval = total_loss(&mut g, x, &[], &[0, 1], IGNORE_INDEX, AUX_WEIGHT, Mode::Eval).unwrap();
        assert_eq!(g.value(main_only.total).item(), g.value(eval.total).item());
    }

    #[test]
    fn perfect_aux_heads_add_nothing() {
        let labels: Vec<u32> = (0..12).map(|i| (i % 3) as u32).collect();
        let mut g = Graph::new();
        let main = g.constant(logits(&[1, 3, 12, 1], |i| (i as f64 * 0.3).sin()));
        let aux: Vec<Var> = (0..3).map(|_| g.constant(perfect(&labels, 3, 12))).collect();
        let parts = total_loss(&mut g, main, &aux, &labels, IGNORE_INDEX, AUX_WEIGHT, Mode::Train).unwrap();
        let v = |x: Var| g.value(x).item();
        assert!((v(parts.total) - v(parts.ce) - v(parts.dice)).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn total_is_the_weighted_sum(seed in 0u64..500, k in 2usize..5) {
            let mut r = crate::rng::Rng::new(seed);
            let shape = [2, k, 3, 4];
            let labels: Vec<u32> = (0..24).map(|_| if r.below(8) == 0 { IGNORE_INDEX } else { r.below(k) as u32 }).collect();
            prop_assume!(labels.iter().any(|&l| l != IGNORE_INDEX));
            let mut g = Graph::new();
            let main = g.constant(logits(&shape, |_| r.uniform(-3.0, 3.0)));
            let aux: Vec<Var> = (0..3).map(|_| g.constant(logits(&shape, |_| r.uniform(-3.0, 3.0)))).collect();
            let parts = total_loss(&mut g, main, &aux, &labels, IGNORE_INDEX, AUX_WEIGHT, Mode::Train).unwrap();
            let v = |g: &Graph<f64>, x: Var| g.value(x).item();
            let want = v(&g, parts.ce) + v(&g, parts.dice) + AUX_WEIGHT * v(&g, parts.aux.unwrap());
            prop_assert!((v(&g, parts.total) - want).abs() < 1e-6);
            prop_assert!(v(&g, parts.total) >= 0.0 && v(&g, parts.total).is_finite());

            // Identical main and auxiliary logits: total = CE + Dice + 0.4 CE.
            let same = total_loss(&mut g, main, &[main, main, main], &labels, IGNORE_INDEX, AUX_WEIGHT, Mode::Train).unwrap();
            let want = v(&g, same.ce) * (1.0 + AUX_WEIGHT) + v(&g, same.dice);
            prop_assert!((v(&g, same.total) - want).abs() < 1e-6);
        }
    }
}
