use crate::autograd::Graph;
use crate::error::{Error, Result};
use crate::network::Network;
use crate::nn::{Mode, ParamStore, Session};
use crate::tensor::kernels::{narrow, pad_bottom_right};
use crate::tensor::Tensor;

/// The network needs spatial sizes divisible by this.
pub const SIZE_MULTIPLE: usize = 32;

/// Eval-mode logits for a `[B, C, H, W]` image of any size. The input is
/// zero-padded at the bottom/right to a multiple of 32 and the logits are
/// cropped back.
pub fn predict_logits(net: &Network, store: &ParamStore<f32>, image: &Tensor<f32>) -> Result<Tensor<f32>> {
    let s = image.shape();
    if s.len() != 4 {
        return Err(Error::shape("predict", format!("expected [B,C,H,W], got {s:?}")));
    }
    let (h, w) = (s[2], s[3]);
    let (ph, pw) = (h.next_multiple_of(SIZE_MULTIPLE) - h, w.next_multiple_of(SIZE_MULTIPLE) - w);
    let input = if ph + pw > 0 { pad_bottom_right(image, ph, pw)? } else { image.clone() };
    let mut g = Graph::new();
    let mut sess = Session::new(&mut g, store, Mode::Eval, false);
    let x = sess.constant(input);
    let out = net.forward(&mut sess, x)?;
    let mut logits = g.value(out.logits).clone();
    if ph > 0 {
        logits = narrow(&logits, 2, 0, h)?;
    }
    if pw > 0 {
        logits = narrow(&logits, 3, 0, w)?;
    }
    Ok(logits)
}

/// Per-pixel argmax over the class axis of `[B, K, H, W]` logits, as
/// `B*H*W` ids. Ties go to the lower class.
pub fn argmax(logits: &Tensor<f32>) -> Vec<usize> {
    let s = logits.shape();
    let (b, k, hw) = (s[0], s[1], s[2] * s[3]);
    let d = logits.data();
    let mut out = Vec::with_capacity(b * hw);
    for bi in 0..b {
        for p in 0..hw {
            let mut best = 0;
            for c in 1..k {
                if d[(bi * k + c) * hw + p] > d[(bi * k + best) * hw + p] {
                    best = c;
                }
            }
            out.push(best);
        }
    }
    out
}
