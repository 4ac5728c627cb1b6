use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{Builder, Conv, Session};
use crate::tensor::kernels::{PoolGeom, PoolKind};
use crate::tensor::{Element, Tensor};

/// Multi-head self-attention inside non-overlapping `ws x ws` windows,
/// followed by vertical and horizontal in-window average pooling.
///
/// Inputs whose sides are not multiples of `ws` are zero-padded at the
/// bottom/right and the result is cropped back.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WindowAttention {
    pub name: String,
    pub channels: usize,
    pub window: usize,
    pub heads: usize,
    pub qkv: Conv,
}

/// Geometry of one forward: padded extents and window counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowLayout {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub padded: (usize, usize),
    pub windows: (usize, usize),
    pub window: usize,
    pub heads: usize,
}

impl WindowLayout {
    pub fn new(batch: usize, height: usize, width: usize, window: usize, heads: usize) -> Self {
        let nh = height.div_ceil(window);
        let nw = width.div_ceil(window);
        WindowLayout {
            batch,
            height,
            width,
            padded: (nh * window, nw * window),
            windows: (nh, nw),
            window,
            heads,
        }
    }

    pub fn tokens(&self) -> usize {
        self.window * self.window
    }

    pub fn num_windows(&self) -> usize {
        self.windows.0 * self.windows.1
    }
}

impl WindowAttention {
    pub fn new(name: impl Into<String>, channels: usize, window: usize, heads: usize) -> Self {
        let name = name.into();
        WindowAttention { qkv: Conv::pointwise(format!("{name}.qkv"), channels, 3 * channels), name, channels, window, heads }
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    pub fn declare<T: Element>(&self, b: &mut Builder<'_, T>) -> Result<()> {
        self.qkv.declare(b)
    }

    /// `[B, c, Hp, Wp]` -> `[B * heads * nWin, T, d]`.
    fn partition<T: Element>(&self, s: &mut Session<'_, T>, x: Var, l: &WindowLayout) -> Result<Var> {
        let (b, c, d, ws) = (l.batch, self.channels, self.head_dim(), self.window);
        let (nh, nw) = l.windows;
        let y = s.reshape(x, &[b * c, nh, ws, nw, ws])?;
        let y = s.permute(y, &[0, 1, 3, 2, 4])?;
        let y = s.reshape(y, &[b * self.heads, d, nh * nw, ws * ws])?;
        let y = s.permute(y, &[0, 2, 3, 1])?;
        s.reshape(y, &[b * self.heads * nh * nw, ws * ws, d])
    }

    fn merge<T: Element>(&self, s: &mut Session<'_, T>, x: Var, l: &WindowLayout) -> Result<Var> {
        let (b, c, d, ws) = (l.batch, self.channels, self.head_dim(), self.window);
        let (nh, nw) = l.windows;
        let y = s.reshape(x, &[b * self.heads, nh * nw, ws * ws, d])?;
        let y = s.permute(y, &[0, 3, 1, 2])?;
        let y = s.reshape(y, &[b * c, nh, nw, ws, ws])?;
        let y = s.permute(y, &[0, 1, 3, 2, 4])?;
        s.reshape(y, &[b, c, l.padded.0, l.padded.1])
    }

    /// Per-window attention output at padded resolution, before pooling,
    /// together with the attention probabilities `[B*heads*nWin, T, T]`.
    pub fn attend<T: Element>(&self, s: &mut Session<'_, T>, x: Var) -> Result<(Var, Var, WindowLayout)> {
        let shape = s.shape(x).to_vec();
        if shape.len() != 4 || shape[1] != self.channels {
            return Err(Error::shape(
                "window_attention",
                format!("`{}` expects [B,{},H,W], got {shape:?}", self.name, self.channels),
            ));
        }
        if self.heads == 0 || !self.channels.is_multiple_of(self.heads) {
            return Err(Error::invalid("window_attention", format!("{} channels, {} heads", self.channels, self.heads)));
        }
        let l = WindowLayout::new(shape[0], shape[2], shape[3], self.window, self.heads);
        let (ph, pw) = (l.padded.0 - l.height, l.padded.1 - l.width);
        let xp = if ph + pw > 0 { s.pad_bottom_right(x, ph, pw)? } else { x };
        let qkv = self.qkv.forward(s, xp)?;
        let c = self.channels;
        let parts = s.split(qkv, 1, &[c, c, c])?;
        let q = self.partition(s, parts[0], &l)?;
        let k = self.partition(s, parts[1], &l)?;
        let v = self.partition(s, parts[2], &l)?;
        let logits = s.matmul_t(q, k, false, true)?;
        let logits = s.scale(logits, T::of(1.0 / (self.head_dim() as f64).sqrt()));
        let probs = s.softmax(logits, 2)?;
        s.probe(format!("{}.probs", self.name), probs);
        let out = s.batched_matmul(probs, v)?;
        let out = self.merge(s, out, &l)?;
        Ok((out, probs, l))
    }

    pub fn forward<T: Element>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let (a, _, l) = self.attend(s, x)?;
        let (b, c, ws) = (l.batch, self.channels, self.window);
        let (hp, wp) = l.padded;
        let (nh, nw) = l.windows;

        let v = s.pool2d(a, PoolGeom::tiled(PoolKind::Avg, (ws, 1)))?;
        let v = s.reshape(v, &[b * c, nh, 1, wp])?;
        let v = s.expand(v, &[b * c, nh, ws, wp])?;
        let v = s.reshape(v, &[b, c, hp, wp])?;

        let h = s.pool2d(a, PoolGeom::tiled(PoolKind::Avg, (1, ws)))?;
        let h = s.reshape(h, &[b * c, hp, nw, 1])?;
        let h = s.expand(h, &[b * c, hp, nw, ws])?;
        let h = s.reshape(h, &[b, c, hp, wp])?;

        let y = s.add(v, h)?;
        if (hp, wp) == (l.height, l.width) {
            return Ok(y);
        }
        let y = s.narrow(y, 2, 0, l.height)?;
        s.narrow(y, 3, 0, l.width)
    }
}

/// Per-pixel entropy of each query's attention row, averaged over heads and
/// divided by `ln T`, as a `[B, 1, H, W]` map in `[0, 1]`.
pub fn row_entropy_map<T: Element>(probs: &Tensor<T>, l: &WindowLayout) -> Result<Tensor<f64>> {
    let t = l.tokens();
    let n = l.batch * l.heads * l.num_windows();
    if probs.shape() != [n, t, t] {
        return Err(Error::shape("row_entropy_map", format!("expected [{n},{t},{t}], got {:?}", probs.shape())));
    }
    let norm = if t > 1 { (t as f64).ln() } else { 1.0 };
    let (nh, nw) = l.windows;
    let ws = l.window;
    let mut out = vec![0.0; l.batch * l.height * l.width];
    let p = probs.data();
    for b in 0..l.batch {
        for head in 0..l.heads {
            for win in 0..l.num_windows() {
                let (wy, wx) = (win / nw, win % nw);
                debug_assert!(wy < nh);
                let base = ((b * l.heads + head) * l.num_windows() + win) * t * t;
                for q in 0..t {
                    let (y, x) = (wy * ws + q / ws, wx * ws + q % ws);
                    if y >= l.height || x >= l.width {
                        continue;
                    }
                    let row = &p[base + q * t..][..t];
                    let h: f64 = row
                        .iter()
                        .map(|v| v.as_f64())
                        .filter(|&v| v > 0.0)
                        .map(|v| -v * v.ln())
                        .sum();
                    out[(b * l.height + y) * l.width + x] += h / norm / l.heads as f64;
                }
            }
        }
    }
    Tensor::new(&[l.batch, 1, l.height, l.width], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Graph;
    use crate::nn::{Mode, ParamStore};
    use proptest::prelude::*;

    fn store_for(att: &WindowAttention, seed: u64) -> ParamStore<f64> {
        let mut store = ParamStore::new();
        att.declare(&mut Builder::new(&mut store, seed)).unwrap();
        store
    }

    fn rand_input(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut r = crate::rng::Rng::new(seed);
        Tensor::from_fn(shape, |_| r.uniform(-1.0, 1.0))
    }

    #[test]
    fn rows_sum_to_one_and_shape_is_kept() {
        let att = WindowAttention::new("att", 8, 4, 2);
        let store = store_for(&att, 1);
        for &(h, w) in &[(8, 8), (6, 9), (3, 5)] {
            let mut g = Graph::new();
            let mut s = Session::new(&mut g, &store, Mode::Eval, false);
            let x = s.constant(rand_input(&[2, 8, h, w], 7));
            let (_, probs, l) = att.attend(&mut s, x).unwrap();
            let y = att.forward(&mut s, x).unwrap();
            assert_eq!(s.shape(y), &[2, 8, h, w]);
            let p = s.value(probs);
            assert_eq!(p.shape(), &[2 * 2 * l.num_windows(), 16, 16]);
            for row in p.data().chunks(16) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn single_token_windows_return_value_projection() {
        let c = 3;
        let att = WindowAttention::new("att", c, 1, 1);
        let mut store = store_for(&att, 2);
        // Value projection = identity; q, k arbitrary.
        let mut w = store.get(&att.qkv.weight_name()).unwrap().clone();
        for o in 2 * c..3 * c {
            for i in 0..c {
                w.data_mut()[o * c + i] = if o - 2 * c == i { 1.0 } else { 0.0 };
            }
        }
        store.set(&att.qkv.weight_name(), w).unwrap();
        let x = rand_input(&[1, c, 3, 4], 3);
        let mut g = Graph::new();
        let mut s = Session::new(&mut g, &store, Mode::Eval, false);
        let xv = s.constant(x.clone());
        let (a, _, _) = att.attend(&mut s, xv).unwrap();
        assert!(s.value(a).max_abs_diff(&x) < 1e-15);
        // Pools of extent one leave each path equal to the attention output.
        let y = att.forward(&mut s, xv).unwrap();
        let twice = x.map(|v| 2.0 * v);
        assert!(s.value(y).max_abs_diff(&twice) < 1e-15);
    }

    #[test]
    fn constant_logits_average_values_per_window() {
        let (c, ws) = (2, 2);
        let att = WindowAttention::new("att", c, ws, 1);
        let mut store = store_for(&att, 5);
        let mut w = store.get(&att.qkv.weight_name()).unwrap().clone();
        for v in &mut w.data_mut()[..2 * c * c] {
            *v = 0.0;
        }
        store.set(&att.qkv.weight_name(), w.clone()).unwrap();
        let x = rand_input(&[1, c, 4, 4], 9);
        let mut g = Graph::new();
        let mut s = Session::new(&mut g, &store, Mode::Eval, false);
        let xv = s.constant(x.clone());
        let (a, _, _) = att.attend(&mut s, xv).unwrap();
        let a = s.value(a).clone();
        // Oracle: value projection per pixel, then the window mean.
        let bias = store.get(&att.qkv.bias_name()).unwrap().data().to_vec();
        let val = |o: usize, y: usize, xx: usize| -> f64 {
            let row = 2 * c + o;
            bias[row] + (0..c).map(|i| w.data()[row * c + i] * x.data()[(i * 4 + y) * 4 + xx]).sum::<f64>()
        };
        for o in 0..c {
            for y in 0..4 {
                for xx in 0..4 {
                    let (y0, x0) = (y / ws * ws, xx / ws * ws);
                    let mut m = 0.0;
                    for dy in 0..ws {
                        for dx in 0..ws {
                            m += val(o, y0 + dy, x0 + dx);
                        }
                    }
                    m /= (ws * ws) as f64;
                    assert!((a.data()[(o * 4 + y) * 4 + xx] - m).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn entropy_map_is_normalized() {
        let att = WindowAttention::new("att", 4, 2, 2);
        let store = store_for(&att, 4);
        let mut g = Graph::new();
        let mut s = Session::new(&mut g, &store, Mode::Eval, false);
        let x = s.constant(rand_input(&[1, 4, 3, 5], 1));
        let (_, probs, l) = att.attend(&mut s, x).unwrap();
        let m = row_entropy_map(s.value(probs), &l).unwrap();
        assert_eq!(m.shape(), &[1, 1, 3, 5]);
        assert!(m.data().iter().all(|&v| (0.0..=1.0 + 1e-12).contains(&v)));
        let uniform = Tensor::<f64>::full(&[2 * l.num_windows(), 4, 4], 0.25);
        let u = row_entropy_map(&uniform, &l).unwrap();
        assert!(u.data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    proptest! {
        #[test]
        fn swapping_windows_swaps_outputs(seed in 0u64..1000, a in 0usize..4, b in 0usize..4) {
            let ws = 2;
            let att = WindowAttention::new("att", 4, ws, 2);
            let store = store_for(&att, 11);
            let x = rand_input(&[1, 4, 4, 4], seed);
            let swap = |t: &Tensor<f64>| {
                let mut o = t.clone();
                for ch in 0..4 {
                    for dy in 0..ws {
                        for dx in 0..ws {
                            let at = |w: usize| (ch * 4 + (w / 2) * ws + dy) * 4 + (w % 2) * ws + dx;
                            o.data_mut()[at(a)] = t.data()[at(b)];
                            o.data_mut()[at(b)] = t.data()[at(a)];
                        }
                    }
                }
                o
            };
            let mut g = Graph::new();
            let mut s = Session::new(&mut g, &store, Mode::Eval, false);
            let xv = s.constant(x.clone());
            let xs = s.constant(swap(&x));
            let y = att.forward(&mut s, xv).unwrap();
            let ys = att.forward(&mut s, xs).unwrap();
            prop_assert!(swap(s.value(y)).max_abs_diff(s.value(ys)) < 1e-12);
        }
    }
}
