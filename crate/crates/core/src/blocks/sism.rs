use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{Builder, Conv, Session};
use crate::tensor::kernels::Reduce;
use crate::tensor::Element;

use super::cffm::GateWeights;
use super::config::BlockConfig;

/// Spatial information selection: a large-receptive-field path with a
/// two-channel spatial attention, and a small depthwise-separable detail
/// path, merged into the input through a residual with learned weights.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sism {
    pub name: String,
    pub channels: usize,
    pub mid_dw: Conv,
    pub mid_pw: Conv,
    pub long_dw: Conv,
    pub long_pw: Conv,
    pub mid_proj: Conv,
    pub long_proj: Conv,
    pub attn: Conv,
    pub attn_pw: Conv,
    pub detail_dw: Conv,
    pub detail_pw: Conv,
    pub gate: GateWeights,
}

/// Intermediates of one forward.
#[derive(Clone, Copy, Debug)]
pub struct SismParts {
    pub attn: Var,
    pub large: Var,
    pub detail: Var,
    pub out: Var,
}

impl Sism {
    pub fn new(name: impl Into<String>, cfg: &BlockConfig) -> Self {
        let name = name.into();
        let c = cfg.channels;
        let k = cfg.sism_kernels;
        let n = |s: &str| format!("{name}.{s}");
        Sism {
            mid_dw: Conv::depthwise(n("mid_dw"), c, k.mid),
            mid_pw: Conv::pointwise(n("mid_pw"), c, c),
            long_dw: Conv::depthwise(n("long_dw"), c, k.long),
            long_pw: Conv::pointwise(n("long_pw"), c, c),
            mid_proj: Conv::pointwise(n("mid_proj"), c, c / 2),
            long_proj: Conv::pointwise(n("long_proj"), c, c / 2),
            attn: Conv::new(n("attn"), 2, 2, k.attn),
            attn_pw: Conv::pointwise(n("attn_pw"), c, c),
            detail_dw: Conv::depthwise(n("detail_dw"), c, k.detail),
            detail_pw: Conv::pointwise(n("detail_pw"), c, c),
            gate: GateWeights::new(n("gate")),
            channels: c,
            name,
        }
    }

    pub fn convs(&self) -> [&Conv; 10] {
        [
            &self.mid_dw,
            &self.mid_pw,
            &self.long_dw,
            &self.long_pw,
            &self.mid_proj,
            &self.long_proj,
            &self.attn,
            &self.attn_pw,
            &self.detail_dw,
            &self.detail_pw,
        ]
    }

    pub fn declare<T: Element>(&self, b: &mut Builder<'_, T>) -> Result<()> {
        self.convs().iter().try_for_each(|c| c.declare(b))?;
        self.gate.declare(b)
    }

    pub fn forward_parts<T: Element>(&self, s: &mut Session<'_, T>, x: Var) -> Result<SismParts> {
        let shape = s.shape(x);
        if shape.len() != 4 || shape[1] != self.channels {
            return Err(Error::shape(
                "sism",
                format!("`{}` expects [B,{},H,W], got {shape:?}", self.name, self.channels),
            ));
        }
        let lm = self.mid_dw.forward(s, x)?;
        let lm = self.mid_pw.forward(s, lm)?;
        let ll = self.long_dw.forward(s, lm)?;
        let ll = self.long_pw.forward(s, ll)?;

        let cm = self.mid_proj.forward(s, lm)?;
        let cl = self.long_proj.forward(s, ll)?;
        let cat = s.concat(&[cm, cl], 1)?;
        let mean = s.reduce(cat, 1, Reduce::Mean)?;
        let max = s.reduce(cat, 1, Reduce::Max)?;
        let pooled = s.concat(&[mean, max], 1)?;
        let attn = self.attn.forward(s, pooled)?;
        let attn = s.sigmoid(attn);
        s.probe(format!("{}.attn", self.name), attn);

        let a = s.split(attn, 1, &[1, 1])?;
        let lm2 = s.mul(lm, a[0])?;
        let ll2 = s.mul(ll, a[1])?;
        let sum = s.add(lm2, ll2)?;
        let sel = self.attn_pw.forward(s, sum)?;
        let large = s.mul(x, sel)?;

        let detail = self.detail_dw.forward(s, x)?;
        let detail = self.detail_pw.forward(s, detail)?;

        let (alpha, beta) = self.gate.raw(s)?;
        let d = s.mul(detail, alpha)?;
        let l = s.mul(large, beta)?;
        let out = s.add(x, d)?;
        let out = s.add(out, l)?;
        Ok(SismParts { attn, large, detail, out })
    }

    pub fn forward<T: Element>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        Ok(self.forward_parts(s, x)?.out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Graph;
    use crate::nn::{Mode, ParamStore};
    use crate::tensor::Tensor;

    fn setup(c: usize, seed: u64) -> (Sism, ParamStore<f64>) {
        let sism = Sism::new("sism", &BlockConfig::default().with_channels(c));
        let mut store = ParamStore::new();
        sism.declare(&mut Builder::new(&mut store, seed)).unwrap();
        (sism, store)
    }

    fn rand(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut r = crate::rng::Rng::new(seed);
        Tensor::from_fn(shape, |_| r.normal())
    }

    #[test]
    fn zero_gates_are_exact_identity() {
        let (sism, store) = setup(8, 1);
        let x = rand(&[2, 8, 7, 9], 2).cast::<f32>();
        let store = store.cast::<f32>();
        let mut g = Graph::new();
        let mut s = Session::new(&mut g, &store, Mode::Eval, false);
        let xv = s.constant(x.clone());
        let y = sism.forward(&mut s, xv).unwrap();
        assert!(s.value(y).bit_eq(&x));
    }

    #[test]
    fn attention_lies_in_unit_interval() {
        let (sism, store) = setup(4, 3);
        let mut g = Graph::new();
        let mut s = Session::new(&mut g, &store, Mode::Eval, false);
        let xv = s.constant(rand(&[1, 4, 8, 8], 4));
        let p = sism.forward_parts(&mut s, xv).unwrap();
        assert_eq!(s.shape(p.attn), &[1, 2, 8, 8]);
        assert!(s.value(p.attn).data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    // Straight-line scalar evaluation of the equation chain.
    struct Oracle<'a> {
        st: &'a ParamStore<f64>,
        h: usize,
        w: usize,
    }

    impl Oracle<'_> {
        fn conv(&self, conv: &Conv, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
            let wt = self.st.get(&conv.weight_name()).unwrap().data();
            let bias = self.st.get(&conv.bias_name()).unwrap().data();
            let (kh, kw) = conv.kernel;
            let (ph, pw) = conv.geom.padding;
            let cin_g = conv.cin / conv.geom.groups;
            let cout_g = conv.cout / conv.geom.groups;
            (0..conv.cout)
                .map(|o| {
                    let grp = o / cout_g;
                    let mut out = vec![bias[o]; self.h * self.w];
                    for y in 0..self.h {
                        for xx in 0..self.w {
                            let mut acc = 0.0;
                            for ci in 0..cin_g {
                                for dy in 0..kh {
                                    for dx in 0..kw {
                                        let sy = y as isize + dy as isize - ph as isize;
                                        let sx = xx as isize + dx as isize - pw as isize;
                                        if sy < 0 || sx < 0 || sy >= self.h as isize || sx >= self.w as isize {
                                            continue;
                                        }
                                        let wi = ((o * cin_g + ci) * kh + dy) * kw + dx;
                                        acc += wt[wi] * x[grp * cin_g + ci][sy as usize * self.w + sx as usize];
                                    }
                                }
                            }
                            out[y * self.w + xx] += acc;
                        }
                    }
                    out
                })
                .collect()
        }
    }

    #[test]
    fn matches_straight_line_oracle() {
        let (sism, mut store) = setup(4, 5);
        store.set(&sism.gate.alpha_name(), Tensor::new(&[1], vec![0.8]).unwrap()).unwrap();
        store.set(&sism.gate.beta_name(), Tensor::new(&[1], vec![-0.6]).unwrap()).unwrap();
        for conv in sism.convs() {
            let mut r = crate::rng::Rng::new(conv.name.len() as u64);
            store.set(&conv.bias_name(), Tensor::from_fn(&[conv.cout], |_| r.uniform(-0.2, 0.2))).unwrap();
        }
        let (c, h, w) = (4, 8, 8);
        let x = rand(&[1, c, h, w], 6);

        let mut g = Graph::new();
        let mut s = Session::new(&mut g, &store, Mode::Eval, false);
        let xv = s.constant(x.clone());
        let y = sism.forward(&mut s, xv).unwrap();
        let got = s.value(y).clone();

        let o = Oracle { st: &store, h, w };
        let xs: Vec<Vec<f64>> = x.data().chunks(h * w).map(|v| v.to_vec()).collect();
        let lm = o.conv(&sism.mid_pw, &o.conv(&sism.mid_dw, &xs));
        let ll = o.conv(&sism.long_pw, &o.conv(&sism.long_dw, &lm));
        let mut cat = o.conv(&sism.mid_proj, &lm);
        cat.extend(o.conv(&sism.long_proj, &ll));
        let n = h * w;
        let mean: Vec<f64> = (0..n).map(|p| cat.iter().map(|ch| ch[p]).sum::<f64>() / c as f64).collect();
        let max: Vec<f64> = (0..n).map(|p| cat.iter().map(|ch| ch[p]).fold(f64::MIN, f64::max)).collect();
        let attn: Vec<Vec<f64>> =
            o.conv(&sism.attn, &[mean, max]).into_iter().map(|ch| ch.into_iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect()).collect();
        let sum: Vec<Vec<f64>> = (0..c).map(|ch| (0..n).map(|p| lm[ch][p] * attn[0][p] + ll[ch][p] * attn[1][p]).collect()).collect();
        let sel = o.conv(&sism.attn_pw, &sum);
        let det = o.conv(&sism.detail_pw, &o.conv(&sism.detail_dw, &xs));
        for ch in 0..c {
            for p in 0..n {
                let want = xs[ch][p] + 0.8 * det[ch][p] + -0.6 * xs[ch][p] * sel[ch][p];
                assert!((got.data()[ch * n + p] - want).abs() < 1e-10, "ch {ch} p {p}");
            }
        }
    }
}
