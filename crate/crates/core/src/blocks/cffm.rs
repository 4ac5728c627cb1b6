use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{Builder, Conv, ConvNormAct, Session};
use crate::tensor::Element;

use super::config::BlockConfig;
use super::eca::Eca;

/// Pair of learned scalars `(alpha, beta)`, both initialized to zero.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GateWeights {
    pub name: String,
}

impl GateWeights {
    pub fn new(name: impl Into<String>) -> Self {
        GateWeights { name: name.into() }
    }

    pub fn alpha_name(&self) -> String {
        format!("{}.alpha", self.name)
    }

    pub fn beta_name(&self) -> String {
        format!("{}.beta", self.name)
    }

    pub fn declare<T: Element>(&self, b: &mut Builder<'_, T>) -> Result<()> {
        b.zeros(self.alpha_name(), &[1])?;
        b.zeros(self.beta_name(), &[1])
    }

    /// Raw `(alpha, beta)` as `[1,1,1,1]` variables.
    pub fn raw<T: Element>(&self, s: &mut Session<'_, T>) -> Result<(Var, Var)> {
        let a = s.param(&self.alpha_name())?;
        let b = s.param(&self.beta_name())?;
        Ok((s.reshape(a, &[1, 1, 1, 1])?, s.reshape(b, &[1, 1, 1, 1])?))
    }

    /// Softmax-normalized `(w_x, w_y)` as `[1,1,1,1]` variables.
    pub fn softmax<T: Element>(&self, s: &mut Session<'_, T>) -> Result<(Var, Var)> {
        let a = s.param(&self.alpha_name())?;
        let b = s.param(&self.beta_name())?;
        let ab = s.concat(&[a, b], 0)?;
        let w = s.softmax(ab, 0)?;
        let wx = s.narrow(w, 0, 0, 1)?;
        let wy = s.narrow(w, 0, 1, 1)?;
        Ok((s.reshape(wx, &[1, 1, 1, 1])?, s.reshape(wy, &[1, 1, 1, 1])?))
    }
}

/// Closed-form gate weights, shifted by the max for stability.
pub fn gate_weights(alpha: f64, beta: f64) -> (f64, f64) {
    let m = alpha.max(beta);
    let (ea, eb) = ((alpha - m).exp(), (beta - m).exp());
    (ea / (ea + eb), eb / (ea + eb))
}

/// Cross-scale fusion of a deep feature `X` (half resolution) with a
/// shallow skip feature `Y`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cffm {
    pub name: String,
    pub proj: Conv,
    pub gate: GateWeights,
    pub refine: ConvNormAct,
    pub eca: Eca,
}

impl Cffm {
    /// `skip_channels` is the channel count of `Y` before projection.
    pub fn new(name: impl Into<String>, cfg: &BlockConfig, skip_channels: usize) -> Self {
        let name = name.into();
        let c = cfg.channels;
        Cffm {
            proj: Conv::pointwise(format!("{name}.proj"), skip_channels, c),
            gate: GateWeights::new(format!("{name}.gate")),
            refine: ConvNormAct::new(Conv::new(format!("{name}.refine"), c, c, 3), cfg.norm, Some(cfg.activation)),
            eca: Eca::new(format!("{name}.eca"), cfg.eca_kernel),
            name,
        }
    }

    pub fn declare<T: Element>(&self, b: &mut Builder<'_, T>) -> Result<()> {
        self.proj.declare(b)?;
        self.gate.declare(b)?;
        self.refine.declare(b)?;
        self.eca.declare(b)
    }

    /// Gated sum `w_x * up(X) + w_y * proj(Y)` before refinement.
    pub fn fuse<T: Element>(&self, s: &mut Session<'_, T>, deep: Var, skip: Var) -> Result<Var> {
        let ds = s.shape(deep).to_vec();
        let ss = s.shape(skip).to_vec();
        if ds.len() != 4 || ss.len() != 4 || ds[0] != ss[0] {
            return Err(Error::shape("cffm", format!("deep {ds:?} and skip {ss:?} must be [B,C,H,W] with equal B")));
        }
        if ds[2] * 2 != ss[2] || ds[3] * 2 != ss[3] {
            return Err(Error::shape(
                "cffm",
                format!("deep feature {}x{} must be exactly half of skip {}x{}", ds[2], ds[3], ss[2], ss[3]),
            ));
        }
        if ds[1] != self.proj.cout {
            return Err(Error::shape("cffm", format!("deep feature has {} channels, expected {}", ds[1], self.proj.cout)));
        }
        let up = s.upsample_bilinear(deep, (ss[2], ss[3]))?;
        let y = self.proj.forward(s, skip)?;
        let (wx, wy) = self.gate.softmax(s)?;
        let a = s.mul(up, wx)?;
        let b = s.mul(y, wy)?;
        s.add(a, b)
    }

    pub fn forward<T: Element>(&self, s: &mut Session<'_, T>, deep: Var, skip: Var) -> Result<Var> {
        let f = self.fuse(s, deep, skip)?;
        let f = self.refine.forward(s, f)?;
        self.eca.forward(s, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Graph;
    use crate::nn::{Mode, ParamStore};
    use crate::tensor::Tensor;
    use proptest::prelude::*;

    fn setup(alpha: f64, beta: f64) -> (Cffm, ParamStore<f64>) {
        let cfg = BlockConfig::default().with_channels(4);
        let cffm = Cffm::new("cffm", &cfg, 4);
        let mut store = ParamStore::new();
        cffm.declare(&mut Builder::new(&mut store, 3)).unwrap();
        store.set(&cffm.gate.alpha_name(), Tensor::scalar(alpha).reshape(&[1]).unwrap()).unwrap();
        store.set(&cffm.gate.beta_name(), Tensor::scalar(beta).reshape(&[1]).unwrap()).unwrap();
        (cffm, store)
    }

    fn fused(cffm: &Cffm, store: &ParamStore<f64>, deep: Tensor<f64>, skip: Tensor<f64>) -> Result<(Tensor<f64>, Tensor<f64>, Tensor<f64>)> {
        let mut g = Graph::new();
        let mut s = Session::new(&mut g, store, Mode::Eval, false);
        let d = s.constant(deep);
        let k = s.constant(skip);
        let f = cffm.fuse(&mut s, d, k)?;
        let up = s.upsample_bilinear(d, (4, 4))?;
        let y = cffm.proj.forward(&mut s, k)?;
        Ok((s.value(f).clone(), s.value(up).clone(), s.value(y).clone()))
    }

    fn inputs() -> (Tensor<f64>, Tensor<f64>) {
        (
            Tensor::from_fn(&[1, 4, 2, 2], |i| (i as f64 * 0.37).sin()),
            Tensor::from_fn(&[1, 4, 4, 4], |i| (i as f64 * 0.11).cos()),
        )
    }

    #[test]
    fn equal_gates_average_the_streams() {
        let (cffm, store) = setup(0.7, 0.7);
        let (d, k) = inputs();
        let (f, up, y) = fused(&cffm, &store, d, k).unwrap();
        for i in 0..f.numel() {
            assert!((f.data()[i] - 0.5 * (up.data()[i] + y.data()[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn saturated_gate_selects_deep_stream() {
        let (wx, _) = gate_weights(20.0, 0.0);
        assert!(wx >= 1.0 - 1e-8);
        let (cffm, store) = setup(20.0, 0.0);
        let (d, k) = inputs();
        let (f, up, _) = fused(&cffm, &store, d, k).unwrap();
        assert!(f.max_abs_diff(&up) < 1e-7);
    }

    #[test]
    fn full_forward_shape_and_ratio_check() {
        let (cffm, store) = setup(0.0, 0.0);
        let (d, k) = inputs();
        let mut g = Graph::new();
        let mut s = Session::new(&mut g, &store, Mode::Train, true);
        let dv = s.constant(d);
        let kv = s.constant(k.clone());
        let y = cffm.forward(&mut s, dv, kv).unwrap();
        assert_eq!(s.shape(y), &[1, 4, 4, 4]);
        let bad = s.constant(Tensor::zeros(&[1, 4, 3, 3]));
        assert!(cffm.forward(&mut s, bad, kv).is_err());
        let same = s.constant(k);
        assert!(cffm.forward(&mut s, same, kv).is_err());
    }

    proptest! {
        #[test]
        fn gate_weights_partition_unity(a in -50.0f64..50.0, b in -50.0f64..50.0) {
            let (wx, wy) = gate_weights(a, b);
            prop_assert!((wx + wy - 1.0).abs() <= 1e-7);
            prop_assert!(wx >= 0.0 && wy >= 0.0);
            if (a - b).abs() < 30.0 {
                prop_assert!(wx > 0.0 && wx < 1.0);
            }
            if a > b { prop_assert!(wx > wy) }
            if b > a { prop_assert!(wy > wx) }
        }

        #[test]
        fn graph_gate_matches_closed_form(a in -10.0f64..10.0, b in -10.0f64..10.0) {
            let gate = GateWeights::new("g");
            let mut store = ParamStore::new();
            gate.declare(&mut Builder::new(&mut store, 0)).unwrap();
            store.set("g.alpha", Tensor::new(&[1], vec![a]).unwrap()).unwrap();
            store.set("g.beta", Tensor::new(&[1], vec![b]).unwrap()).unwrap();
            let mut g = Graph::new();
            let mut s = Session::new(&mut g, &store, Mode::Eval, false);
            let (wx, wy) = gate.softmax(&mut s).unwrap();
            let (ex, ey) = gate_weights(a, b);
            prop_assert!((s.value(wx).item() - ex).abs() < 1e-12);
            prop_assert!((s.value(wy).item() - ey).abs() < 1e-12);
        }
    }
}
