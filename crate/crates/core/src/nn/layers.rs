use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::tensor::kernels::{Conv2dGeom, NormView, Unary};
use crate::tensor::{Element, Tensor};

use super::params::{Builder, Init};
use super::session::{Mode, Session};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
/// Preferred group count for group normalization; falls back to
/// `gcd(C, 8)` when `C` is not a multiple of it.
pub const GN_GROUPS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NormKind {
    Batch,
    Group,
    None,
}

impl NormKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "batch" => Some(NormKind::Batch),
            "group" => Some(NormKind::Group),
            "none" => Some(NormKind::None),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NormKind::Batch => "batch",
            NormKind::Group => "group",
            NormKind::None => "none",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Gelu,
}

impl Activation {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "gelu" => Some(Activation::Gelu),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Gelu => "gelu",
        }
    }

    pub fn apply<T: Element>(self, s: &mut Session<'_, T>, x: Var) -> Var {
        match self {
            Activation::Relu => s.unary(x, Unary::Relu),
            Activation::Gelu => s.unary(x, Unary::Gelu),
        }
    }
}

/// 2-D convolution layer with optional bias.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Conv {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub kernel: (usize, usize),
    pub geom: Conv2dGeom,
    pub bias: bool,
}

impl Conv {
    /// Square kernel, stride 1, "same" padding, dense.
    pub fn new(name: impl Into<String>, cin: usize, cout: usize, k: usize) -> Self {
        Conv { name: name.into(), cin, cout, kernel: (k, k), geom: Conv2dGeom::same(k), bias: true }
    }

    pub fn pointwise(name: impl Into<String>, cin: usize, cout: usize) -> Self {
        Self::new(name, cin, cout, 1)
    }

    pub fn depthwise(name: impl Into<String>, c: usize, k: usize) -> Self {
        Conv { name: name.into(), cin: c, cout: c, kernel: (k, k), geom: Conv2dGeom::depthwise(k, c), bias: true }
    }

    pub fn strided(mut self, stride: usize) -> Self {
        self.geom.stride = (stride, stride);
        self
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.cout, self.cin / self.geom.groups, self.kernel.0, self.kernel.1]
    }

    pub fn fan_in(&self) -> usize {
        self.cin / self.geom.groups * self.kernel.0 * self.kernel.1
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn declare<T: Element>(&self, b: &mut Builder<'_, T>) -> Result<()> {
        b.kaiming(self.weight_name(), &self.weight_shape(), self.fan_in())?;
        if self.bias {
            b.zeros(self.bias_name(), &[self.cout])?;
        }
        Ok(())
    }

    pub fn forward<T: Element>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let w = s.param(&self.weight_name())?;
        let b = if self.bias { Some(s.param(&self.bias_name())?) } else { None };
        s.conv2d(x, w, b, self.geom)
    }
}

/// Normalization over `[B, C, H, W]` with a per-channel affine transform.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Norm {
    pub name: String,
    pub channels: usize,
    pub kind: NormKind,
}

pub fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl Norm {
    pub fn new(name: impl Into<String>, channels: usize, kind: NormKind) -> Self {
        Norm { name: name.into(), channels, kind }
    }

    pub fn groups(&self) -> usize {
        gcd(self.channels, GN_GROUPS)
    }

    pub fn declare<T: Element>(&self, b: &mut Builder<'_, T>) -> Result<()> {
        if self.kind == NormKind::None {
            return Ok(());
        }
        b.ones(format!("{}.weight", self.name), &[self.channels])?;
        b.zeros(format!("{}.bias", self.name), &[self.channels])?;
        if self.kind == NormKind::Batch {
            b.buffer(format!("{}.running_mean", self.name), Tensor::zeros(&[self.channels]), Init::Zeros)?;
            b.buffer(format!("{}.running_var", self.name), Tensor::ones(&[self.channels]), Init::Ones)?;
        }
        Ok(())
    }

    pub fn forward<T: Element>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        if self.kind == NormKind::None {
            return Ok(x);
        }
        let shape = s.shape(x).to_vec();
        if shape.len() != 4 || shape[1] != self.channels {
            return Err(Error::shape(
                "norm",
                format!("`{}` expects [B,{},H,W], got {shape:?}", self.name, self.channels),
            ));
        }
        let (b, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
        let xhat = match (self.kind, s.mode) {
            (NormKind::Batch, Mode::Train) => {
                let (y, stats) = s.normalize(x, NormView { a: b, m: c, i: hw }, BN_EPS)?;
                s.norm_stats.push((self.name.clone(), stats));
                y
            }
            (NormKind::Batch, Mode::Eval) => {
                let mean = s.stored(&format!("{}.running_mean", self.name))?.reshape(&[1, c, 1, 1])?;
                let var = s.stored(&format!("{}.running_var", self.name))?;
                let inv = var.map(|v| T::one() / (v + T::of(BN_EPS)).sqrt()).reshape(&[1, c, 1, 1])?;
                let m = s.constant(mean);
                let i = s.constant(inv);
                let centered = s.sub(x, m)?;
                s.mul(centered, i)?
            }
            (NormKind::Group, _) => {
                let g = self.groups();
                s.normalize(x, NormView { a: 1, m: b * g, i: c / g * hw }, BN_EPS)?.0
            }
            (NormKind::None, _) => unreachable!(),
        };
        let gamma = s.param(&format!("{}.weight", self.name))?;
        let beta = s.param(&format!("{}.bias", self.name))?;
        let gamma = s.reshape(gamma, &[1, c, 1, 1])?;
        let beta = s.reshape(beta, &[1, c, 1, 1])?;
        let y = s.mul(xhat, gamma)?;
        s.add(y, beta)
    }
}

/// Convolution, then optional normalization, then optional activation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvNormAct {
    pub conv: Conv,
    pub norm: Norm,
    pub act: Option<Activation>,
}

impl ConvNormAct {
    pub fn new(conv: Conv, norm: NormKind, act: Option<Activation>) -> Self {
        let norm = Norm::new(format!("{}.norm", conv.name), conv.cout, norm);
        ConvNormAct { conv, norm, act }
    }

    pub fn declare<T: Element>(&self, b: &mut Builder<'_, T>) -> Result<()> {
        self.conv.declare(b)?;
        self.norm.declare(b)
    }

    pub fn forward<T: Element>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(s, x)?;
        let y = self.norm.forward(s, y)?;
        Ok(match self.act {
            Some(a) => a.apply(s, y),
            None => y,
        })
    }
}

/// Folds the batch statistics recorded during a training forward into the
/// running statistics: `r <- (1 - m) r + m * batch`, with the unbiased
/// batch variance.
pub fn update_running_stats<T: Element>(
    store: &mut super::params::ParamStore<T>,
    stats: &[(String, crate::tensor::kernels::NormStats<T>)],
) -> Result<()> {
    let m = T::of(BN_MOMENTUM);
    for (name, st) in stats {
        let n = st.count as f64;
        let unbias = T::of(if n > 1.0 { n / (n - 1.0) } else { 1.0 });
        let mean_name = format!("{name}.running_mean");
        let var_name = format!("{name}.running_var");
        let rm = store.require(&mean_name)?;
        let rv = store.require(&var_name)?;
        let new_m: Vec<T> = rm.data().iter().zip(&st.mean).map(|(&r, &b)| (T::one() - m) * r + m * b).collect();
        let new_v: Vec<T> = rv.data().iter().zip(&st.var).map(|(&r, &b)| (T::one() - m) * r + m * b * unbias).collect();
        let shape = rm.shape().to_vec();
        store.set(&mean_name, Tensor::new(&shape, new_m)?)?;
        store.set(&var_name, Tensor::new(&shape, new_v)?)?;
    }
    Ok(())
}
