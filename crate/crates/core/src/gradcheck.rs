//! Finite-difference verification of tape gradients.
//!
//! Each case builds a small random instance in `f64`. The scalar objective
//! is `sum(f(x) * r)` for a fixed random projection `r`, so every output
//! element contributes. Analytic gradients from [`Graph::backward`] are
//! compared with central differences at step `h = 1e-4 * (1 + |x|)`,
//! Richardson-extrapolated with the half step: `(4 D(h/2) - D(h)) / 3`.
//! That cancels the O(h^2) truncation term without probing beyond `x +- h`.
//!
//! Composites that take a max over computed values can land within `h` of
//! a tie, where no difference quotient approximates the one-sided adjoint.
//! Such coordinates are recognised from function values alone: the
//! first- and second-difference estimates at `h` and `h/2` disagree. They
//! are skipped and counted, so a wrong adjoint can never be excused by it.
//! A kink that slips through perturbs the estimate by at most a third of
//! the tolerance.

use crate::autograd::{AdjointFault, Graph, Var};
use crate::blocks::{channel_shuffle, BlockConfig, Cffm, Eca, Lcrm, LocalBranch, Sism, WindowAttention};
use crate::error::Result;
use crate::network::{DecoderConfig, Network};
use crate::nn::{Activation, Builder, Mode, NormKind, ParamStore, Session};
use crate::rng::Rng;
use crate::tensor::kernels::{Conv2dGeom, NormView, PoolGeom, PoolKind, Reduce, Unary};
use crate::tensor::Tensor;
use crate::training::{dice_loss, total_loss, AUX_WEIGHT, DICE_EPS, IGNORE_INDEX};

/// Relative-error bound for primitive ops.
pub const PRIMITIVE_TOL: f64 = 1e-5;
/// Relative-error bound for blocks and losses built from several ops.
pub const COMPOSITE_TOL: f64 = 1e-4;
/// Denominator floor of the relative error, so that entries whose true
/// gradient is (numerically) zero are compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-3;
/// Largest number of coordinates probed per input tensor.
pub const MAX_COORDS: usize = 48;
/// A case fails when more than this fraction of its probes are skipped as
/// non-smooth.
pub const MAX_SKIP_FRACTION: f64 = 0.1;

pub type Forward = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>;

/// One random instance: differentiable inputs and the function of them.
pub struct Instance {
    pub inputs: Vec<Tensor<f64>>,
    pub forward: Forward,
}

impl Instance {
    pub fn new(inputs: Vec<Tensor<f64>>, forward: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + 'static) -> Self {
        Instance { inputs, forward: Box::new(forward) }
    }
}

pub struct Case {
    pub name: &'static str,
    pub composite: bool,
    pub make: Box<dyn Fn(&mut Rng) -> Instance>,
}

impl Case {
    pub fn primitive(name: &'static str, make: impl Fn(&mut Rng) -> Instance + 'static) -> Self {
        Case { name, composite: false, make: Box::new(make) }
    }

    pub fn composite(name: &'static str, make: impl Fn(&mut Rng) -> Instance + 'static) -> Self {
        Case { name, composite: true, make: Box::new(make) }
    }

    pub fn tolerance(&self) -> f64 {
        if self.composite {
            COMPOSITE_TOL
        } else {
            PRIMITIVE_TOL
        }
    }
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub name: &'static str,
    pub instances: usize,
    pub coords: usize,
    /// Probes skipped as non-smooth; not counted in `coords`.
    pub skipped: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
    /// Set when backward itself failed (for example a missing adjoint).
    pub error: Option<String>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        let probes = (self.coords + self.skipped) as f64;
        self.error.is_none() && self.max_rel_err < self.tolerance && self.skipped as f64 <= MAX_SKIP_FRACTION * probes
    }
}

fn objective(inst: &Instance, xs: &[Tensor<f64>], proj: &Tensor<f64>) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = xs.iter().map(|x| g.constant(x.clone())).collect();
    let y = (inst.forward)(&mut g, &vars)?;
    let r = g.constant(proj.clone());
    let p = g.mul(y, r)?;
    let s = g.sum(p);
    Ok(g.value(s).item())
}

/// Per-instance result of [`check_instance`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Probe {
    pub max_rel_err: f64,
    pub compared: usize,
    pub skipped: usize,
}

/// Compares analytic and numeric gradients on sampled coordinates. `tol`
/// sets the smoothness threshold.
pub fn check_instance(inst: &Instance, rng: &mut Rng, fault: Option<AdjointFault>, tol: f64) -> Result<Probe> {
    let mut g = match fault {
        Some(f) => Graph::with_fault(f),
        None => Graph::new(),
    };
    let vars: Vec<Var> = inst.inputs.iter().map(|x| g.param(x.clone())).collect();
    let y = (inst.forward)(&mut g, &vars)?;
    let proj = Tensor::from_fn(g.shape(y), |_| rng.uniform(-1.0, 1.0));
    let r = g.constant(proj.clone());
    let p = g.mul(y, r)?;
    let loss = g.sum(p);
    let grads = g.backward(loss)?;

    let f0 = objective(inst, &inst.inputs, &proj)?;
    let mut res = Probe::default();
    for (i, x) in inst.inputs.iter().enumerate() {
        let n = x.numel();
        let coords: Vec<usize> = if n <= MAX_COORDS {
            (0..n).collect()
        } else {
            (0..MAX_COORDS).map(|_| rng.below(n)).collect()
        };
        for c in coords {
            let analytic = grads.get(vars[i]).map_or(0.0, |t| t.data()[c]);
            let x0 = x.data()[c];
            let h = 1e-4 * (1.0 + x0.abs());
            let mut xs: Vec<Tensor<f64>> = inst.inputs.to_vec();
            let mut at = |d: f64| {
                xs[i].data_mut()[c] = x0 + d;
                objective(inst, &xs, &proj)
            };
            let (p1, m1, p2, m2) = (at(h)?, at(-h)?, at(0.5 * h)?, at(-0.5 * h)?);
            let full = (p1 - m1) / (2.0 * h);
            let half = (p2 - m2) / h;
            let numeric = (4.0 * half - full) / 3.0;
            // h * (second difference at h - second difference at h/2).
            let curv = ((p1 - 2.0 * f0 + m1) - 4.0 * (p2 - 2.0 * f0 + m2)) / h;
            let scale = numeric.abs().max(REL_FLOOR);
            if (full - half).abs().max(curv.abs()) > tol * scale {
                res.skipped += 1;
                continue;
            }
            let denom = analytic.abs().max(numeric.abs()).max(REL_FLOOR);
            res.max_rel_err = res.max_rel_err.max((analytic - numeric).abs() / denom);
            res.compared += 1;
        }
    }
    Ok(res)
}

/// Runs `instances` random instances of `case`.
pub fn run_case(case: &Case, instances: usize, seed: u64, fault: Option<AdjointFault>) -> Outcome {
    let root = Rng::new(seed).fork_named(case.name);
    let mut out = Outcome {
        name: case.name,
        instances: 0,
        coords: 0,
        skipped: 0,
        max_rel_err: 0.0,
        tolerance: case.tolerance(),
        error: None,
    };
    for k in 0..instances {
        let mut rng = root.fork(k as u64);
        let inst = (case.make)(&mut rng);
        match check_instance(&inst, &mut rng, fault, out.tolerance) {
            Ok(p) => {
                out.max_rel_err = out.max_rel_err.max(p.max_rel_err);
                out.coords += p.compared;
                out.skipped += p.skipped;
                out.instances += 1;
            }
            Err(e) => {
                out.error = Some(e.to_string());
                break;
            }
        }
    }
    out
}

pub fn uniform(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.uniform(lo, hi))
}

/// Values in (-1, 1) bounded away from zero by `gap`.
pub fn away_from_zero(rng: &mut Rng, shape: &[usize], gap: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.uniform(gap, 1.0);
        if rng.coin() {
            m
        } else {
            -m
        }
    })
}

/// Distinct values spaced at least 0.05 apart, in random order, so that
/// max-type reductions have no ties within a finite-difference step.
pub fn distinct(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    let scale = 2.0 / n as f64;
    let base: Vec<f64> = idx.iter().map(|&i| -1.0 + i as f64 * scale.max(0.05)).collect();
    Tensor::new(shape, base).expect("shape is valid")
}

fn conv_case(
    name: &'static str,
    xs: [usize; 4],
    ws: [usize; 4],
    geom: Conv2dGeom,
    bias: bool,
) -> Case {
    Case::primitive(name, move |rng| {
        let mut inputs = vec![uniform(rng, &xs, -1.0, 1.0), uniform(rng, &ws, -1.0, 1.0)];
        if bias {
            inputs.push(uniform(rng, &[ws[0]], -1.0, 1.0));
        }
        Instance::new(inputs, move |g, v| g.conv2d(v[0], v[1], v.get(2).copied(), geom))
    })
}

fn unary_case(name: &'static str, u: Unary, gen: fn(&mut Rng, &[usize]) -> Tensor<f64>) -> Case {
    Case::primitive(name, move |rng| Instance::new(vec![gen(rng, &[2, 3, 4, 4])], move |g, v| Ok(g.unary(v[0], u))))
}

/// Finite-difference cases for every primitive op on the tape.
pub fn primitive_cases() -> Vec<Case> {
    let mut cases = vec![
        conv_case("conv2d", [2, 3, 5, 6], [4, 3, 3, 3], Conv2dGeom::same(3), true),
        conv_case(
            "conv2d_strided",
            [1, 2, 6, 5],
            [3, 2, 3, 3],
            Conv2dGeom { stride: (2, 2), padding: (1, 1), groups: 1 },
            true,
        ),
        conv_case(
            "conv2d_grouped",
            [2, 4, 4, 5],
            [4, 2, 3, 1],
            Conv2dGeom { stride: (1, 1), padding: (1, 0), groups: 2 },
            false,
        ),
        conv_case("conv2d_depthwise", [2, 3, 6, 6], [3, 1, 5, 5], Conv2dGeom::depthwise(5, 3), true),
        conv_case("conv2d_pointwise", [2, 4, 3, 3], [5, 4, 1, 1], Conv2dGeom::pointwise(), true),
    ];
    for (name, kind, gen) in [
        ("pool2d_avg", PoolKind::Avg, uniform_pm1 as fn(&mut Rng, &[usize]) -> Tensor<f64>),
        ("pool2d_max", PoolKind::Max, distinct),
    ] {
        cases.push(Case::primitive(name, move |rng| {
            Instance::new(vec![gen(rng, &[2, 3, 6, 6])], move |g, v| {
                let a = g.pool2d(v[0], PoolGeom::tiled(kind, (3, 1)))?;
                let b = g.pool2d(v[0], PoolGeom { kind, kernel: (2, 2), stride: (1, 1), padding: (1, 1) })?;
                let sa = g.sum(a);
                let sb = g.sum(b);
                // Combine both geometries into one objective through a concat.
                let ra = g.reshape(sa, &[1])?;
                let rb = g.reshape(sb, &[1])?;
                let (na, nb) = (g.value(a).numel(), g.value(b).numel());
                let pa = g.reshape(a, &[na])?;
                let pb = g.reshape(b, &[nb])?;
                g.concat(&[pa, pb, ra, rb], 0)
            })
        }));
    }
    for (name, kind) in [("reduce_mean", Reduce::Mean), ("reduce_max", Reduce::Max), ("reduce_sum", Reduce::Sum)] {
        cases.push(Case::primitive(name, move |rng| {
            Instance::new(vec![distinct(rng, &[2, 4, 3, 3])], move |g, v| g.reduce(v[0], 1, kind))
        }));
    }
    cases.push(Case::primitive("upsample_bilinear", |rng| {
        Instance::new(vec![uniform(rng, &[2, 2, 3, 4], -1.0, 1.0)], |g, v| {
            let a = g.upsample_bilinear(v[0], (6, 8))?;
            let b = g.upsample_bilinear(v[0], (7, 9))?;
            let a = g.reshape(a, &[2 * 2 * 6 * 8])?;
            let b = g.reshape(b, &[2 * 2 * 7 * 9])?;
            g.concat(&[a, b], 0)
        })
    }));
    cases.push(Case::primitive("softmax", |rng| {
        Instance::new(vec![uniform(rng, &[2, 4, 3, 3], -2.0, 2.0)], |g, v| {
            let a = g.softmax(v[0], 1)?;
            let b = g.softmax(v[0], 3)?;
            g.add(a, b)
        })
    }));
    cases.push(unary_case("sigmoid", Unary::Sigmoid, |r, s| uniform(r, s, -3.0, 3.0)));
    cases.push(unary_case("relu", Unary::Relu, |r, s| away_from_zero(r, s, 0.01)));
    cases.push(unary_case("gelu", Unary::Gelu, |r, s| uniform(r, s, -3.0, 3.0)));
    cases.push(unary_case("exp", Unary::Exp, |r, s| uniform(r, s, -2.0, 2.0)));
    cases.push(unary_case("ln", Unary::LnClamped, |r, s| uniform(r, s, 0.2, 2.0)));
    for name in ["add", "sub", "mul", "div"] {
        cases.push(Case::primitive(name, move |rng| {
            // Every operand can be a divisor, so keep them all away from zero.
            let a = away_from_zero(rng, &[2, 3, 4, 4], 0.5);
            let b = away_from_zero(rng, &[1, 3, 4, 1], 0.5);
            let c = away_from_zero(rng, &[2, 3, 4, 4], 0.5);
            Instance::new(vec![a, b, c], move |g, v| {
                let f = |g: &mut Graph<f64>, x: Var, y: Var| match name {
                    "add" => g.add(x, y),
                    "sub" => g.sub(x, y),
                    "mul" => g.mul(x, y),
                    _ => g.div(x, y),
                };
                // Broadcast in both operand positions and the same-shape path.
                let p = f(g, v[0], v[1])?;
                let q = f(g, v[1], v[0])?;
                let r = f(g, v[0], v[2])?;
                let s = g.add(p, q)?;
                g.add(s, r)
            })
        }));
    }
    cases.push(Case::primitive("scale", |rng| {
        Instance::new(vec![uniform(rng, &[3, 4], -1.0, 1.0)], |g, v| Ok(g.scale(v[0], -2.5)))
    }));
    cases.push(Case::primitive("add_scalar", |rng| {
        Instance::new(vec![uniform(rng, &[3, 4], -1.0, 1.0)], |g, v| Ok(g.add_scalar(v[0], 0.75)))
    }));
    cases.push(Case::primitive("reshape", |rng| {
        Instance::new(vec![uniform(rng, &[2, 3, 4], -1.0, 1.0)], |g, v| g.reshape(v[0], &[4, 6]))
    }));
    cases.push(Case::primitive("permute", |rng| {
        Instance::new(vec![uniform(rng, &[2, 3, 4, 5], -1.0, 1.0)], |g, v| g.permute(v[0], &[2, 0, 3, 1]))
    }));
    cases.push(Case::primitive("expand", |rng| {
        Instance::new(vec![uniform(rng, &[2, 1, 3, 1], -1.0, 1.0)], |g, v| g.expand(v[0], &[2, 4, 3, 5]))
    }));
    cases.push(Case::primitive("concat", |rng| {
        let a = uniform(rng, &[2, 2, 3, 3], -1.0, 1.0);
        let b = uniform(rng, &[2, 3, 3, 3], -1.0, 1.0);
        Instance::new(vec![a, b], |g, v| g.concat(&[v[0], v[1], v[0]], 1))
    }));
    cases.push(Case::primitive("split", |rng| {
        Instance::new(vec![uniform(rng, &[2, 5, 3, 3], -1.0, 1.0)], |g, v| {
            let parts = g.split(v[0], 1, &[2, 3])?;
            let a = g.scale(parts[0], 2.0);
            let b = g.narrow(parts[1], 1, 1, 2)?;
            g.concat(&[b, a], 1)
        })
    }));
    cases.push(Case::primitive("pad", |rng| {
        Instance::new(vec![uniform(rng, &[2, 2, 3, 5], -1.0, 1.0)], |g, v| g.pad_bottom_right(v[0], 2, 1))
    }));
    for (ta, tb) in [(false, false), (false, true), (true, false), (true, true)] {
        let name = match (ta, tb) {
            (false, false) => "batched_matmul",
            (false, true) => "batched_matmul_nt",
            (true, false) => "batched_matmul_tn",
            (true, true) => "batched_matmul_tt",
        };
        cases.push(Case::primitive(name, move |rng| {
            let a = if ta { [3, 4, 2] } else { [3, 2, 4] };
            let b = if tb { [3, 5, 4] } else { [3, 4, 5] };
            let a = uniform(rng, &a, -1.0, 1.0);
            let b = uniform(rng, &b, -1.0, 1.0);
            Instance::new(vec![a, b], move |g, v| g.matmul_t(v[0], v[1], ta, tb))
        }));
    }
    cases.push(Case::primitive("sum", |rng| {
        Instance::new(vec![uniform(rng, &[3, 4], -1.0, 1.0)], |g, v| {
            let s = g.sum(v[0]);
            let m = g.mean(v[0]);
            let s = g.reshape(s, &[1])?;
            let m = g.reshape(m, &[1])?;
            g.concat(&[s, m], 0)
        })
    }));
    cases.push(Case::primitive("normalize", |rng| {
        Instance::new(vec![uniform(rng, &[3, 4, 2, 3], -1.0, 1.0)], |g, v| {
            let (a, _) = g.normalize(v[0], NormView { a: 3, m: 4, i: 6 }, 1e-5)?;
            let (b, _) = g.normalize(v[0], NormView { a: 1, m: 6, i: 12 }, 1e-5)?;
            g.add(a, b)
        })
    }));
    cases.push(Case::primitive("cross_entropy", |rng| {
        let labels: Vec<u32> = (0..2 * 3 * 3).map(|_| if rng.below(6) == 0 { 255 } else { rng.below(4) as u32 }).collect();
        let mut labels = labels;
        labels[0] = 1;
        Instance::new(vec![uniform(rng, &[2, 4, 3, 3], -2.0, 2.0)], move |g, v| g.cross_entropy(v[0], &labels, 255))
    }));
    cases
}

/// Builds a case for a parameterized block. Every learned parameter becomes
/// a checked input, redrawn uniformly so that zero-initialized gates and
/// biases are exercised too.
fn block_case<B: 'static>(
    name: &'static str,
    block: B,
    declare: impl Fn(&B, &mut Builder<'_, f64>) -> Result<()> + 'static,
    shapes: Vec<Vec<usize>>,
    forward: impl Fn(&B, &mut Session<'_, f64>, &[Var]) -> Result<Var> + 'static,
) -> Case {
    let block = std::rc::Rc::new(block);
    let forward = std::rc::Rc::new(forward);
    Case::composite(name, move |rng| {
        let mut store = ParamStore::new();
        declare(&block, &mut Builder::new(&mut store, rng.next_u64())).expect("block declaration is valid");
        let mut inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| uniform(rng, s, -1.0, 1.0)).collect();
        let names: Vec<String> = store.params().map(|e| e.name.clone()).collect();
        for n in &names {
            inputs.push(uniform(rng, store.require(n).expect("declared").shape(), -0.5, 0.5));
        }
        let n_in = shapes.len();
        let (block, forward) = (block.clone(), forward.clone());
        Instance::new(inputs, move |g, v| {
            let mut s = Session::new(g, &store, Mode::Train, false);
            for (n, &var) in names.iter().zip(&v[n_in..]) {
                s.bind(n, var);
            }
            forward(&block, &mut s, &v[..n_in])
        })
    })
}

fn smooth(cfg: BlockConfig) -> BlockConfig {
    BlockConfig { activation: Activation::Gelu, norm: NormKind::Batch, ..cfg }
}

/// Finite-difference cases for the decoder blocks, in `f64` with GELU so
/// that no activation kink sits inside a difference step.
pub fn block_cases() -> Vec<Case> {
    let base = smooth(BlockConfig::default());
    vec![
        block_case("eca", Eca::new("eca", 3), |b, p| b.declare(p), vec![vec![2, 5, 3, 4]], |b, s, x| b.forward(s, x[0])),
        block_case(
            "cffm",
            Cffm::new("cffm", &base.with_channels(4), 3),
            |b, p| b.declare(p),
            vec![vec![2, 4, 3, 3], vec![2, 3, 6, 6]],
            |b, s, x| b.forward(s, x[0], x[1]),
        ),
        block_case(
            "window_attention",
            WindowAttention::new("att", 4, 3, 2),
            |b, p| b.declare(p),
            vec![vec![1, 4, 5, 4]],
            |b, s, x| b.forward(s, x[0]),
        ),
        block_case("local_branch", LocalBranch::new("local", 4), |b, p| b.declare(p), vec![vec![2, 4, 5, 5]], |b, s, x| {
            b.forward(s, x[0])
        }),
        block_case("channel_shuffle", (), |_, _| Ok(()), vec![vec![2, 6, 3, 3]], |_, s, x| channel_shuffle(s, x[0], 3)),
        block_case(
            "lcrm",
            Lcrm::new("lcrm", &BlockConfig { window_size: 2, heads: 2, ..base.with_channels(8) }),
            |b, p| b.declare(p),
            vec![vec![1, 8, 4, 6]],
            |b, s, x| b.forward(s, x[0]),
        ),
        block_case("sism", Sism::new("sism", &base.with_channels(4)), |b, p| b.declare(p), vec![vec![1, 4, 6, 6]], |b, s, x| {
            b.forward(s, x[0])
        }),
    ]
}

fn random_labels(rng: &mut Rng, n: usize, k: usize) -> Vec<u32> {
    let mut labels: Vec<u32> = (0..n).map(|_| if rng.below(8) == 0 { IGNORE_INDEX } else { rng.below(k) as u32 }).collect();
    labels[0] = 0;
    labels
}

/// Tiny network used by the end-to-end loss check.
pub fn tiny_network_config() -> DecoderConfig {
    DecoderConfig {
        in_channels: 3,
        encoder_channels: [4, 8, 8, 8],
        decode_channels: 8,
        num_classes: 3,
        block: BlockConfig { window_size: 4, heads: 2, ..smooth(BlockConfig::default()) },
        aux_heads: true,
    }
}

/// Finite-difference cases for the losses, including the full objective
/// through the whole network at `B=1, K=3, 32x32`. In the network case the
/// image and a few parameters of every decoder block are checked; all other
/// parameters are held fixed at random values.
pub fn loss_cases() -> Vec<Case> {
    let mut cases = vec![Case::composite("dice_loss", |rng| {
        let labels = random_labels(rng, 2 * 3 * 4, 4);
        Instance::new(vec![uniform(rng, &[2, 4, 3, 4], -2.0, 2.0)], move |g, v| {
            let p = g.softmax(v[0], 1)?;
            dice_loss(g, p, &labels, IGNORE_INDEX, DICE_EPS)
        })
    })];
    cases.push(Case::composite("total_loss", |rng| {
        let labels = random_labels(rng, 2 * 3 * 4, 3);
        let inputs = (0..4).map(|_| uniform(rng, &[2, 3, 3, 4], -2.0, 2.0)).collect();
        Instance::new(inputs, move |g, v| {
            Ok(total_loss(g, v[0], &v[1..], &labels, IGNORE_INDEX, AUX_WEIGHT, Mode::Train)?.total)
        })
    }));
    cases.push(Case::composite("network_total_loss", |rng| {
        let cfg = tiny_network_config();
        let net = Network::new(&cfg).expect("tiny config is valid");
        let mut store = ParamStore::new();
        net.declare(&mut Builder::new(&mut store, rng.next_u64())).expect("declaration is valid");
        let names: Vec<String> = store.params().map(|e| e.name.clone()).collect();
        for n in &names {
            let shape = store.require(n).expect("declared").shape().to_vec();
            store.set(n, uniform(rng, &shape, -0.5, 0.5)).expect("same shape");
        }
        let checked: Vec<String> = names
            .iter()
            .filter(|n| {
                n.starts_with("decoder.")
                    && (n.ends_with("gate.alpha")
                        || n.ends_with("gate.beta")
                        || n.ends_with("fusion.weight")
                        || n.ends_with("qkv.weight")
                        || n.ends_with("proj.weight")
                        || n.ends_with("eca.conv.weight")
                        || n.ends_with("attn.weight")
                        || n.starts_with("decoder.head"))
            })
            .cloned()
            .collect();
        let labels = random_labels(rng, 32 * 32, 3);
        let mut inputs = vec![uniform(rng, &[1, 3, 32, 32], -1.0, 1.0)];
        inputs.extend(checked.iter().map(|n| store.require(n).expect("declared").clone()));
        Instance::new(inputs, move |g, v| {
            let mut s = Session::new(g, &store, Mode::Train, false);
            for (n, &var) in checked.iter().zip(&v[1..]) {
                s.bind(n, var);
            }
            let out = net.forward(&mut s, v[0])?;
            Ok(total_loss(&mut s, out.logits, &out.aux, &labels, IGNORE_INDEX, AUX_WEIGHT, Mode::Train)?.total)
        })
    }));
    cases
}

/// Every finite-difference case: primitives, blocks and losses.
pub fn all_cases() -> Vec<Case> {
    let mut cases = primitive_cases();
    cases.extend(block_cases());
    cases.extend(loss_cases());
    cases
}

fn uniform_pm1(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    uniform(rng, shape, -1.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_primitive_passes() {
        for case in primitive_cases() {
            let out = run_case(&case, 5, 2024, None);
            assert!(out.passed(), "{}: err {:e} ({:?})", out.name, out.max_rel_err, out.error);
            assert_eq!(out.instances, 5);
        }
    }

    #[test]
    fn every_block_passes() {
        for case in block_cases() {
            let out = run_case(&case, 5, 2024, None);
            assert!(out.passed(), "{}: err {:e} ({:?})", out.name, out.max_rel_err, out.error);
        }
    }

    #[test]
    fn every_loss_passes() {
        for case in loss_cases() {
            let out = run_case(&case, 5, 2024, None);
            assert!(out.passed(), "{}: err {:e} ({:?})", out.name, out.max_rel_err, out.error);
        }
    }

    #[test]
    fn corrupted_adjoint_is_caught() {
        let case = primitive_cases().into_iter().find(|c| c.name == "conv2d").unwrap();
        let out = run_case(&case, 1, 1, Some(AdjointFault::Corrupt("conv2d")));
        assert!(!out.passed());
        assert!(out.max_rel_err > 0.1);
        assert_eq!(out.skipped, 0);
    }

    #[test]
    fn near_tie_is_skipped_not_compared() {
        // Channels 0 and 1 differ by much less than the probe step.
        let x = Tensor::new(&[1, 3, 1, 1], vec![0.5, 0.5 + 1e-6, -0.2]).unwrap();
        let inst = Instance::new(vec![x], |g, v| g.reduce(v[0], 1, Reduce::Max));
        let p = check_instance(&inst, &mut Rng::new(3), None, PRIMITIVE_TOL).unwrap();
        assert_eq!((p.compared, p.skipped), (1, 2));
        assert!(p.max_rel_err < 1e-9);

        let smooth = Instance::new(vec![Tensor::new(&[3], vec![0.1, -0.4, 0.9]).unwrap()], |g, v| Ok(g.unary(v[0], Unary::Exp)));
        let p = check_instance(&smooth, &mut Rng::new(3), None, PRIMITIVE_TOL).unwrap();
        assert_eq!((p.compared, p.skipped), (3, 0));
    }

    #[test]
    fn missing_adjoint_is_reported() {
        let case = primitive_cases().into_iter().find(|c| c.name == "softmax").unwrap();
        let out = run_case(&case, 1, 1, Some(AdjointFault::Missing("softmax")));
        assert!(out.error.unwrap().contains("softmax"));
    }
}
