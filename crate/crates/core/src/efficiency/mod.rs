//! Analytic parameter and multiply-accumulate accounting.
//!
//! Costs are derived from configurations alone, without building the
//! network, so they serve as an independent check on parameter
//! declaration. One MAC counts as two FLOPs. Operations that are not
//! multiply-accumulates (bias adds, normalization, activations, softmax,
//! pooling, resampling, gating products) are tallied in `other_ops` at one
//! op per element touched, except softmax (3 per logit) and bilinear
//! resampling (7 per output value).

mod report;

pub use report::{channel_table_csv, channel_table_text, report_channel_management, ChannelRow, REFERENCE_SHAPES};

use crate::blocks::BlockConfig;
use crate::network::DecoderConfig;
use crate::nn::NormKind;

/// Cost of one leaf layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerCost {
    pub name: String,
    pub params: u64,
    pub macs: u64,
    pub other_ops: u64,
}

impl LayerCost {
    pub fn flops(&self) -> u64 {
        2 * self.macs
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Totals {
    pub params: u64,
    pub macs: u64,
    pub flops: u64,
    pub other_ops: u64,
}

/// Per-layer cost table in forward order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CostReport {
    pub rows: Vec<LayerCost>,
}

impl CostReport {
    pub fn totals(&self) -> Totals {
        self.sum(|_| true)
    }

    /// Totals over rows whose name starts with `prefix`.
    pub fn under(&self, prefix: &str) -> Totals {
        self.sum(|r| r.name.starts_with(prefix))
    }

    fn sum(&self, keep: impl Fn(&LayerCost) -> bool) -> Totals {
        self.rows.iter().filter(|r| keep(r)).fold(Totals::default(), |t, r| Totals {
            params: t.params + r.params,
            macs: t.macs + r.macs,
            flops: t.flops + r.flops(),
            other_ops: t.other_ops + r.other_ops,
        })
    }

    pub fn extend(&mut self, other: CostReport) {
        self.rows.extend(other.rows);
    }

    /// `layer,params,macs,flops` with a trailing `total` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,params,macs,flops\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{}\n", r.name, r.params, r.macs, r.flops()));
        }
        let t = self.totals();
        s.push_str(&format!("total,{},{},{}\n", t.params, t.macs, t.flops));
        s
    }

    /// Aligned table; non-MAC op counts are listed in their own column.
    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(5).max(5);
        let mut s = format!("{:<width$}  {:>12}  {:>16}  {:>16}  {:>14}\n", "layer", "params", "macs", "flops", "non-mac ops");
        let line = |name: &str, p: u64, m: u64, f: u64, o: u64| {
            format!("{name:<width$}  {p:>12}  {m:>16}  {f:>16}  {o:>14}\n")
        };
        for r in &self.rows {
            s.push_str(&line(&r.name, r.params, r.macs, r.flops(), r.other_ops));
        }
        let t = self.totals();
        s.push_str(&line("total", t.params, t.macs, t.flops, t.other_ops));
        s
    }
}

/// Batch and spatial extent of an activation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Extent {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
}

impl Extent {
    pub fn new(batch: usize, height: usize, width: usize) -> Self {
        Extent { batch, height, width }
    }

    fn pixels(&self) -> u64 {
        (self.batch * self.height * self.width) as u64
    }

    fn scaled(&self, stride: usize) -> Extent {
        Extent { batch: self.batch, height: self.height / stride, width: self.width / stride }
    }
}

/// Shape of one convolution, independent of any parameter store.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub cin: usize,
    pub cout: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: (usize, usize),
    pub groups: usize,
    pub bias: bool,
}

impl ConvSpec {
    pub fn dense(cin: usize, cout: usize, k: usize) -> Self {
        ConvSpec { cin, cout, kernel: (k, k), stride: 1, padding: (k / 2, k / 2), groups: 1, bias: true }
    }

    pub fn pointwise(cin: usize, cout: usize) -> Self {
        Self::dense(cin, cout, 1)
    }

    pub fn depthwise(c: usize, k: usize) -> Self {
        ConvSpec { groups: c, ..Self::dense(c, c, k) }
    }

    pub fn params(&self) -> u64 {
        let w = self.kernel.0 * self.kernel.1 * (self.cin / self.groups) * self.cout;
        (w + if self.bias { self.cout } else { 0 }) as u64
    }

    pub fn out(&self, e: Extent) -> Extent {
        let f = |n: usize, k: usize, p: usize| (n + 2 * p - k) / self.stride + 1;
        Extent {
            batch: e.batch,
            height: f(e.height, self.kernel.0, self.padding.0),
            width: f(e.width, self.kernel.1, self.padding.1),
        }
    }

    pub fn macs(&self, e: Extent) -> u64 {
        let per_out = (self.kernel.0 * self.kernel.1 * (self.cin / self.groups) * self.cout) as u64;
        per_out * self.out(e).pixels()
    }
}

/// Accumulates rows under a name prefix.
struct Walk {
    prefix: String,
    rows: Vec<LayerCost>,
}

impl Walk {
    fn new(prefix: &str) -> Self {
        Walk { prefix: prefix.to_string(), rows: Vec::new() }
    }

    fn row(&mut self, name: &str, params: u64, macs: u64, other_ops: u64) {
        let name = if name.is_empty() { self.prefix.clone() } else { format!("{}.{name}", self.prefix) };
        self.rows.push(LayerCost { name, params, macs, other_ops });
    }

    fn conv(&mut self, name: &str, spec: ConvSpec, e: Extent) -> Extent {
        let out = spec.out(e);
        let bias_ops = if spec.bias { spec.cout as u64 * out.pixels() } else { 0 };
        self.row(name, spec.params(), spec.macs(e), bias_ops);
        out
    }

    fn norm(&mut self, name: &str, c: usize, kind: NormKind, e: Extent) {
        if kind != NormKind::None {
            self.row(name, 2 * c as u64, 0, 4 * c as u64 * e.pixels());
        }
    }

    fn ops(&mut self, name: &str, ops: u64) {
        self.row(name, 0, 0, ops);
    }

    fn nest(&mut self, sub: CostReport) {
        self.rows.extend(sub.rows);
    }

    fn child(&self, name: &str) -> String {
        format!("{}.{name}", self.prefix)
    }

    fn done(self) -> CostReport {
        CostReport { rows: self.rows }
    }
}

pub fn eca_cost(name: &str, c: usize, k: usize, e: Extent) -> CostReport {
    let mut w = Walk::new(name);
    let b = e.batch as u64;
    let elems = c as u64 * e.pixels();
    // Pooling, sigmoid and the broadcast product are non-MAC work.
    w.row("conv", k as u64, b * c as u64 * k as u64, elems + b * c as u64 * 2 + elems);
    w.done()
}

pub fn window_attention_cost(name: &str, c: usize, ws: usize, heads: usize, e: Extent) -> CostReport {
    let mut w = Walk::new(name);
    let (nh, nw) = (e.height.div_ceil(ws), e.width.div_ceil(ws));
    let padded = Extent::new(e.batch, nh * ws, nw * ws);
    w.conv("qkv", ConvSpec::pointwise(c, 3 * c), padded);
    let t = (ws * ws) as u64;
    let windows = (e.batch * nh * nw) as u64;
    // Per window and head: QK^T and AV are each T x T x d; summed over heads d gives c.
    let macs = 2 * windows * t * t * c as u64;
    let logits = windows * heads as u64 * t * t;
    let pooled = c as u64 * padded.pixels();
    // scale + softmax on logits, two pools and their broadcast sum.
    w.row("attend", 0, macs, logits + 3 * logits + 2 * pooled + 2 * pooled / ws as u64 + pooled);
    w.done()
}

pub fn local_branch_cost(name: &str, c: usize, e: Extent) -> CostReport {
    let mut w = Walk::new(name);
    let h = c / 2;
    w.conv("reduce", ConvSpec::pointwise(c, h), e);
    w.conv("dw", ConvSpec::depthwise(h, 3), e);
    w.conv("dw_pw", ConvSpec::pointwise(h, h), e);
    w.conv("gate1", ConvSpec::pointwise(h, h), e);
    w.conv("gate2", ConvSpec::pointwise(h, h), e);
    w.ops("gating", h as u64 * e.pixels());
    w.done()
}

/// LCRM with channel management: each branch runs on half the channels.
pub fn lcrm_cost(name: &str, cfg: &BlockConfig, e: Extent) -> CostReport {
    let c = cfg.channels;
    let mut w = Walk::new(name);
    w.nest(window_attention_cost(&w.child("global"), c / 2, cfg.window_size, cfg.heads, e));
    w.nest(local_branch_cost(&w.child("local"), c / 2, e));
    w.conv("fusion", ConvSpec::pointwise(c, c), e);
    w.nest(eca_cost(&w.child("eca"), c, cfg.eca_kernel, e));
    w.done()
}

/// Baseline without channel management: both branches see all `C`
/// channels and a 1x1 conv fuses their `2C` outputs back to `C`.
pub fn lcrm_no_split_cost(name: &str, cfg: &BlockConfig, e: Extent) -> CostReport {
    let c = cfg.channels;
    let mut w = Walk::new(name);
    w.nest(window_attention_cost(&w.child("global"), c, cfg.window_size, cfg.heads, e));
    w.nest(local_branch_cost(&w.child("local"), c, e));
    w.conv("fusion", ConvSpec::pointwise(2 * c, c), e);
    w.nest(eca_cost(&w.child("eca"), c, cfg.eca_kernel, e));
    w.done()
}

/// `e` is the extent of the shallow (output) resolution.
pub fn cffm_cost(name: &str, cfg: &BlockConfig, skip_channels: usize, e: Extent) -> CostReport {
    let c = cfg.channels;
    let mut w = Walk::new(name);
    let elems = c as u64 * e.pixels();
    w.ops("upsample", 7 * elems);
    w.conv("proj", ConvSpec::pointwise(skip_channels, c), e);
    // Softmax over two scalars is negligible; two products and a sum per element.
    w.row("gate", 2, 0, 3 * elems);
    w.conv("refine", ConvSpec::dense(c, c, 3), e);
    w.norm("refine.norm", c, cfg.norm, e);
    w.ops("refine.act", elems);
    w.nest(eca_cost(&w.child("eca"), c, cfg.eca_kernel, e));
    w.done()
}

pub fn sism_cost(name: &str, cfg: &BlockConfig, e: Extent) -> CostReport {
    let c = cfg.channels;
    let k = cfg.sism_kernels;
    let mut w = Walk::new(name);
    let px = e.pixels();
    w.conv("mid_dw", ConvSpec::depthwise(c, k.mid), e);
    w.conv("mid_pw", ConvSpec::pointwise(c, c), e);
    w.conv("long_dw", ConvSpec::depthwise(c, k.long), e);
    w.conv("long_pw", ConvSpec::pointwise(c, c), e);
    w.conv("mid_proj", ConvSpec::pointwise(c, c / 2), e);
    w.conv("long_proj", ConvSpec::pointwise(c, c / 2), e);
    w.ops("pool", 2 * c as u64 * px);
    w.conv("attn", ConvSpec::dense(2, 2, k.attn), e);
    w.ops("select", 2 * px + 3 * c as u64 * px);
    w.conv("attn_pw", ConvSpec::pointwise(c, c), e);
    w.conv("detail_dw", ConvSpec::depthwise(c, k.detail), e);
    w.conv("detail_pw", ConvSpec::pointwise(c, c), e);
    w.row("gate", 2, 0, 5 * c as u64 * px);
    w.done()
}

fn head_cost(name: &str, cin: usize, classes: usize, e: Extent, out: Extent) -> CostReport {
    let mut w = Walk::new(name);
    w.conv("", ConvSpec::pointwise(cin, classes), e);
    if (e.height, e.width) != (out.height, out.width) {
        w.ops("upsample", 7 * classes as u64 * out.pixels());
    }
    w.done()
}

/// Stub encoder on an input of extent `e`.
pub fn encoder_cost(cfg: &DecoderConfig, e: Extent) -> CostReport {
    let mut w = Walk::new("encoder");
    let mut cin = cfg.in_channels;
    let mut x = e;
    for (i, &c) in cfg.encoder_channels.iter().enumerate() {
        for j in 0..2 {
            let stride = if j == 0 || i == 0 { 2 } else { 1 };
            let name = format!("stage{}.conv{}", i + 1, j + 1);
            x = w.conv(&name, ConvSpec { stride, ..ConvSpec::dense(cin, c, 3) }, x);
            w.norm(&format!("{name}.norm"), c, cfg.block.norm, x);
            w.ops(&format!("{name}.act"), c as u64 * x.pixels());
            cin = c;
        }
    }
    w.done()
}

/// Decoder for an input image of extent `e` (train-mode graph, so the
/// auxiliary heads are included when enabled).
pub fn decoder_cost(cfg: &DecoderConfig, e: Extent) -> CostReport {
    let b = cfg.block_config();
    let (d, k) = (cfg.decode_channels, cfg.num_classes);
    let enc = cfg.encoder_channels;
    let mut w = Walk::new("decoder");
    let deep = e.scaled(32);
    w.conv("proj", ConvSpec::pointwise(enc[3], d), deep);
    w.norm("proj.norm", d, b.norm, deep);
    w.ops("proj.act", d as u64 * deep.pixels());
    let mut x = deep;
    for i in 1..=3 {
        w.nest(lcrm_cost(&w.child(&format!("lcrm{i}")), &b, x));
        if cfg.aux_heads {
            w.nest(head_cost(&w.child(&format!("aux{i}")), d, k, x, e));
        }
        x = e.scaled(32 >> i);
        w.nest(cffm_cost(&w.child(&format!("cffm{i}")), &b, enc[3 - i], x));
    }
    w.nest(sism_cost(&w.child("sism"), &b, x));
    w.nest(head_cost(&w.child("head"), d, k, x, e));
    w.done()
}

/// Encoder followed by decoder.
pub fn count_flops(cfg: &DecoderConfig, e: Extent) -> CostReport {
    let mut r = encoder_cost(cfg, e);
    r.extend(decoder_cost(cfg, e));
    r
}

/// Learned parameters of the whole network (normalization buffers excluded).
pub fn count_params(cfg: &DecoderConfig) -> u64 {
    count_flops(cfg, Extent::new(1, 32, 32)).totals().params
}

pub fn count_decoder_params(cfg: &DecoderConfig) -> u64 {
    decoder_cost(cfg, Extent::new(1, 32, 32)).totals().params
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_conv_counts() {
        assert_eq!(ConvSpec::pointwise(64, 64).params(), 4160);
        assert_eq!(ConvSpec::depthwise(64, 3).params(), 640);
        let e = Extent::new(2, 10, 12);
        assert_eq!(ConvSpec::dense(3, 5, 3).macs(e), 9 * 3 * 5 * 2 * 10 * 12);
        let s2 = ConvSpec { stride: 2, ..ConvSpec::dense(3, 5, 3) };
        assert_eq!(s2.out(e), Extent::new(2, 5, 6));
    }

    #[test]
    fn totals_are_column_sums_and_flops_double_macs() {
        let r = count_flops(&DecoderConfig::default(), Extent::new(2, 64, 64));
        let t = r.totals();
        assert_eq!(t.params, r.rows.iter().map(|x| x.params).sum::<u64>());
        assert_eq!(t.macs, r.rows.iter().map(|x| x.macs).sum::<u64>());
        assert_eq!(t.flops, 2 * t.macs);
        assert!(r.rows.iter().all(|x| x.flops() == 2 * x.macs));
    }

    #[test]
    fn block_cost_is_sum_of_parts() {
        let cfg = BlockConfig::default();
        let e = Extent::new(1, 16, 16);
        let whole = lcrm_cost("l", &cfg, e).totals();
        let mut parts = window_attention_cost("l.global", 32, 8, 4, e).totals().params;
        parts += local_branch_cost("l.local", 32, e).totals().params;
        parts += ConvSpec::pointwise(64, 64).params() + 3;
        assert_eq!(whole.params, parts);
    }

    #[test]
    fn csv_and_text_render_every_row() {
        let r = lcrm_cost("lcrm", &BlockConfig::default(), Extent::new(1, 8, 8));
        let csv = r.to_csv();
        assert!(csv.starts_with("layer,params,macs,flops\n"));
        assert_eq!(csv.lines().count(), r.rows.len() + 2);
        assert!(r.to_text().lines().last().unwrap().starts_with("total"));
    }
}
