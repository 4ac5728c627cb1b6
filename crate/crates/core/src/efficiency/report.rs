use crate::blocks::BlockConfig;

use super::{lcrm_cost, lcrm_no_split_cost, Extent, Totals};

/// `(B, C, H, W)` inputs compared in the channel-management table.
pub const REFERENCE_SHAPES: [[usize; 4]; 4] = [[4, 64, 128, 128], [4, 64, 256, 256], [4, 128, 128, 128], [4, 128, 256, 256]];

/// One LCRM compared with and without channel splitting.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChannelRow {
    pub shape: [usize; 4],
    /// Without channel management.
    pub full: Totals,
    /// With channel management.
    pub split: Totals,
}

fn reduction(full: u64, split: u64) -> f64 {
    1.0 - split as f64 / full as f64
}

impl ChannelRow {
    pub fn param_reduction(&self) -> f64 {
        reduction(self.full.params, self.split.params)
    }

    pub fn mac_reduction(&self) -> f64 {
        reduction(self.full.macs, self.split.macs)
    }

    pub fn flop_reduction(&self) -> f64 {
        reduction(self.full.flops, self.split.flops)
    }
}

/// Costs of the split and unsplit LCRM at each shape, using `block` with
/// its channel count taken from the shape.
pub fn report_channel_management(shapes: &[[usize; 4]], block: &BlockConfig) -> Vec<ChannelRow> {
    shapes
        .iter()
        .map(|&shape| {
            let cfg = block.with_channels(shape[1]);
            let e = Extent::new(shape[0], shape[2], shape[3]);
            ChannelRow {
                shape,
                full: lcrm_no_split_cost("lcrm", &cfg, e).totals(),
                split: lcrm_cost("lcrm", &cfg, e).totals(),
            }
        })
        .collect()
}

pub fn channel_table_text(rows: &[ChannelRow]) -> String {
    let mut s = format!(
        "{:<20} {:>10} {:>18} {:>10} {:>18}\n",
        "input", "F^O (G)", "F^C (G)", "P^O (K)", "P^C (K)"
    );
    for r in rows {
        let [b, c, h, w] = r.shape;
        s.push_str(&format!(
            "{:<20} {:>10.2} {:>10.2} ({:>+4.0}%) {:>10.2} {:>10.2} ({:>+4.0}%)\n",
            format!("({b},{c},{h},{w})"),
            r.full.flops as f64 / 1e9,
            r.split.flops as f64 / 1e9,
            -100.0 * r.flop_reduction(),
            r.full.params as f64 / 1e3,
            r.split.params as f64 / 1e3,
            -100.0 * r.param_reduction(),
        ));
    }
    s
}

pub fn channel_table_csv(rows: &[ChannelRow]) -> String {
    let mut s = String::from("shape,macs_full,macs_split,flops_full,flops_split,params_full,params_split,mac_reduction,param_reduction\n");
    for r in rows {
        let [b, c, h, w] = r.shape;
        s.push_str(&format!(
            "{b}x{c}x{h}x{w},{},{},{},{},{},{},{:.4},{:.4}\n",
            r.full.macs,
            r.split.macs,
            r.full.flops,
            r.split.flops,
            r.full.params,
            r.split.params,
            r.mac_reduction(),
            r.param_reduction()
        ));
    }
    s
}
