//! Parameter and Mult-Add accounting.

use std::fmt;

use crate::blocks::{vanilla_block_weights, BlockFamily, BlockSpec};
use crate::error::Result;
use crate::graph::{Graph, OpKind};
use crate::network::{Model, NetSpec};
use crate::nnops::BnMode;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerBudget {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub weights: usize,
    pub bias: usize,
    /// Weight-norm gains or batch-norm affine parameters.
    pub extra: usize,
    /// Spatial scale relative to the LR input (1 = LR resolution).
    pub resolution_factor: usize,
    pub mult_adds: u64,
}

impl LayerBudget {
    pub fn params(&self) -> usize {
        self.weights + self.bias + self.extra
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BudgetReport {
    pub spec: NetSpec,
    /// LR input size the Mult-Adds refer to.
    pub input_hw: (usize, usize),
    pub layers: Vec<LayerBudget>,
    /// Kernel weights of one residual block.
    pub block_weights: usize,
    /// Kernel weights of the vanilla block this block is budget-matched to.
    pub baseline_block_weights: Option<usize>,
}

impl BudgetReport {
    pub fn total_weights(&self) -> usize {
        self.layers.iter().map(|l| l.weights).sum()
    }

    pub fn total_bias(&self) -> usize {
        self.layers.iter().map(|l| l.bias).sum()
    }

    pub fn total_extra(&self) -> usize {
        self.layers.iter().map(|l| l.extra).sum()
    }

    pub fn total_params(&self) -> usize {
        self.layers.iter().map(LayerBudget::params).sum()
    }

    pub fn total_mult_adds(&self) -> u64 {
        self.layers.iter().map(|l| l.mult_adds).sum()
    }

    /// Signed block-weight deviation from the matched baseline, in percent.
    pub fn parity_percent(&self) -> Option<f64> {
        self.baseline_block_weights
            .map(|b| 100.0 * (self.block_weights as f64 - b as f64) / b as f64)
    }
}

/// Width of the vanilla block a non-vanilla spec is matched against:
/// the declared budget width, or `round(sqrt(w1 * w2))` for wdsr-a.
pub fn baseline_width(block: &BlockSpec) -> Option<usize> {
    match block.family {
        BlockFamily::Vanilla => None,
        BlockFamily::WdsrA => block.budget_width.or_else(|| {
            let w2 = block.activation_width();
            Some(((block.width * w2) as f64).sqrt().round() as usize)
        }),
        BlockFamily::WdsrB => block.budget_width,
    }
}

pub fn budget_report(spec: &NetSpec, input_hw: (usize, usize)) -> Result<BudgetReport> {
    let model = Model::<f32>::from_seed(spec.clone(), 0)?;
    let (h, w) = input_hw;
    let layers = model
        .convs()
        .into_iter()
        .map(|placed| {
            let l = placed.layer;
            let f = placed.resolution_factor;
            let pixels = (h * f * w * f) as u64;
            LayerBudget {
                name: l.name.clone(),
                cin: l.cin,
                cout: l.cout,
                kernel: l.kernel,
                weights: l.weight_count(),
                bias: l.bias_count(),
                extra: l.extra_count(),
                resolution_factor: f,
                mult_adds: l.weight_count() as u64 * pixels,
            }
        })
        .collect();
    let baseline_block_weights =
        baseline_width(&spec.block).map(|b| vanilla_block_weights(b, spec.block.kernel));
    Ok(BudgetReport {
        spec: spec.clone(),
        input_hw,
        layers,
        block_weights: spec.block.weight_count()?,
        baseline_block_weights,
    })
}

/// Spatial extents seen by each recorded operation of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolutionAudit {
    pub input_hw: (usize, usize),
    pub scale: usize,
    /// `(h, w)` of every convolution output, in execution order.
    pub conv_hw: Vec<(usize, usize)>,
    /// Largest `h * w` of any activation preceding the first pixel shuffle.
    pub max_pre_shuffle_pixels: usize,
    pub max_pixels: usize,
}

impl ResolutionAudit {
    pub fn all_convs_at_lr(&self) -> bool {
        self.conv_hw.iter().all(|&hw| hw == self.input_hw)
    }

    /// No activation exceeds the HR size and nothing before the first
    /// shuffle exceeds the LR size.
    pub fn is_disciplined(&self) -> bool {
        let (h, w) = self.input_hw;
        self.max_pixels <= h * w * self.scale * self.scale && self.max_pre_shuffle_pixels <= h * w
    }
}

/// Records one forward pass and walks the resulting graph.
pub fn audit_resolution(
    model: &mut Model<f32>,
    input_hw: (usize, usize),
) -> Result<ResolutionAudit> {
    let (h, w) = input_hw;
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros([1, 3, h, w]));
    model.forward(&mut g, x, BnMode::Train)?;
    let mut audit = ResolutionAudit {
        input_hw,
        scale: model.spec.scale,
        conv_hw: Vec::new(),
        max_pre_shuffle_pixels: 0,
        max_pixels: 0,
    };
    let mut shuffled = false;
    for node in g.nodes() {
        let &[_, _, nh, nw] = node.shape else {
            continue;
        };
        if node.kind == OpKind::PixelShuffle {
            shuffled = true;
        }
        if node.kind == OpKind::Conv2d {
            audit.conv_hw.push((nh, nw));
        }
        audit.max_pixels = audit.max_pixels.max(nh * nw);
        if !shuffled {
            audit.max_pre_shuffle_pixels = audit.max_pre_shuffle_pixels.max(nh * nw);
        }
    }
    Ok(audit)
}

impl fmt::Display for BudgetReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = &self.spec;
        writeln!(
            f,
            "network: {} x{} blocks={} family={} w1={} r={} norm={}",
            s.topology,
            s.scale,
            s.n_blocks,
            s.block.family,
            s.block.width,
            s.block.expansion,
            s.block.normalization
        )?;
        writeln!(
            f,
            "mult-adds at LR input {}x{}",
            self.input_hw.0, self.input_hw.1
        )?;
        writeln!(
            f,
            "{:<24} {:>5} {:>5} {:>3} {:>4} {:>9} {:>6} {:>6} {:>14}",
            "layer", "cin", "cout", "k", "res", "weights", "bias", "extra", "mult-adds"
        )?;
        for l in &self.layers {
            writeln!(
                f,
                "{:<24} {:>5} {:>5} {:>3} {:>3}x {:>9} {:>6} {:>6} {:>14}",
                l.name,
                l.cin,
                l.cout,
                l.kernel,
                l.resolution_factor,
                l.weights,
                l.bias,
                l.extra,
                l.mult_adds
            )?;
        }
        writeln!(
            f,
            "total weights={} bias={} extra={} params={} ({:.3}M) mult-adds={}",
            self.total_weights(),
            self.total_bias(),
            self.total_extra(),
            self.total_params(),
            self.total_params() as f64 / 1e6,
            self.total_mult_adds()
        )?;
        write!(f, "block weights={}", self.block_weights)?;
        if let (Some(base), Some(p)) = (self.baseline_block_weights, self.parity_percent()) {
            write!(f, " baseline={base} parity={p:+.2}%")?;
        }
        writeln!(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Normalization;

    #[test]
    fn totals_agree_with_parameter_store() {
        for norm in Normalization::ALL {
            let spec = NetSpec::wdsr(2, 2, BlockSpec::wdsr_b(8, 6, 8).with_normalization(norm));
            let report = budget_report(&spec, (4, 4)).unwrap();
            let model = Model::<f32>::from_seed(spec, 0).unwrap();
            assert_eq!(report.total_params(), model.params.count(), "{norm}");
        }
    }

    #[test]
    fn mult_adds_scale_with_lr_area() {
        let spec = NetSpec::wdsr(3, 1, BlockSpec::wdsr_a(8, 2));
        let a = budget_report(&spec, (10, 10)).unwrap();
        let b = budget_report(&spec, (20, 20)).unwrap();
        assert_eq!(b.total_mult_adds(), 4 * a.total_mult_adds());
        assert_eq!(a.total_mult_adds(), 100 * a.total_weights() as u64);
    }

    #[test]
    fn edsr_tail_runs_at_hr() {
        let report = budget_report(&NetSpec::edsr_baseline(4, 1, 8), (6, 6)).unwrap();
        let tail = report.layers.iter().find(|l| l.name == "tail").unwrap();
        assert_eq!(tail.resolution_factor, 4);
        let ups: Vec<_> = report
            .layers
            .iter()
            .filter(|l| l.name.starts_with("upsample"))
            .collect();
        assert_eq!(
            ups.iter().map(|l| l.resolution_factor).collect::<Vec<_>>(),
            vec![1, 2]
        );
    }

    #[test]
    fn wdsr_convs_all_at_lr() {
        for s in [2, 3, 4] {
            let mut m =
                Model::from_seed(NetSpec::wdsr(s, 2, BlockSpec::wdsr_b(8, 4, 8)), 0).unwrap();
            let audit = audit_resolution(&mut m, (5, 7)).unwrap();
            assert!(audit.all_convs_at_lr());
            assert!(audit.is_disciplined());
            assert_eq!(audit.max_pixels, 35 * s * s);
        }
        let mut m = Model::from_seed(NetSpec::edsr_baseline(2, 1, 8), 0).unwrap();
        let audit = audit_resolution(&mut m, (5, 7)).unwrap();
        assert!(!audit.all_convs_at_lr());
        assert!(audit.is_disciplined());
    }

    #[test]
    fn parity_of_matched_specs() {
        let a = budget_report(
            &NetSpec::wdsr(2, 1, BlockSpec::wdsr_a_matched(64, 2).unwrap()),
            (1, 1),
        )
        .unwrap();
        assert_eq!(a.block_weights, 72900);
        assert_eq!(a.baseline_block_weights, Some(73728));
        assert!(a.parity_percent().unwrap().abs() < 2.0);
        let v = budget_report(&NetSpec::wdsr(2, 1, BlockSpec::vanilla(64)), (1, 1)).unwrap();
        assert_eq!(v.parity_percent(), None);
        assert!(v.to_string().contains("block weights=73728"));
    }
}
