use serde::{Deserialize, Serialize};

use super::TilingError;
use crate::graph::LayerSpec;

fn align4(v: usize) -> usize {
    v.div_ceil(4) * 4
}

/// L2 bytes of one candidate configuration, each term rounded up to 4 bytes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct L2Footprint {
    pub w_next: usize,
    pub w_curr: usize,
    pub x: usize,
    pub y: usize,
}

impl L2Footprint {
    fn new(w_next: usize, w_curr: usize, x: usize, y: usize) -> Self {
        L2Footprint { w_next: align4(w_next), w_curr: align4(w_curr), x: align4(x), y: align4(y) }
    }

    pub fn total(&self) -> usize {
        self.w_next + self.w_curr + self.x + self.y
    }

    /// `w_next + w_curr + x + y < budget`.
    pub fn fits(&self, budget: usize) -> bool {
        self.total() < budget
    }
}

/// Outcome of one rejected stage. `footprint` is the smallest configuration
/// the stage allows, absent when the stage was not legal for the layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCheck {
    pub stage: u8,
    pub legal: bool,
    pub footprint: Option<L2Footprint>,
}

/// Which tensors of a layer are streamed between L3 and L2, and how.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct L3Decision {
    pub stage: u8,
    pub tile_x_on: bool,
    pub tile_w_on: bool,
    pub tile_y_on: bool,
    /// Output rows per stripe (stages 1, 3 and 4).
    pub h_y_stripe: Option<usize>,
    /// Input rows per stripe (stage 1).
    pub h_x_stripe: Option<usize>,
    /// Output channels per weight slice (stages 2 and 4).
    pub c_y_slice: Option<usize>,
    /// Two L2 weight slots alternate while slices stream in.
    pub l2_w_double: bool,
    pub footprint: L2Footprint,
    pub budget: usize,
    pub rejected: Vec<StageCheck>,
}

impl L3Decision {
    /// Stage 0 with no budget attached, for layers tiled in isolation.
    pub fn resident(layer: &LayerSpec) -> Self {
        L3Decision {
            stage: 0,
            tile_x_on: false,
            tile_w_on: false,
            tile_y_on: false,
            h_y_stripe: None,
            h_x_stripe: None,
            c_y_slice: None,
            l2_w_double: false,
            footprint: L2Footprint::new(0, layer.weight_bytes(), layer.input_bytes() * layer.inputs.len().max(1), layer.output_bytes()),
            budget: usize::MAX,
            rejected: Vec::new(),
        }
    }

    /// Output-row stripes, or the whole height in one piece.
    pub fn stripe_rows(&self, h_y: usize) -> usize {
        self.h_y_stripe.unwrap_or(h_y)
    }

    pub fn slice_channels(&self, c_y: usize) -> usize {
        self.c_y_slice.unwrap_or(c_y)
    }

    /// True when the output is written back to L3 stripe by stripe.
    pub fn output_in_l3(&self) -> bool {
        self.tile_y_on
    }
}

/// Network context of a single cascade decision.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CascadeInput {
    /// The producer spilled this layer's input to L3.
    pub input_in_l3: bool,
    /// L2 bytes reserved for the next layer's weights (and input stripe).
    pub w_next: usize,
    pub l2_budget: usize,
    /// The output may be spilled: its only consumer is the next layer, that
    /// layer is not an add and the tensor is not the network output.
    pub output_may_spill: bool,
    /// Upper bound on this layer's weight group (weight slots plus input
    /// stripe buffer), so that the previous layer can reserve it.
    pub w_cap: usize,
    /// The consumer cannot hold this layer's whole output, so it goes to L3
    /// even when it would fit. Ignored when the input is in L3 too.
    pub force_spill: bool,
}

/// Input rows a stripe of `rows` output rows reads at most.
pub fn x_stripe_rows(layer: &LayerSpec, rows: usize) -> usize {
    ((rows - 1) * layer.stride + layer.kernel_h).min(layer.h_x())
}

fn x_stripe_bytes(layer: &LayerSpec, rows: usize) -> usize {
    x_stripe_rows(layer, rows) * layer.w_x() * layer.c_x()
}

/// Stage decision for an isolated layer whose successor needs no L2 weights.
pub fn l3_cascade(layer: &LayerSpec, prev_output_in_l3: bool, l2_budget: usize) -> Result<L3Decision, TilingError> {
    l3_cascade_with(
        layer,
        &CascadeInput {
            input_in_l3: prev_output_in_l3,
            w_next: 0,
            l2_budget,
            output_may_spill: true,
            w_cap: usize::MAX,
            force_spill: false,
        },
    )
}

/// Tries stages 0 to 4 in order and returns the first that fits.
///
/// Stripes and slices are the largest that satisfy the budget. A layer whose
/// input already lives in L3 can only use stage 1; if that fails the layer
/// is rejected rather than combining input tiling with weight or output
/// tiling.
pub fn l3_cascade_with(layer: &LayerSpec, ctx: &CascadeInput) -> Result<L3Decision, TilingError> {
    if ctx.l2_budget == 0 {
        return Err(TilingError::InvalidConfig(format!("layer {}: L2 budget must be positive", layer.id)));
    }
    let budget = ctx.l2_budget;
    let (h_y, c_y) = (layer.h_y(), layer.c_y());
    let x = layer.input_bytes() * layer.inputs.len().max(1);
    let (w, y) = (layer.weight_bytes(), layer.output_bytes());
    let fp = |w_curr, x, y| L2Footprint::new(ctx.w_next, w_curr, x, y);
    let w_fits = |group: usize| group <= ctx.w_cap;
    let slices = |c: usize| 2 * align4(layer.weight_slice_bytes(c));
    let whole_w = w_fits(align4(w));
    let has_w = layer.kind.has_weights();
    let base = L3Decision {
        stage: 0,
        tile_x_on: false,
        tile_w_on: false,
        tile_y_on: false,
        h_y_stripe: None,
        h_x_stripe: None,
        c_y_slice: None,
        l2_w_double: false,
        footprint: fp(w, x, y),
        budget,
        rejected: Vec::new(),
    };
    let mut rejected = Vec::new();
    let mut reject = |stage, footprint: Option<L2Footprint>| rejected.push(StageCheck { stage, legal: footprint.is_some(), footprint });

    let force_spill = ctx.force_spill && ctx.output_may_spill && !ctx.input_in_l3;

    // Stage 0: everything resident.
    if ctx.input_in_l3 || force_spill {
        reject(0, None);
    } else if whole_w && base.footprint.fits(budget) {
        return Ok(base);
    } else {
        reject(0, Some(base.footprint));
    }

    // Stage 1: input stripes along h.
    if ctx.input_in_l3 {
        let at = |r| fp(w, x_stripe_bytes(layer, r), y);
        let group = |r| align4(w) + align4(x_stripe_bytes(layer, r));
        if let Some(r) = (1..=h_y).rev().find(|&r| w_fits(group(r)) && at(r).fits(budget)) {
            return Ok(L3Decision {
                stage: 1,
                tile_x_on: true,
                h_y_stripe: Some(r),
                h_x_stripe: Some(x_stripe_rows(layer, r)),
                footprint: at(r),
                rejected,
                ..base
            });
        }
        return Err(TilingError::L3Infeasible {
            layer: layer.id.clone(),
            smallest: at(1).total(),
            budget,
            reason: "input is in L3 and even a one-row stripe does not fit".to_string(),
        });
    }
    reject(1, None);

    // Stage 2: weight slices along C_y, double-buffered.
    if has_w && c_y > 1 && !force_spill {
        let at = |c| fp(2 * layer.weight_slice_bytes(c), x, y);
        let ok = |c: usize| w_fits(slices(c)) && at(c).fits(budget);
        if let Some(c) = (1..c_y).rev().find(|&c| ok(c)) {
            return Ok(L3Decision { stage: 2, tile_w_on: true, c_y_slice: Some(c), l2_w_double: true, footprint: at(c), rejected, ..base });
        }
        reject(2, Some(at(1)));
    } else {
        reject(2, None);
    }

    let row_bytes = layer.w_y() * c_y;
    let spill_err = |smallest: usize| TilingError::L3Infeasible {
        layer: layer.id.clone(),
        smallest,
        budget,
        reason: "output may not be spilled to L3".to_string(),
    };
    if !ctx.output_may_spill {
        let smallest = if has_w && c_y > 1 { fp(2 * layer.weight_slice_bytes(1), x, y) } else { base.footprint };
        return Err(spill_err(smallest.total()));
    }

    // Stage 3: output stripes, weights whole.
    let at3 = |r: usize| fp(w, x, r * row_bytes);
    if let Some(r) = (1..=h_y).rev().find(|&r| whole_w && at3(r).fits(budget)) {
        return Ok(L3Decision { stage: 3, tile_y_on: true, h_y_stripe: Some(r), footprint: at3(r), rejected, ..base });
    }
    reject(3, Some(at3(1)));

    // Stage 4: output stripes of weight slices.
    let at4 = |r: usize, c: usize| fp(2 * layer.weight_slice_bytes(c), x, r * layer.w_y() * c);
    if has_w {
        let ok = |r: usize, c: usize| w_fits(slices(c)) && at4(r, c).fits(budget);
        if let Some(r) = (1..=h_y).rev().find(|&r| ok(r, 1)) {
            let c = (1..=c_y).rev().find(|&c| ok(r, c)).unwrap_or(1);
            return Ok(L3Decision {
                stage: 4,
                tile_w_on: true,
                tile_y_on: true,
                h_y_stripe: Some(r),
                c_y_slice: Some(c),
                l2_w_double: true,
                footprint: at4(r, c),
                rejected,
                ..base
            });
        }
    }
    let smallest = if has_w { at4(1, 1) } else { at3(1) };
    Err(TilingError::L3Infeasible { layer: layer.id.clone(), smallest: smallest.total(), budget, reason: "no stage fits".to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::bare_layer;
    use crate::graph::{LayerKind, Padding};

    fn conv(h: usize, c_x: usize, c_y: usize) -> LayerSpec {
        bare_layer(LayerKind::Conv, (h, h, c_x), c_y, (3, 3), 1, Padding::uniform(1))
    }

    #[test]
    fn small_layer_is_resident() {
        let l = conv(16, 16, 16);
        let d = l3_cascade(&l, false, 512 * 1024).unwrap();
        assert_eq!(d.stage, 0);
        assert!(!d.tile_x_on && !d.tile_w_on && !d.tile_y_on);
    }

    #[test]
    fn heavy_weights_slice_channels() {
        // 3x3x256x256 weights = 576 KiB, activations 4 KiB each.
        let l = conv(4, 256, 256);
        let d = l3_cascade(&l, false, 512 * 1024).unwrap();
        assert_eq!(d.stage, 2);
        let c = d.c_y_slice.unwrap();
        let slice = 9 * 256;
        assert!(2 * slice * c + 4096 + 4096 < 512 * 1024);
        assert!(2 * slice * (c + 1) + 4096 + 4096 >= 512 * 1024);
    }

    #[test]
    fn l3_input_forces_stripes() {
        let l = conv(128, 32, 32);
        let d = l3_cascade(&l, true, 1024 * 1024).unwrap();
        assert_eq!(d.stage, 1);
        let r = d.h_y_stripe.unwrap();
        let fp = |r: usize| align4(9 * 32 * 32) + (r + 2).min(128) * 128 * 32 + 128 * 128 * 32;
        assert!(fp(r) < 1024 * 1024 && fp(r + 1) >= 1024 * 1024);
        assert_eq!(d.h_x_stripe, Some(r + 2));
    }

    #[test]
    fn unspillable_output_errors() {
        let l = conv(64, 32, 32);
        let ctx = CascadeInput {
            input_in_l3: false,
            w_next: 0,
            l2_budget: 256 * 1024,
            output_may_spill: false,
            w_cap: usize::MAX,
            force_spill: false,
        };
        assert!(matches!(l3_cascade_with(&l, &ctx), Err(TilingError::L3Infeasible { .. })));
        let ctx = CascadeInput { output_may_spill: true, ..ctx };
        assert_eq!(l3_cascade_with(&l, &ctx).unwrap().stage, 3);
    }
}
