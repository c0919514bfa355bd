//! Training objectives as pure value + gradient functions.
//!
//! Every loss returns a [`LossValue`] whose gradient is taken with respect to
//! the prediction inputs, in the layout documented on each function. No
//! autodiff is involved; gradients are written out by hand and checked
//! against central finite differences in the tests.

use serde::{Deserialize, Serialize};

use crate::anchors::{decode_angle, encode_box_targets, ProposalTarget};
use crate::error::{Error, Result};
use crate::geometry::{box_corners_with_jacobian, iou_3d, normalize_angle, Box3D};

/// Lower clamp applied to the true-class probability in the focal loss.
pub const FOCAL_P_MIN: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    /// Weight of the regression terms.
    pub lambda: f64,
    /// Smooth-L1 transition point.
    pub delta: f64,
    pub angle_bins: usize,
    pub corner_matching: CornerMatching,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            focal_alpha: 0.25,
            focal_gamma: 2.0,
            lambda: 1.0,
            delta: 1.0,
            angle_bins: 12,
            corner_matching: CornerMatching::Direct,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.focal_alpha > 0.0 && self.focal_alpha < 1.0) {
            return Err(Error::InvalidConfig("focal alpha must be in (0, 1)".into()));
        }
        if !(self.focal_gamma >= 0.0) || !(self.lambda > 0.0) || !(self.delta > 0.0) {
            return Err(Error::InvalidConfig(
                "need gamma >= 0, lambda > 0 and delta > 0".into(),
            ));
        }
        if self.angle_bins < 2 {
            return Err(Error::InvalidConfig("need at least 2 angle bins".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LossValue {
    pub value: f64,
    pub gradient: Vec<f64>,
    /// A probability input was clamped away from zero.
    pub clamped: bool,
}

impl LossValue {
    fn scaled(mut self, k: f64) -> Self {
        self.value *= k;
        self.gradient.iter_mut().for_each(|g| *g *= k);
        self
    }
}

/// Summed smooth-L1 over element-wise differences `pred - target`.
pub fn smooth_l1(pred: &[f64], target: &[f64], delta: f64) -> Result<LossValue> {
    if pred.len() != target.len() {
        return Err(Error::LengthMismatch {
            expected: target.len(),
            actual: pred.len(),
        });
    }
    let mut value = 0.0;
    let gradient = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let x = p - t;
            if x.abs() < delta {
                value += 0.5 * x * x / delta;
                x / delta
            } else {
                value += x.abs() - 0.5 * delta;
                x.signum()
            }
        })
        .collect();
    Ok(LossValue {
        value,
        gradient,
        clamped: false,
    })
}

/// `-α (1 - p)^γ ln p` for the true-class probability `p`; the gradient has
/// one entry, `d/dp`.
pub fn focal_loss(p_true: f64, alpha: f64, gamma: f64) -> LossValue {
    let clamped = p_true < FOCAL_P_MIN;
    if clamped {
        let p = FOCAL_P_MIN;
        return LossValue {
            value: -alpha * (1.0 - p).powf(gamma) * p.ln(),
            gradient: vec![0.0],
            clamped,
        };
    }
    let p = p_true.min(1.0);
    let q = 1.0 - p;
    let value = -alpha * q.powf(gamma) * p.ln();
    let d_mod = if gamma == 0.0 {
        0.0
    } else if q == 0.0 {
        if gamma < 1.0 {
            f64::INFINITY
        } else if gamma == 1.0 {
            1.0
        } else {
            0.0
        }
    } else {
        gamma * q.powf(gamma - 1.0)
    };
    let gradient = alpha * d_mod * p.ln() - alpha * q.powf(gamma) / p;
    LossValue {
        value,
        gradient: vec![gradient],
        clamped,
    }
}

/// `-log softmax(logits)[label]`; gradient `softmax - onehot`.
pub fn softmax_ce(logits: &[f64], label: usize) -> Result<LossValue> {
    if logits.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let value = sum.ln() - (logits[label] - m);
    let gradient = exps
        .iter()
        .enumerate()
        .map(|(k, e)| e / sum - if k == label { 1.0 } else { 0.0 })
        .collect();
    Ok(LossValue {
        value,
        gradient,
        clamped: false,
    })
}

/// Center + size regression. Gradient layout: `[center 3, size 3]`.
pub fn location_loss(pred_center: &[f64; 3], pred_size: &[f64; 3], target: &ProposalTarget, delta: f64) -> Result<LossValue> {
    let c = smooth_l1(pred_center, &target.center, delta)?;
    let s = smooth_l1(pred_size, &target.size, delta)?;
    Ok(concat(&[c, s]))
}

/// Bin classification + residual regression. Gradient layout:
/// `[bin logits N_a, residual 1]`.
pub fn angle_loss(bin_logits: &[f64], pred_residual: f64, target_bin: usize, target_residual: f64, delta: f64) -> Result<LossValue> {
    let ce = softmax_ce(bin_logits, target_bin)?;
    let res = smooth_l1(&[pred_residual], &[target_residual], delta)?;
    Ok(concat(&[ce, res]))
}

/// How predicted corners are paired with ground-truth corners.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CornerMatching {
    /// Corner `k` against corner `k`.
    #[default]
    Direct,
    /// Minimum of direct matching and matching against the ground truth
    /// turned by π.
    FlipMin,
}

fn corner_loss_direct(pred: &Box3D, gt_corners: &[[f64; 3]; 8]) -> LossValue {
    let (corners, jac) = box_corners_with_jacobian(pred);
    let mut value = 0.0;
    let mut gradient = vec![0.0; 7];
    for k in 0..8 {
        let d = [
            corners[k][0] - gt_corners[k][0],
            corners[k][1] - gt_corners[k][1],
            corners[k][2] - gt_corners[k][2],
        ];
        let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        value += n;
        if n == 0.0 {
            continue;
        }
        for axis in 0..3 {
            let u = d[axis] / n;
            for (g, j) in gradient.iter_mut().zip(jac[k][axis].iter()) {
                *g += u * j;
            }
        }
    }
    LossValue {
        value,
        gradient,
        clamped: false,
    }
}

/// Sum of Euclidean distances between order-matched corners. Gradient is
/// w.r.t. the predicted box `(cx, cy, cz, l, w, h, yaw)`; coincident corners
/// contribute a zero subgradient.
pub fn corner_loss(pred: &Box3D, gt: &Box3D) -> LossValue {
    corner_loss_with(pred, gt, CornerMatching::Direct)
}

pub fn corner_loss_with(pred: &Box3D, gt: &Box3D, matching: CornerMatching) -> LossValue {
    let gt_corners = crate::geometry::box_corners(gt);
    let direct = corner_loss_direct(pred, &gt_corners);
    match matching {
        CornerMatching::Direct => direct,
        CornerMatching::FlipMin => {
            let flipped = Box3D {
                yaw: normalize_angle(gt.yaw + std::f64::consts::PI),
                ..*gt
            };
            let other = corner_loss_direct(pred, &crate::geometry::box_corners(&flipped));
            if other.value < direct.value {
                other
            } else {
                direct
            }
        }
    }
}

/// Smooth-L1 between the predicted IoU and the 3D IoU of the proposal with
/// its ground truth. Gradient has one entry, w.r.t. the predicted IoU.
pub fn iou_branch_loss(predicted_iou: f64, proposal: &Box3D, gt: Option<&Box3D>, delta: f64) -> Result<LossValue> {
    let gt = gt.ok_or(Error::UnmatchedProposal { index: 0 })?;
    smooth_l1(&[predicted_iou], &[iou_3d(proposal, gt)], delta)
}

/// `L_total = L_prop + L_box`; gradients are concatenated.
pub fn total_loss(proposal: LossValue, boxes: LossValue) -> LossValue {
    concat(&[proposal, boxes])
}

fn concat(parts: &[LossValue]) -> LossValue {
    LossValue {
        value: parts.iter().map(|p| p.value).sum(),
        gradient: parts.iter().flat_map(|p| p.gradient.iter().copied()).collect(),
        clamped: parts.iter().any(|p| p.clamped),
    }
}

/// First-stage prediction for one anchor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorPrediction {
    pub cls_logits: Vec<f64>,
    /// 0 is background; `>= 1` marks a positive anchor.
    pub label: usize,
    pub center: [f64; 3],
    pub size: [f64; 3],
    pub angle_logits: Vec<f64>,
    pub angle_residual: f64,
    /// Regression targets; required for positives.
    pub target: Option<ProposalTarget>,
}

impl AnchorPrediction {
    fn grad_len(&self) -> usize {
        self.cls_logits.len() + 7 + self.angle_logits.len()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ProposalBatch {
    /// True-class segmentation probability per point.
    pub seg_probs: Vec<f64>,
    pub anchors: Vec<AnchorPrediction>,
}

impl ProposalBatch {
    /// Gradient offset of every anchor block, after the segmentation block.
    pub fn gradient_offsets(&self) -> Vec<usize> {
        let mut off = self.seg_probs.len();
        self.anchors
            .iter()
            .map(|a| {
                let o = off;
                off += a.grad_len();
                o
            })
            .collect()
    }
}

/// First-stage objective:
///
/// `mean focal(seg) + mean_i CE(s_i, u_i) + λ / N_pos · Σ_{u_i ≥ 1} (L_loc + L_ang)`
///
/// The regression term is zero when there are no positives. Gradient layout:
/// `[seg probs]` then, per anchor, `[cls logits, center 3, size 3, angle
/// logits, angle residual]`.
pub fn proposal_loss(batch: &ProposalBatch, config: &LossConfig) -> Result<LossValue> {
    if batch.anchors.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut value = 0.0;
    let mut gradient = Vec::with_capacity(batch.seg_probs.len() + batch.anchors.iter().map(|a| a.grad_len()).sum::<usize>());
    let mut clamped = false;

    let n_seg = batch.seg_probs.len();
    for &p in &batch.seg_probs {
        let f = focal_loss(p, config.focal_alpha, config.focal_gamma).scaled(1.0 / n_seg as f64);
        value += f.value;
        clamped |= f.clamped;
        gradient.push(f.gradient[0]);
    }

    let n_cls = batch.anchors.len() as f64;
    let n_pos = batch.anchors.iter().filter(|a| a.label >= 1).count();
    let reg_scale = if n_pos == 0 {
        0.0
    } else {
        config.lambda / n_pos as f64
    };
    for (index, a) in batch.anchors.iter().enumerate() {
        let ce = softmax_ce(&a.cls_logits, a.label)?.scaled(1.0 / n_cls);
        value += ce.value;
        gradient.extend(ce.gradient);
        if a.label >= 1 {
            let t = a.target.as_ref().ok_or(Error::UnmatchedProposal { index })?;
            let loc = location_loss(&a.center, &a.size, t, config.delta)?.scaled(reg_scale);
            let ang = angle_loss(&a.angle_logits, a.angle_residual, t.angle_bin, t.angle_residual, config.delta)?
                .scaled(reg_scale);
            value += loc.value + ang.value;
            gradient.extend(loc.gradient);
            gradient.extend(ang.gradient);
        } else {
            gradient.extend(std::iter::repeat_n(0.0, 7 + a.angle_logits.len()));
        }
    }
    Ok(LossValue {
        value,
        gradient,
        clamped,
    })
}

/// Second-stage prediction for one proposal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxPrediction {
    pub proposal: Box3D,
    pub cls_logits: Vec<f64>,
    pub label: usize,
    /// Predicted shift from the proposal center to the ground truth, meters.
    pub center_shift: [f64; 3],
    /// Predicted `(G - P) / P` per size axis.
    pub size_residual: [f64; 3],
    pub angle_logits: Vec<f64>,
    pub angle_residual: f64,
    pub predicted_iou: f64,
    /// Assigned ground truth; required for positives.
    pub gt: Option<Box3D>,
}

impl BoxPrediction {
    fn grad_len(&self) -> usize {
        self.cls_logits.len() + 8 + self.angle_logits.len()
    }

    /// The refined box: shifted center, scaled size, and the yaw from the
    /// highest-scoring angle bin plus the predicted residual.
    pub fn decoded_box(&self, bins: usize) -> Result<Box3D> {
        let bin = argmax(&self.angle_logits).ok_or(Error::EmptyBatch)?;
        let yaw = decode_angle(bin, self.angle_residual, bins)?;
        let p = &self.proposal;
        Ok(Box3D::new_unchecked(
            [
                p.cx + self.center_shift[0],
                p.cy + self.center_shift[1],
                p.cz + self.center_shift[2],
            ],
            [
                p.l * (1.0 + self.size_residual[0]),
                p.w * (1.0 + self.size_residual[1]),
                p.h * (1.0 + self.size_residual[2]),
            ],
            yaw,
        ))
    }

    /// Regression targets of the assigned ground truth w.r.t. the proposal.
    pub fn target(&self, bins: usize) -> Option<Result<ProposalTarget>> {
        self.gt
            .as_ref()
            .map(|g| encode_box_targets(self.proposal.center(), self.proposal.size(), g, bins))
    }
}

fn argmax(v: &[f64]) -> Option<usize> {
    v.iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, x)| match best {
            Some((_, b)) if b >= *x => best,
            _ => Some((i, *x)),
        })
        .map(|(i, _)| i)
}

/// Second-stage objective: the first-stage classification and regression
/// terms, plus corner loss and IoU-branch loss on positives.
///
/// `mean_i CE + λ / N_pos · Σ_pos (L_loc + L_ang + L_corner + L_iou)`
///
/// Gradient layout per proposal: `[cls logits, center shift 3, size residual
/// 3, angle logits, angle residual, predicted IoU]`. The corner term flows
/// into the shift, size and residual entries through the decoded box.
pub fn box_loss(batch: &[BoxPrediction], config: &LossConfig) -> Result<LossValue> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n_cls = batch.len() as f64;
    let n_pos = batch.iter().filter(|b| b.label >= 1).count();
    let reg_scale = if n_pos == 0 {
        0.0
    } else {
        config.lambda / n_pos as f64
    };
    let mut value = 0.0;
    let mut gradient = Vec::with_capacity(batch.iter().map(|b| b.grad_len()).sum());
    for (index, b) in batch.iter().enumerate() {
        let ce = softmax_ce(&b.cls_logits, b.label)?.scaled(1.0 / n_cls);
        value += ce.value;
        gradient.extend(ce.gradient);
        if b.label == 0 {
            gradient.extend(std::iter::repeat_n(0.0, 8 + b.angle_logits.len()));
            continue;
        }
        let gt = b.gt.as_ref().ok_or(Error::UnmatchedProposal { index })?;
        let t = b.target(config.angle_bins).expect("gt present")?;
        let loc = location_loss(&b.center_shift, &b.size_residual, &t, config.delta)?;
        let ang = angle_loss(&b.angle_logits, b.angle_residual, t.angle_bin, t.angle_residual, config.delta)?;
        let decoded = b.decoded_box(config.angle_bins)?;
        let corner = corner_loss_with(&decoded, gt, config.corner_matching);
        let iou = iou_branch_loss(b.predicted_iou, &b.proposal, Some(gt), config.delta)?;

        value += reg_scale * (loc.value + ang.value + corner.value + iou.value);
        let na = b.angle_logits.len();
        let mut block = vec![0.0; 8 + na];
        // chain the corner gradient through the decoding
        let p = &b.proposal;
        for k in 0..3 {
            block[k] = loc.gradient[k] + corner.gradient[k];
        }
        block[3] = loc.gradient[3] + corner.gradient[3] * p.l;
        block[4] = loc.gradient[4] + corner.gradient[4] * p.w;
        block[5] = loc.gradient[5] + corner.gradient[5] * p.h;
        block[6..6 + na].copy_from_slice(&ang.gradient[..na]);
        block[6 + na] = ang.gradient[na] + corner.gradient[6];
        block[7 + na] = iou.gradient[0];
        gradient.extend(block.into_iter().map(|g| g * reg_scale));
    }
    Ok(LossValue {
        value,
        gradient,
        clamped: false,
    })
}
