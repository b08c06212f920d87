//! Soft Dice objective and overlap metrics.
//!
//! The soft coefficient over voxels `i` is
//! `D = 2·Σ pᵢgᵢ / (Σ pᵢ² + Σ gᵢ²)`, with `D = 1` when both sums vanish.
//! The training loss is `1 − D`.

use crate::error::{Error, Result};
use crate::tensor::{same_shape, Real, Tensor};
use crate::volume::LabelVolume;

struct DiceSums {
    pg: f64,
    pp: f64,
    gg: f64,
}

fn sums<T: Real>(p: &[T], g: &[T]) -> DiceSums {
    let mut s = DiceSums {
        pg: 0.0,
        pp: 0.0,
        gg: 0.0,
    };
    for (&p, &g) in p.iter().zip(g) {
        let (p, g) = (p.to_f64(), g.to_f64());
        s.pg += p * g;
        s.pp += p * p;
        s.gg += g * g;
    }
    s
}

impl DiceSums {
    fn coefficient(&self) -> f64 {
        let den = self.pp + self.gg;
        if den == 0.0 {
            1.0
        } else {
            2.0 * self.pg / den
        }
    }
}

/// Soft Dice coefficient of a probability tensor against a binary target.
pub fn dice_coefficient<T: Real>(p: &Tensor<T>, g: &Tensor<T>) -> Result<f64> {
    same_shape(p, g, "dice")?;
    Ok(sums(p.data(), g.data()).coefficient())
}

fn loss_and_grad_slice<T: Real>(p: &[T], g: &[T], scale: f64, grad: &mut Vec<T>) -> f64 {
    let s = sums(p, g);
    let den = s.pp + s.gg;
    if den == 0.0 {
        // all-zero prediction and target: D ≡ 1 at this point, no usable slope
        grad.extend(std::iter::repeat_n(T::ZERO, p.len()));
        return 0.0;
    }
    let inv = 1.0 / (den * den);
    grad.extend(p.iter().zip(g).map(|(&pj, &gj)| {
        let d_dp = 2.0 * (gj.to_f64() * den - 2.0 * pj.to_f64() * s.pg) * inv;
        T::from_f64(-d_dp * scale)
    }));
    1.0 - 2.0 * s.pg / den
}

/// Dice loss `1 − D` and its analytic gradient with respect to `p`:
/// `∂D/∂pⱼ = 2·(gⱼ·(Σp² + Σg²) − 2pⱼ·Σpg) / (Σp² + Σg²)²`, negated.
pub fn dice_loss_and_grad<T: Real>(p: &Tensor<T>, g: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    same_shape(p, g, "dice loss")?;
    let mut grad = Vec::with_capacity(p.len());
    let loss = loss_and_grad_slice(p.data(), g.data(), 1.0, &mut grad);
    Ok((loss, Tensor::new(p.shape().to_vec(), grad)?))
}

/// Mean Dice loss over the leading (batch) axis, each sample scored on its own.
pub fn batch_dice_loss_and_grad<T: Real>(p: &Tensor<T>, g: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    same_shape(p, g, "dice loss")?;
    let n = p.shape()[0];
    let per = p.len() / n;
    let mut grad = Vec::with_capacity(p.len());
    let scale = 1.0 / n as f64;
    let mut loss = 0.0;
    for (ps, gs) in p.data().chunks_exact(per).zip(g.data().chunks_exact(per)) {
        loss += loss_and_grad_slice(ps, gs, scale, &mut grad);
    }
    Ok((loss * scale, Tensor::new(p.shape().to_vec(), grad)?))
}

/// Overlap metrics between a segmentation `V_s` and a reference `V_g`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub dsc: f64,
    pub jsc: f64,
    /// `|V_s ∩ V_g| / |V_g|`
    pub pi: f64,
    /// `|V_s ∩ V_g| / |V_s|`
    pub ri: f64,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "dsc,jsc,pi,ri";

    pub fn zero() -> Self {
        MetricReport {
            dsc: 0.0,
            jsc: 0.0,
            pi: 0.0,
            ri: 0.0,
        }
    }

    pub fn to_csv_row(&self) -> String {
        format!("{:.6},{:.6},{:.6},{:.6}", self.dsc, self.jsc, self.pi, self.ri)
    }

    /// Arithmetic mean of each field; `None` for an empty slice.
    pub fn mean(reports: &[MetricReport]) -> Option<MetricReport> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let sum = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        Some(MetricReport {
            dsc: sum(|r| r.dsc),
            jsc: sum(|r| r.jsc),
            pi: sum(|r| r.pi),
            ri: sum(|r| r.ri),
        })
    }
}

/// Set counts `(|V_s ∩ V_g|, |V_s|, |V_g|)`.
pub fn overlap_counts(seg: &LabelVolume, reference: &LabelVolume) -> Result<(usize, usize, usize)> {
    if seg.dims() != reference.dims() {
        return Err(Error::ShapeMismatch(format!(
            "metrics: {:?} vs {:?}",
            seg.dims(),
            reference.dims()
        )));
    }
    let mut counts = (0, 0, 0);
    for (&s, &g) in seg.data().iter().zip(reference.data()) {
        counts.0 += usize::from(s & g);
        counts.1 += usize::from(s);
        counts.2 += usize::from(g);
    }
    Ok(counts)
}

/// Set-form Dice, 1 when both masks are empty.
pub fn dice_score(seg: &LabelVolume, reference: &LabelVolume) -> Result<f64> {
    let (inter, s, g) = overlap_counts(seg, reference)?;
    Ok(if s + g == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (s + g) as f64
    })
}

/// DSC, JSC, PI and RI of `seg` against `reference`.
///
/// Fails with `EmptyReference` when the reference is empty (PI undefined) and
/// with `EmptySegmentation` when only the segmentation is empty (RI undefined).
pub fn compute_metrics(seg: &LabelVolume, reference: &LabelVolume) -> Result<MetricReport> {
    let (inter, s, g) = overlap_counts(seg, reference)?;
    if g == 0 {
        return Err(Error::EmptyReference);
    }
    if s == 0 {
        return Err(Error::EmptySegmentation);
    }
    let (inter, s, g) = (inter as f64, s as f64, g as f64);
    Ok(MetricReport {
        dsc: 2.0 * inter / (s + g),
        jsc: inter / (s + g - inter),
        pi: inter / g,
        ri: inter / s,
    })
}
