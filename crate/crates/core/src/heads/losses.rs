//! Differentiable loss terms, independent of any network.

use std::f64::consts::PI;

use steerlab_autodiff::{Graph, Tensor, Var};

use crate::error::{ensure, Result};

fn rows_cols(g: &Graph, v: Var) -> (usize, usize) {
    g.value(v).dims2().unwrap_or((1, g.value(v).numel()))
}

/// Mean absolute error between a length-`B` prediction and targets.
pub fn mae(g: &mut Graph, pred: Var, targets: &[f64]) -> Result<Var> {
    ensure!(
        g.value(pred).numel() == targets.len() && !targets.is_empty(),
        InvalidArgument,
        "{} predictions for {} targets",
        g.value(pred).numel(),
        targets.len()
    );
    ensure!(
        targets.iter().all(|t| t.is_finite()) && g.value(pred).is_finite(),
        InvalidArgument,
        "non-finite regression input"
    );
    let shape = g.value(pred).shape().to_vec();
    let t = g.input(Tensor::new(shape, targets.to_vec())?);
    let d = g.sub(pred, t)?;
    let a = g.abs(d);
    Ok(g.mean(a)?)
}

/// Cross-entropy of `softmax(logits)` against one class index per row, batch-averaged.
pub fn cross_entropy(g: &mut Graph, logits: Var, classes: &[usize]) -> Result<Var> {
    let (rows, n) = rows_cols(g, logits);
    ensure!(classes.len() == rows, InvalidArgument, "{} labels for {rows} rows", classes.len());
    ensure!(
        classes.iter().all(|&c| c < n),
        InvalidArgument,
        "class index out of range for {n} classes"
    );
    let lp = g.log_softmax(logits)?;
    let picked = g.gather(lp, classes)?;
    let m = g.mean(picked)?;
    Ok(g.neg(m))
}

/// Cross-entropy of `softmax(logits)` against target distributions (`B×n`), batch-averaged.
pub fn soft_cross_entropy(g: &mut Graph, logits: Var, targets: &Tensor) -> Result<Var> {
    let shape = g.value(logits).shape().to_vec();
    ensure!(
        targets.shape() == shape.as_slice(),
        InvalidArgument,
        "targets {:?} do not match logits {:?}",
        targets.shape(),
        shape
    );
    let rows = rows_cols(g, logits).0 as f64;
    let lp = g.log_softmax(logits)?;
    let t = g.input(targets.clone());
    let prod = g.mul(lp, t)?;
    let s = g.sum(prod);
    Ok(g.scale(s, -1.0 / rows))
}

/// Target specification for [`ebm_loss`].
pub enum EbmTargets<'a> {
    /// Index of the ground-truth entry in every row.
    OneHot(&'a [usize]),
    /// Full target distribution per row.
    Soft(&'a Tensor),
}

/// `CE(softmax(-e), y)`: the ground truth should receive the lowest energy.
pub fn ebm_loss(g: &mut Graph, energies: Var, targets: EbmTargets<'_>) -> Result<Var> {
    let neg = g.neg(energies);
    match targets {
        EbmTargets::OneHot(idx) => cross_entropy(g, neg, idx),
        EbmTargets::Soft(t) => soft_cross_entropy(g, neg, t),
    }
}

/// `alpha · ‖e_t − e_{t+1}‖₂` averaged over consecutive-frame pairs.
///
/// `energies` holds only the shared candidate columns; ground-truth entries
/// must be excluded by the caller because they differ between frames.
pub fn temporal_smoothing(g: &mut Graph, energies: Var, pairs: &[(usize, usize)], alpha: f64) -> Result<Var> {
    ensure!(!pairs.is_empty(), InvalidArgument, "temporal smoothing needs at least one pair");
    let first: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let second: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let a = g.select_rows(energies, &first)?;
    let b = g.select_rows(energies, &second)?;
    let d = g.sub(a, b)?;
    let norms = g.l2norm(d)?;
    let m = g.mean(norms)?;
    Ok(g.scale(m, alpha))
}

/// Mixture negative log-likelihood from raw network outputs.
///
/// `raw` is `B×3m` laid out as `[μ (normalized), log σ (normalized), α logits]`.
/// Means map to degrees as `center + half_range·μ`; standard deviations as
/// `half_range·exp(s) + sigma_floor`.
pub fn mdn_nll(
    g: &mut Graph,
    raw: Var,
    targets: &[f64],
    center: f64,
    half_range: f64,
    sigma_floor: f64,
) -> Result<Var> {
    let (rows, cols) = rows_cols(g, raw);
    ensure!(cols % 3 == 0 && cols > 0, InvalidArgument, "mixture output width {cols} is not 3m");
    ensure!(targets.len() == rows, InvalidArgument, "{} targets for {rows} rows", targets.len());
    let m = cols / 3;
    let mu_raw = g.slice_cols(raw, 0, m)?;
    let s_raw = g.slice_cols(raw, m, 2 * m)?;
    let a_raw = g.slice_cols(raw, 2 * m, 3 * m)?;

    let mu_scaled = g.scale(mu_raw, half_range);
    let mu = g.add_scalar(mu_scaled, center);
    let s_exp = g.exp(s_raw);
    let s_scaled = g.scale(s_exp, half_range);
    let sigma = g.add_scalar(s_scaled, sigma_floor);

    let t: Vec<f64> = targets.iter().flat_map(|&t| std::iter::repeat(t).take(m)).collect();
    let t = g.input(Tensor::matrix(rows, m, t)?);
    let diff = g.sub(t, mu)?;
    let z = g.div(diff, sigma)?;
    let z2 = g.square(z);
    let quad = g.scale(z2, -0.5);
    let log_sigma = g.log(sigma);
    let log_alpha = g.log_softmax(a_raw)?;
    let c = g.sub(quad, log_sigma)?;
    let c = g.add(c, log_alpha)?;
    let c = g.add_scalar(c, -0.5 * (2.0 * PI).ln());
    let lse = g.logsumexp_rows(c)?;
    let mean = g.mean(lse)?;
    Ok(g.neg(mean))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(g: &Graph, v: Var) -> f64 {
        g.value(v).item()
    }

    #[test]
    fn mae_examples_and_subgradient() {
        let mut g = Graph::new();
        let p = g.input(Tensor::vector(vec![1.0, 3.0]));
        let l = mae(&mut g, p, &[0.0, 0.0]).unwrap();
        assert_eq!(scalar(&g, l), 2.0);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(p).unwrap().data(), &[0.5, 0.5]);

        let mut g = Graph::new();
        let p = g.input(Tensor::vector(vec![4.0, -2.0]));
        let l = mae(&mut g, p, &[4.0, -1.0]).unwrap();
        assert_eq!(scalar(&g, l), 0.5);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(p).unwrap().data()[1], -0.5);
        assert!(mae(&mut g, p, &[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let mut g = Graph::new();
        let logits = g.input(Tensor::zeros(&[1, 512]));
        let l = cross_entropy(&mut g, logits, &[17]).unwrap();
        assert!((scalar(&g, l) - 512f64.ln()).abs() < 1e-12);
        assert!((scalar(&g, l) - 6.238).abs() < 5e-4);

        let mut row = vec![0.0; 512];
        row[3] = 20.0;
        let logits = g.input(Tensor::matrix(1, 512, row).unwrap());
        let l = cross_entropy(&mut g, logits, &[3]).unwrap();
        let expect = (1.0 + 511.0 * (-20f64).exp()).ln();
        // Cancellation against the +20 logit leaves about 1e-14 absolute error.
        assert!((scalar(&g, l) - expect).abs() < 1e-8 * expect, "{} vs {expect}", scalar(&g, l));
        assert!(cross_entropy(&mut g, logits, &[512]).is_err());
    }

    #[test]
    fn dominant_margin_drives_cross_entropy_to_zero() {
        // ln(1 + (n-1)e^-margin) for n = 2 and margin 20 is about 2.06e-9.
        let mut g = Graph::new();
        let logits = g.input(Tensor::matrix(1, 2, vec![20.0, 0.0]).unwrap());
        let l = cross_entropy(&mut g, logits, &[0]).unwrap();
        assert!(scalar(&g, l) < 1e-8);
    }

    #[test]
    fn ebm_loss_examples() {
        let mut g = Graph::new();
        let e = g.input(Tensor::zeros(&[1, 4]));
        let l = ebm_loss(&mut g, e, EbmTargets::OneHot(&[2])).unwrap();
        assert!((scalar(&g, l) - 4f64.ln()).abs() < 1e-12);

        let e = g.input(Tensor::matrix(1, 3, vec![0.0, 10.0, 10.0]).unwrap());
        let l = ebm_loss(&mut g, e, EbmTargets::OneHot(&[0])).unwrap();
        let expect = (1.0 + 2.0 * (-10f64).exp()).ln();
        assert!((scalar(&g, l) - expect).abs() < 1e-15);
        assert!((scalar(&g, l) - 9.08e-5).abs() < 5e-8);
    }

    #[test]
    fn temporal_examples() {
        let mut g = Graph::new();
        let e = g.input(Tensor::matrix(2, 2, vec![1.0, 2.0, 1.0, 4.0]).unwrap());
        let l = temporal_smoothing(&mut g, e, &[(0, 1)], 1.0).unwrap();
        assert_eq!(scalar(&g, l), 2.0);
        let l2 = temporal_smoothing(&mut g, e, &[(0, 1)], 2.0).unwrap();
        assert_eq!(scalar(&g, l2), 4.0);
        let same = temporal_smoothing(&mut g, e, &[(0, 0)], 1.0).unwrap();
        assert_eq!(scalar(&g, same), 0.0);
    }

    #[test]
    fn mdn_standard_normal_density() {
        // One component, μ = 0, σ = 1 degree, target 0 → ½ ln 2π.
        let mut g = Graph::new();
        let raw = g.input(Tensor::matrix(1, 3, vec![0.0, 0.0, 0.0]).unwrap());
        let l = mdn_nll(&mut g, raw, &[0.0], 0.0, 1.0, 0.0).unwrap();
        assert!((scalar(&g, l) - 0.5 * (2.0 * PI).ln()).abs() < 1e-12);
        assert!((scalar(&g, l) - 0.9189).abs() < 5e-5);
    }

    #[test]
    fn mdn_far_target_stays_finite() {
        let mut g = Graph::new();
        let raw = g.input(Tensor::matrix(1, 6, vec![-1.0, 1.0, -12.0, -12.0, 0.0, 0.0]).unwrap());
        let l = mdn_nll(&mut g, raw, &[0.0], 0.0, 250.0, 1e-3).unwrap();
        assert!(scalar(&g, l).is_finite());
    }
}
