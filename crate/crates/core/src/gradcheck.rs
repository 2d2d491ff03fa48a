//! Central finite-difference verification of analytic gradients.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::error::{arg_err, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    /// Cap on coordinates probed per input; `None` probes all.
    pub max_coords: Option<usize>,
    /// Largest tolerated fraction of probes discarded for straddling a kink.
    pub max_skip_fraction: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { step: 1e-3, max_coords: None, max_skip_fraction: 0.1, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub op: String,
    pub max_rel_err: f64,
    /// Worst relative error per input, in input order.
    pub per_input: Vec<f64>,
    pub checked: usize,
    /// Probes discarded because `x +- step` changed a piecewise decision.
    pub skipped: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compare reverse-mode gradients of `f` against central differences.
///
/// `f` receives a fresh graph and one leaf per input and returns the output
/// node; non-scalar outputs are reduced by a fixed random projection.
pub fn grad_check<F>(op: &str, inputs: &[Tensor], cfg: &GradCheckConfig, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut projection: Option<Tensor> = None;
    let mut eval = |vals: &[Tensor], rng: &mut ChaCha8Rng| -> Result<(Graph, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let leaves: Vec<Var> = vals.iter().map(|t| g.leaf(t.clone())).collect();
        let out = f(&mut g, &leaves)?;
        let shape = g.shape(out);
        let proj = projection.get_or_insert_with(|| Tensor::rand_uniform(shape, -1.0, 1.0, rng));
        let weighted = g.mul_const(out, proj)?;
        let loss = g.sum(weighted);
        Ok((g, leaves, loss))
    };

    let (base, leaves, loss) = eval(inputs, &mut rng)?;
    let signature = base.decision_signature();
    let grads = base.backward(loss)?;

    let mut per_input = Vec::with_capacity(inputs.len());
    let (mut checked, mut skipped) = (0, 0);
    let mut work = inputs.to_vec();
    for (i, leaf) in leaves.iter().enumerate() {
        let analytic = grads.get_or_zeros(*leaf, inputs[i].shape());
        let numel = inputs[i].numel();
        let coords: Vec<usize> = match cfg.max_coords {
            Some(m) if m < numel => index::sample(&mut rng, numel, m).into_vec(),
            _ => (0..numel).collect(),
        };
        let mut worst = 0.0f64;
        for c in coords {
            let x0 = inputs[i].data()[c];
            work[i].data_mut()[c] = x0 + cfg.step;
            let (gp, _, lp) = eval(&work, &mut rng)?;
            work[i].data_mut()[c] = x0 - cfg.step;
            let (gm, _, lm) = eval(&work, &mut rng)?;
            work[i].data_mut()[c] = x0;
            if gp.decision_signature() != signature || gm.decision_signature() != signature {
                skipped += 1;
                continue;
            }
            let numeric = (gp.value(lp).data()[0] - gm.value(lm).data()[0]) / (2.0 * cfg.step);
            worst = worst.max(rel_err(analytic.data()[c], numeric));
            checked += 1;
        }
        per_input.push(worst);
    }
    let total = checked + skipped;
    if total > 0 && skipped as f64 > cfg.max_skip_fraction * total as f64 {
        return Err(arg_err("grad_check", format!("{op}: {skipped} of {total} probes straddle a non-differentiable point")));
    }
    let max_rel_err = per_input.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport { op: op.to_string(), max_rel_err, per_input, checked, skipped })
}
