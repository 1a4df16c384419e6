//! Central finite-difference check of tape gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{NodeId, Tensor};
use crate::error::Result;

use super::layers::Ctx;
use super::params::{ParamLayout, PredictorParams};

/// Differences below this are treated as exact agreement.
pub const ABS_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest relative error among entries above the absolute floor.
    pub max_rel_error: f64,
    /// Largest absolute difference over all entries, floor included.
    pub max_abs_error: f64,
    /// Number of scalar partials compared.
    pub checked: usize,
    /// Parameter (or input, offset past the parameters) with the largest error.
    pub worst: Option<usize>,
}

fn entry_error(fd: f64, an: f64) -> f64 {
    let abs = (fd - an).abs();
    if abs < ABS_FLOOR {
        0.0
    } else {
        abs / fd.abs().max(an.abs())
    }
}

/// Contracts the objective's output against fixed random weights and
/// compares analytic gradients for every parameter and every input entry
/// with central differences of the given step.
pub fn check_gradients<F>(
    layout: &ParamLayout,
    params: &PredictorParams,
    inputs: &[Tensor],
    embedding: &[f64],
    step: f64,
    objective: F,
) -> GradCheckReport
where
    F: Fn(&mut Ctx, &[NodeId]) -> Result<NodeId>,
{
    let weights = std::cell::OnceCell::<Tensor>::new();
    let eval = |p: &PredictorParams, ins: &[Tensor], want_grad: bool| {
        let mut ctx = Ctx::new(layout, p, embedding.to_vec());
        let ids: Vec<NodeId> = ins.iter().map(|t| ctx.tape.leaf(t.clone())).collect();
        let out = objective(&mut ctx, &ids).expect("objective failed");
        let (r, c) = ctx.tape.shape(out);
        let w = weights.get_or_init(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
            Tensor::new(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect())
        });
        let wi = ctx.tape.leaf(w.clone());
        let prod = ctx.tape.mul(out, wi);
        let loss = ctx.tape.sum(prod);
        let value = ctx.tape.value(loss).data[0];
        if !want_grad {
            return (value, Vec::new(), Vec::new());
        }
        let grads = ctx.tape.backward(loss);
        let (pg, _) = ctx.param_gradients(&grads);
        let ig = ids
            .iter()
            .map(|id| grads.get(*id).map(|g| g.data.clone()).unwrap_or_else(|| vec![0.0; ctx.tape.value(*id).data.len()]))
            .collect::<Vec<_>>();
        (value, pg, ig)
    };

    let (_, pgrad, igrad) = eval(params, inputs, true);
    let mut report = GradCheckReport { max_rel_error: 0.0, max_abs_error: 0.0, checked: 0, worst: None };
    let note = |idx: usize, fd: f64, an: f64, report: &mut GradCheckReport| {
        let e = entry_error(fd, an);
        report.checked += 1;
        report.max_abs_error = report.max_abs_error.max((fd - an).abs());
        if e > report.max_rel_error || report.worst.is_none() {
            report.worst = Some(idx);
            report.max_rel_error = e;
        }
    };

    let mut p = params.clone();
    for i in 0..params.len() {
        let orig = p.values()[i];
        p.values_mut()[i] = orig + step;
        let up = eval(&p, inputs, false).0;
        p.values_mut()[i] = orig - step;
        let down = eval(&p, inputs, false).0;
        p.values_mut()[i] = orig;
        note(i, (up - down) / (2.0 * step), pgrad[i], &mut report);
    }

    let mut ins = inputs.to_vec();
    let mut offset = params.len();
    for (k, g) in igrad.iter().enumerate() {
        for j in 0..g.len() {
            let orig = ins[k].data[j];
            ins[k].data[j] = orig + step;
            let up = eval(params, &ins, false).0;
            ins[k].data[j] = orig - step;
            let down = eval(params, &ins, false).0;
            ins[k].data[j] = orig;
            note(offset + j, (up - down) / (2.0 * step), g[j], &mut report);
        }
        offset += g.len();
    }
    report
}
