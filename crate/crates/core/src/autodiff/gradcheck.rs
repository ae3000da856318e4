//! Central finite-difference verification of analytic gradients.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};

/// Outcome of a gradient check: the worst relative disagreement between the
/// analytic gradient and a central finite difference, and where it was.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    /// Total number of parameter entries compared.
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err < tolerance
    }
}

/// Compares analytic gradients of a scalar-valued computation against
/// central finite differences `(f(x+h) - f(x-h)) / 2h`.
///
/// `build` must construct the computation from scratch on the given graph,
/// binding the supplied parameter nodes (one per entry of `params`, same
/// order), and return the scalar loss node. It is called `2·N+1` times, so
/// it must be deterministic — in particular any dropout inside must run in
/// inference mode.
///
/// The reported error for each entry is
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)`; the floor
/// keeps near-zero gradients from amplifying finite-difference noise into
/// false alarms.
pub fn grad_check<F>(
    params: &mut [(&str, Tensor)],
    mut build: F,
    h: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    if params.is_empty() {
        return Err(Error::invalid("grad_check needs at least one parameter"));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!("grad_check step {h} must be positive")));
    }

    // Analytic pass.
    let mut graph = Graph::new();
    let ids: Vec<NodeId> = params
        .iter()
        .map(|(_, t)| graph.param(t))
        .collect::<Result<_>>()?;
    let loss = build(&mut graph, &ids)?;
    if graph.value(loss).len() != 1 {
        return Err(Error::shape(format!(
            "grad_check needs a scalar loss, got shape {:?}",
            graph.shape(loss)
        )));
    }
    if !graph.value(loss)[0].is_finite() {
        return Err(Error::domain("grad_check loss is not finite".to_string()));
    }
    graph.backward(loss)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|id| graph.grad(*id).map(|g| g.to_vec()))
        .collect::<Result<_>>()?;
    drop(graph);

    let eval = |params: &[(&str, Tensor)], build: &mut F| -> Result<f64> {
        let mut graph = Graph::new();
        let ids: Vec<NodeId> = params
            .iter()
            .map(|(_, t)| graph.param(t))
            .collect::<Result<_>>()?;
        let loss = build(&mut graph, &ids)?;
        Ok(graph.value(loss)[0])
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: params[0].0.to_string(),
        worst_index: 0,
        checked: 0,
    };
    for p in 0..params.len() {
        for i in 0..params[p].1.numel() {
            let original = params[p].1.values()[i];
            params[p].1.values_mut()[i] = original + h;
            let plus = eval(params, &mut build)?;
            params[p].1.values_mut()[i] = original - h;
            let minus = eval(params, &mut build)?;
            params[p].1.values_mut()[i] = original;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[p][i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_param = params[p].0.to_string();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}

/// One named check from a verification suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteCheck {
    pub name: &'static str,
    pub report: GradCheckReport,
}

fn randn(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n: usize = shape.iter().product();
    let values: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::new(shape, values)
        .expect("value count matches shape by construction")
        .with_requires_grad()
}

/// Finite-difference checks covering every differentiable primitive, on
/// random inputs drawn from `seed`. Each entry exercises one small graph;
/// together they reach every op's backward rule, including both conv
/// stride/padding paths and a fixed-mask training-mode dropout.
pub fn primitive_checks(seed: u64) -> Result<Vec<SuiteCheck>> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    // add + mul with batch broadcast, reduced by mean.
    let a = randn(&mut r, vec![3, 4]);
    let b = randn(&mut r, vec![4]);
    out.push(SuiteCheck {
        name: "add+mul broadcast",
        report: grad_check(
            &mut [("a", a), ("b", b)],
            |g, ids| {
                let s = g.add(ids[0], ids[1])?;
                let m = g.mul(s, s)?;
                g.mean(m)
            },
            1e-5,
        )?,
    });

    // matmul → tanh → sum.
    let a = randn(&mut r, vec![3, 5]);
    let b = randn(&mut r, vec![5, 2]);
    out.push(SuiteCheck {
        name: "matmul+tanh",
        report: grad_check(
            &mut [("a", a), ("b", b)],
            |g, ids| {
                let mm = g.matmul(ids[0], ids[1])?;
                let t = g.tanh(mm)?;
                g.sum(t)
            },
            1e-5,
        )?,
    });

    // exp/log/neg chain on positive inputs.
    let x = {
        let t = randn(&mut r, vec![6]);
        let vals: Vec<f64> = t.values().iter().map(|v| v.abs() + 0.5).collect();
        Tensor::new(vec![6], vals)?.with_requires_grad()
    };
    out.push(SuiteCheck {
        name: "exp/log/neg",
        report: grad_check(
            &mut [("x", x)],
            |g, ids| {
                let l = g.log(ids[0])?;
                let e = g.exp(l)?;
                let n = g.neg(e)?;
                g.mean(n)
            },
            1e-5,
        )?,
    });

    // sigmoid + relu (inputs kept away from the relu kink).
    let x = {
        let t = randn(&mut r, vec![8]);
        let vals: Vec<f64> = t
            .values()
            .iter()
            .map(|v| if v.abs() < 0.1 { v + 0.3 } else { *v })
            .collect();
        Tensor::new(vec![8], vals)?.with_requires_grad()
    };
    out.push(SuiteCheck {
        name: "sigmoid+relu",
        report: grad_check(
            &mut [("x", x)],
            |g, ids| {
                let s = g.sigmoid(ids[0])?;
                let r = g.relu(ids[0])?;
                let both = g.mul(s, r)?;
                g.sum(both)
            },
            1e-5,
        )?,
    });

    // slice + concat + reshape.
    let a = randn(&mut r, vec![2, 6]);
    let b = randn(&mut r, vec![2, 3]);
    out.push(SuiteCheck {
        name: "slice+concat+reshape",
        report: grad_check(
            &mut [("a", a), ("b", b)],
            |g, ids| {
                let sl = g.slice(ids[0], 1, 3)?;
                let cat = g.concat(&[sl, ids[1]])?;
                let rs = g.reshape(cat, vec![4, 3])?;
                let sq = g.mul(rs, rs)?;
                g.mean(sq)
            },
            1e-5,
        )?,
    });

    // conv1d with bias, both strides, with and without padding.
    for (name, stride, padding) in [
        ("conv1d stride1 pad1", 1usize, 1usize),
        ("conv1d stride2 pad0", 2, 0),
    ] {
        let x = randn(&mut r, vec![2, 3, 7]);
        let k = randn(&mut r, vec![4, 3, 3]);
        let bias = randn(&mut r, vec![4]);
        out.push(SuiteCheck {
            name,
            report: grad_check(
                &mut [("x", x), ("k", k), ("bias", bias)],
                |g, ids| {
                    let c = g.conv1d(ids[0], ids[1], Some(ids[2]), stride, padding)?;
                    let t = g.tanh(c)?;
                    g.mean(t)
                },
                1e-5,
            )?,
        });
    }

    // Training-mode dropout: reseeding inside the build fixes the mask, so
    // the surviving entries' 1/(1-p) scaling is finite-difference checkable.
    let x = randn(&mut r, vec![12]);
    out.push(SuiteCheck {
        name: "dropout fixed mask",
        report: grad_check(
            &mut [("x", x)],
            |g, ids| {
                let mut mask_rng = ChaCha8Rng::seed_from_u64(7);
                let d = g.dropout(ids[0], 0.4, true, &mut mask_rng)?;
                let sq = g.mul(d, d)?;
                g.mean(sq)
            },
            1e-5,
        )?,
    });

    // bce on sigmoid outputs.
    let logits = randn(&mut r, vec![5]);
    let targets: Vec<f64> = (0..5).map(|i| f64::from(i % 2 == 0)).collect();
    out.push(SuiteCheck {
        name: "bce",
        report: grad_check(
            &mut [("logits", logits)],
            move |g, ids| {
                let p = g.sigmoid(ids[0])?;
                let t = g.constant(vec![5], targets.clone())?;
                g.bce(p, t)
            },
            1e-5,
        )?,
    });

    Ok(out)
}
