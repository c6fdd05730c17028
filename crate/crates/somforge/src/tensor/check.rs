//! Central-finite-difference gradient checking.
//!
//! Used both by the test suites and by the CLI self-test. The check builds
//! `loss = reduce_mean(op(inputs) * weights)` with fixed random weights so
//! that output permutations and scalings are both visible, then compares the
//! reverse-mode gradient of every input element against a central difference.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Graph, NodeId, Op, Tensor};
use crate::Result;

/// Outcome of one primitive's gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub op: String,
    pub max_rel_err: f64,
}

fn loss_of(g: &mut Graph, op: &Op, input_ids: &[NodeId], weights: &Tensor) -> Result<NodeId> {
    let out = g.apply(op.clone(), input_ids)?;
    let w = g.input(weights.clone());
    let prod = g.apply(Op::Mul, &[out, w])?;
    g.apply(Op::ReduceMean, &[prod])
}

/// Check one primitive (f64 inputs): reverse-mode vs central difference with
/// step `h`. Returns the max relative error over all input elements,
/// normalized as |analytic - numeric| / max(1, |numeric|).
pub fn grad_check(op: &Op, inputs: &[Tensor], h: f64, rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    // fixed random projection weights over the output
    let out_shape = {
        let mut g = Graph::inference();
        let ids: Vec<NodeId> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let out = g.apply(op.clone(), &ids)?;
        g.value(out).shape().to_vec()
    };
    let weights = Tensor::from_f64(
        &out_shape,
        (0..out_shape.iter().product::<usize>())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    );

    // analytic gradients
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let loss = loss_of(&mut g, op, &ids, &weights)?;
    let grads = g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = ids.iter().map(|&id| grads.get(id).to_f64_vec()).collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut g = Graph::inference();
        let ids: Vec<NodeId> = perturbed.iter().map(|t| g.input(t.clone())).collect();
        let loss = loss_of(&mut g, op, &ids, &weights)?;
        g.value(loss).scalar_value()
    };

    let mut max_rel = 0.0f64;
    for (which, input) in inputs.iter().enumerate() {
        for idx in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[which].f64_data_mut()[idx] += h;
            let mut minus = inputs.to_vec();
            minus[which].f64_data_mut()[idx] -= h;
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
            let a = analytic[which][idx];
            let rel = (a - numeric).abs() / numeric.abs().max(1.0);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(GradCheckReport { op: op.name().to_string(), max_rel_err: max_rel })
}

/// Random f64 tensor with entries in [-1, 1], kink-avoiding (no value within
/// `margin` of zero so piecewise primitives differentiate cleanly).
pub fn random_input(shape: &[usize], rng: &mut ChaCha8Rng, margin: f64) -> Tensor {
    let data: Vec<f64> = (0..shape.iter().product::<usize>())
        .map(|_| loop {
            let v: f64 = rng.random_range(-1.0..1.0);
            if v.abs() >= margin {
                break v;
            }
        })
        .collect();
    Tensor::from_f64(shape, data)
}

/// The full primitive coverage list with representative input shapes.
/// Every entry is (op, inputs).
pub fn coverage_cases(rng: &mut ChaCha8Rng) -> Vec<(Op, Vec<Tensor>)> {
    let m = 0.05; // kink margin for relu-like ops
    vec![
        (
            Op::Conv2d,
            vec![random_input(&[2, 3, 4, 4], rng, 0.0), random_input(&[2, 3, 3, 3], rng, 0.0)],
        ),
        (
            Op::Conv2d, // 1x1 projection kernel as used by toRGB/fromRGB
            vec![random_input(&[2, 3, 4, 4], rng, 0.0), random_input(&[1, 3, 1, 1], rng, 0.0)],
        ),
        (Op::Dense, vec![random_input(&[3, 5], rng, 0.0), random_input(&[4, 5], rng, 0.0)]),
        (Op::BiasAdd, vec![random_input(&[2, 3, 2, 2], rng, 0.0), random_input(&[3], rng, 0.0)]),
        (Op::BiasAdd, vec![random_input(&[3, 4], rng, 0.0), random_input(&[4], rng, 0.0)]),
        (Op::LeakyRelu { slope: 0.2 }, vec![random_input(&[2, 7], rng, m)]),
        (Op::Tanh, vec![random_input(&[11], rng, 0.0)]),
        (Op::Softplus, vec![random_input(&[9], rng, 0.0)]),
        (Op::Add, vec![random_input(&[6], rng, 0.0), random_input(&[6], rng, 0.0)]),
        (Op::Mul, vec![random_input(&[6], rng, 0.0), random_input(&[6], rng, 0.0)]),
        (Op::ScaleByConstant { factor: -1.7 }, vec![random_input(&[5], rng, 0.0)]),
        (Op::UpsampleNearest2x, vec![random_input(&[1, 2, 3, 3], rng, 0.0)]),
        (Op::AvgPool2x, vec![random_input(&[1, 2, 4, 4], rng, 0.0)]),
        (Op::PixelNorm { eps: 1e-8 }, vec![random_input(&[2, 3, 2, 2], rng, 0.0)]),
        (Op::ReduceMean, vec![random_input(&[7], rng, 0.0)]),
        (Op::Reshape { shape: vec![4, 2] }, vec![random_input(&[2, 4], rng, 0.0)]),
        (Op::MinibatchStddev { eps: 1e-8 }, vec![random_input(&[3, 2, 2, 2], rng, 0.0)]),
        (Op::Dft2, vec![random_input(&[1, 1, 4, 4], rng, 0.0)]),
        (Op::Idft2Real, vec![random_input(&[1, 2, 4, 4], rng, 0.0)]),
    ]
}

/// Run the whole coverage list; fail if any primitive exceeds `tol`.
pub fn check_all_primitives(seed: u64, h: f64, tol: f64) -> Result<Vec<GradCheckReport>> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cases = coverage_cases(&mut rng);
    let mut reports = Vec::new();
    for (op, inputs) in cases {
        let rep = grad_check(&op, &inputs, h, &mut rng)?;
        if rep.max_rel_err > tol {
            return Err(crate::Error::Validation(format!(
                "gradient check failed for {}: max rel err {:.3e} > {tol:.1e}",
                rep.op, rep.max_rel_err
            )));
        }
        reports.push(rep);
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_primitive_passes_finite_difference_check() {
        let reports = check_all_primitives(42, 1e-5, 1e-4).unwrap();
        assert_eq!(reports.len(), 19);
        for r in &reports {
            assert!(r.max_rel_err <= 1e-4, "{}: {:.3e}", r.op, r.max_rel_err);
        }
    }
}
