//! Adversarial objectives.
//!
//! `WganClip` is the critic difference with elementwise weight clipping after
//! each discriminator step (the clip itself lives in the trainer).
//! `LogisticNs` is the non-saturating logistic pair. Both lose to the
//! generator through a strictly negative d(loss)/d(fake score).

use crate::tensor::{Graph, NodeId, Op};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossVariant {
    WganClip,
    LogisticNs,
}

impl LossVariant {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "wgan_clip" => Ok(LossVariant::WganClip),
            "logistic_ns" => Ok(LossVariant::LogisticNs),
            other => Err(Error::Config(format!(
                "unknown loss variant '{other}' (expected wgan_clip or logistic_ns)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            LossVariant::WganClip => "wgan_clip",
            LossVariant::LogisticNs => "logistic_ns",
        }
    }

    /// Conventional discriminator steps per generator step.
    pub fn default_d_steps(&self) -> usize {
        match self {
            LossVariant::WganClip => 5,
            LossVariant::LogisticNs => 1,
        }
    }
}

fn neg(g: &mut Graph, x: NodeId) -> Result<NodeId> {
    g.apply(Op::ScaleByConstant { factor: -1.0 }, &[x])
}

/// Discriminator objective from real/fake score batches.
pub fn loss_discriminator(
    g: &mut Graph,
    variant: LossVariant,
    real_scores: NodeId,
    fake_scores: NodeId,
) -> Result<NodeId> {
    match variant {
        LossVariant::WganClip => {
            // mean(fake) - mean(real)
            let mf = g.apply(Op::ReduceMean, &[fake_scores])?;
            let mr = g.apply(Op::ReduceMean, &[real_scores])?;
            let nmr = neg(g, mr)?;
            g.apply(Op::Add, &[mf, nmr])
        }
        LossVariant::LogisticNs => {
            // mean(softplus(-real)) + mean(softplus(fake))
            let nr = neg(g, real_scores)?;
            let sp_r = g.apply(Op::Softplus, &[nr])?;
            let m_r = g.apply(Op::ReduceMean, &[sp_r])?;
            let sp_f = g.apply(Op::Softplus, &[fake_scores])?;
            let m_f = g.apply(Op::ReduceMean, &[sp_f])?;
            g.apply(Op::Add, &[m_r, m_f])
        }
    }
}

/// Generator objective from fake scores.
pub fn loss_generator(g: &mut Graph, variant: LossVariant, fake_scores: NodeId) -> Result<NodeId> {
    match variant {
        LossVariant::WganClip => {
            let mf = g.apply(Op::ReduceMean, &[fake_scores])?;
            neg(g, mf)
        }
        LossVariant::LogisticNs => {
            let nf = neg(g, fake_scores)?;
            let sp = g.apply(Op::Softplus, &[nf])?;
            g.apply(Op::ReduceMean, &[sp])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scores(g: &mut Graph, vals: &[f32]) -> NodeId {
        g.input(Tensor::from_f32(&[vals.len(), 1], vals.to_vec()))
    }

    #[test]
    fn wgan_zero_when_scores_equal() {
        let mut g = Graph::new();
        let r = scores(&mut g, &[0.3, -0.7, 1.1]);
        let f = scores(&mut g, &[0.3, -0.7, 1.1]);
        let l = loss_discriminator(&mut g, LossVariant::WganClip, r, f).unwrap();
        assert_eq!(g.value(l).scalar_value().unwrap(), 0.0);
    }

    #[test]
    fn logistic_at_zero_scores() {
        let mut g = Graph::new();
        let r = scores(&mut g, &[0.0, 0.0]);
        let f = scores(&mut g, &[0.0, 0.0]);
        let ld = loss_discriminator(&mut g, LossVariant::LogisticNs, r, f).unwrap();
        let lg = loss_generator(&mut g, LossVariant::LogisticNs, f).unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert!((g.value(ld).scalar_value().unwrap() - 2.0 * ln2).abs() < 1e-6);
        assert!((g.value(lg).scalar_value().unwrap() - ln2).abs() < 1e-6);
    }

    #[test]
    fn generator_gradient_pushes_scores_up() {
        for variant in [LossVariant::WganClip, LossVariant::LogisticNs] {
            let mut g = Graph::new();
            let f = scores(&mut g, &[0.4, -1.2, 2.0]);
            let lg = loss_generator(&mut g, variant, f).unwrap();
            let grads = g.backward(lg).unwrap();
            for &gv in grads.get(f).f32_data() {
                assert!(gv < 0.0, "{variant:?}: d loss/d score = {gv}");
            }
        }
    }

    #[test]
    fn unknown_variant_rejected() {
        assert!(LossVariant::parse("hinge").is_err());
    }
}
