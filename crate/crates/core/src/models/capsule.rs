//! Capsule classifiers. Each n-gram branch runs a convolutional feature
//! layer, forms primary capsules at every position, and routes them to the
//! four class capsules by iterative agreement; the class scores are the
//! capsule norms. Capsule-A uses a single 3-gram branch, Capsule-B averages
//! the class norms of 3/4/5-gram branches.

use super::recurrent::embed_sequence;
use super::{ModelSpec, Parameters};
use crate::error::{Error, Result};
use crate::tensor::{he_init, Mode, Tape, Tensor, Var};
use crate::textprep::NUM_CLASSES;
use rand::Rng;

/// Agreement routing: coupling logits start at zero; each iteration
/// softmaxes them over the output capsules, forms weighted sums, squashes,
/// and reinforces the logits with the prediction/output agreement.
///
/// Returns the output capsules `[J, D]` and the coupling-coefficient matrix
/// of every iteration (each row sums to 1).
pub fn dynamic_routing(tape: &mut Tape, uhat: Var, iterations: usize) -> Result<(Var, Vec<Var>)> {
    if iterations == 0 {
        return Err(Error::Config("routing needs at least one iteration".into()));
    }
    let shape = tape.shape(uhat).to_vec();
    if shape.len() != 3 {
        return Err(Error::Dimension {
            op: "dynamic_routing",
            lhs: shape,
            rhs: vec![],
        });
    }
    let mut logits = tape.constant(Tensor::zeros(vec![shape[0], shape[1]]));
    let mut coupling = Vec::with_capacity(iterations);
    let mut output = None;
    for iter in 0..iterations {
        let c = tape.softmax(logits);
        coupling.push(c);
        let s = tape.caps_weighted_sum(uhat, c)?;
        let v = tape.squash_rows(s)?;
        if iter + 1 < iterations {
            let agreement = tape.caps_agreement(uhat, v)?;
            logits = tape.add(logits, agreement)?;
        }
        output = Some(v);
    }
    Ok((output.expect("iterations >= 1"), coupling))
}

struct Branch {
    gram: usize,
    conv_kernels: usize,
    conv_bias: usize,
    primary_w: usize,
    primary_b: usize,
    transform: usize,
}

pub(crate) struct CapsuleArch {
    branches: Vec<Branch>,
}

impl CapsuleArch {
    pub(crate) fn build<R: Rng>(
        spec: &ModelSpec,
        params: &mut Parameters,
        rng: &mut R,
    ) -> Result<CapsuleArch> {
        let routing = spec.routing.as_ref().expect("validated");
        let (filters, types, dim) = (
            routing.conv_filters,
            routing.capsule_filters,
            routing.capsule_dim,
        );
        let mut branches = Vec::new();
        for &gram in &routing.grams {
            let prefix = format!("branch{gram}");
            branches.push(Branch {
                gram,
                conv_kernels: params.push(
                    format!("{prefix}.conv.kernels"),
                    he_init(
                        vec![gram, spec.embedding_dim, filters],
                        gram * spec.embedding_dim,
                        rng,
                    )?,
                ),
                conv_bias: params.push(
                    format!("{prefix}.conv.bias"),
                    Tensor::vector(vec![0.0; filters]),
                ),
                primary_w: params.push(
                    format!("{prefix}.primary.w"),
                    he_init(vec![filters, types * dim], filters, rng)?,
                ),
                primary_b: params.push(
                    format!("{prefix}.primary.b"),
                    Tensor::vector(vec![0.0; types * dim]),
                ),
                transform: params.push(
                    format!("{prefix}.transform"),
                    he_init(vec![types * NUM_CLASSES, dim, dim], dim, rng)?,
                ),
            });
        }
        Ok(CapsuleArch { branches })
    }

    pub(crate) fn forward<R: Rng>(
        &self,
        tape: &mut Tape,
        bound: &[Var],
        spec: &ModelSpec,
        embedding: Var,
        ids: &[u32],
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        let routing = spec.routing.as_ref().expect("validated");
        let seq = embed_sequence(tape, embedding, ids, spec.dropout_p, mode, rng)?;
        let mut branch_norms = Vec::with_capacity(self.branches.len());
        for branch in &self.branches {
            let conv = tape.conv1d(seq, bound[branch.conv_kernels], 1, 1)?;
            let conv = tape.add(conv, bound[branch.conv_bias])?;
            let features = tape.relu(conv); // [P, filters]

            // Primary capsules: a position-wise projection into
            // `capsule_filters` capsules of `capsule_dim`, squashed per capsule.
            let pre = tape.matmul(features, bound[branch.primary_w])?;
            let pre = tape.add(pre, bound[branch.primary_b])?;
            let positions = tape.shape(pre)[0];
            let caps = tape.reshape(
                pre,
                vec![positions * routing.capsule_filters, routing.capsule_dim],
            )?;
            let primary = tape.squash_rows(caps)?;

            let uhat = tape.caps_predict(
                primary,
                bound[branch.transform],
                routing.capsule_filters,
                NUM_CLASSES,
            )?;
            let (class_caps, _) = dynamic_routing(tape, uhat, routing.iterations)?;
            branch_norms.push(tape.row_norms(class_caps)?);
        }
        // Capsule-B fuses branches by averaging class-capsule norms.
        let mut acc = branch_norms[0];
        for &n in &branch_norms[1..] {
            acc = tape.add(acc, n)?;
        }
        if branch_norms.len() > 1 {
            acc = tape.scale(acc, 1.0 / branch_norms.len() as f64);
        }
        Ok(acc)
    }

    pub(crate) fn branch_count(&self) -> usize {
        self.branches.len()
    }

    pub(crate) fn branch_grams(&self) -> Vec<usize> {
        self.branches.iter().map(|b| b.gram).collect()
    }
}
