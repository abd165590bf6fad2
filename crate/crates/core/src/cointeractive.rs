//! Co-interactive graph layers over `2N` task nodes, task decoders and the
//! joint objective.
//!
//! Node states are `[D; S]`: act nodes in rows `0..N`, sentiment nodes in rows
//! `N..2N`. Each layer attends over the union of same-task (cross-utterance)
//! and cross-task neighbors with a single softmax per node and head, so the
//! same-task and cross-task terms share one normalization.

use rand::Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::{EdgeType, Mask, TypedAdjacency};
use crate::nn::{Activation, GatLayer, Lstm};
use crate::params::{uniform, ModelParams, ParamId};

/// Hidden layers use `d/K`-wide heads (concatenated back to `d`); the last layer
/// uses `d`-wide heads that are averaged, so every layer maps `d → d` and the
/// residual connection is shape-valid.
pub fn init_stack(
    params: &mut ModelParams,
    prefix: &str,
    hidden: usize,
    heads: usize,
    layers: usize,
    per_type_projection: bool,
    rng: &mut impl Rng,
) -> Vec<GatLayer> {
    (0..layers)
        .map(|l| {
            let head_dim = if l + 1 == layers {
                hidden
            } else {
                hidden / heads
            };
            GatLayer::init(
                params,
                &format!("{prefix}.layer{l}"),
                hidden,
                head_dim,
                heads,
                per_type_projection,
                rng,
            )
        })
        .collect()
}

/// One layer: attention over `adj`'s neighborhood, then `input + output`.
pub fn cointeractive_layer(
    tape: &mut Tape,
    bound: &[Var],
    h: Var,
    adj: &TypedAdjacency,
    layer: &GatLayer,
    final_layer: bool,
    activation: Activation,
) -> Result<(Var, Vec<Var>)> {
    let neighbors = adj.neighborhood();
    let out = layer.forward(
        tape,
        bound,
        h,
        &neighbors,
        adj.mask(EdgeType::CrossTask),
        final_layer,
        activation,
    )?;
    Ok((tape.add(h, out.output)?, out.attention))
}

#[derive(Debug, Clone)]
pub struct StackOutput {
    /// Final `N×d` act states.
    pub acts: Var,
    /// Final `N×d` sentiment states.
    pub sentiments: Var,
    /// Per layer, one attention matrix per head.
    pub attention: Vec<Vec<Var>>,
}

/// Applies `layers` over `H⁰ = [D⁰; S⁰]` and splits the result.
pub fn stack(
    tape: &mut Tape,
    bound: &[Var],
    d0: Var,
    s0: Var,
    adj: &TypedAdjacency,
    layers: &[GatLayer],
    activation: Activation,
) -> Result<StackOutput> {
    if layers.is_empty() {
        return Err(Error::Config(
            "co-interactive stack needs at least one layer".into(),
        ));
    }
    let n = tape.shape(d0)[0];
    if adj.node_count() != 2 * n {
        return Err(Error::Dimension {
            op: "stack",
            left: tape.shape(d0).to_vec(),
            right: vec![adj.node_count()],
        });
    }
    let mut h = tape.concat(&[d0, s0], 0)?;
    let mut attention = Vec::with_capacity(layers.len());
    for (l, layer) in layers.iter().enumerate() {
        let (next, att) = cointeractive_layer(
            tape,
            bound,
            h,
            adj,
            layer,
            l + 1 == layers.len(),
            activation,
        )?;
        h = next;
        attention.push(att);
    }
    let acts = tape.slice(h, 0, 0, n)?;
    let sentiments = tape.slice(h, 0, n, 2 * n)?;
    Ok(StackOutput {
        acts,
        sentiments,
        attention,
    })
}

/// A residual GAT stack over a single task's `N` nodes (complete graph).
pub fn single_task_stack(
    tape: &mut Tape,
    bound: &[Var],
    x0: Var,
    layers: &[GatLayer],
    activation: Activation,
) -> Result<(Var, Vec<Vec<Var>>)> {
    let n = tape.shape(x0)[0];
    let mask = Mask::full(n);
    let mut h = x0;
    let mut attention = Vec::with_capacity(layers.len());
    for (l, layer) in layers.iter().enumerate() {
        let out = layer.forward(
            tape,
            bound,
            h,
            &mask,
            None,
            l + 1 == layers.len(),
            activation,
        )?;
        h = tape.add(h, out.output)?;
        attention.push(out.attention);
    }
    Ok((h, attention))
}

/// Act decoder: left-to-right LSTM then a softmax classifier. Sentiment decoder:
/// a linear map then a softmax classifier.
#[derive(Debug, Clone)]
pub struct Decoder {
    pub act_lstm: Lstm,
    pub sent_linear_w: ParamId,
    pub sent_linear_b: ParamId,
    pub act_out_w: ParamId,
    pub act_out_b: ParamId,
    pub sent_out_w: ParamId,
    pub sent_out_b: ParamId,
}

#[derive(Debug, Clone)]
pub struct Decoded {
    pub act_logits: Var,
    pub sent_logits: Var,
    /// `N×N_D`, rows sum to one.
    pub act_probs: Var,
    /// `N×N_S`, rows sum to one.
    pub sent_probs: Var,
}

impl Decoder {
    pub fn init(
        params: &mut ModelParams,
        hidden: usize,
        n_acts: usize,
        n_sents: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let act_lstm = Lstm::init(params, "decoder.act_lstm", hidden, hidden, rng);
        let sent_linear_w = params.insert(
            "decoder.sent_linear.w",
            uniform(rng, &[hidden, hidden], bound),
        );
        let sent_linear_b = params.insert("decoder.sent_linear.b", Tensor::zeros(&[hidden]));
        let act_out_w = params.insert("decoder.act_out.w", uniform(rng, &[n_acts, hidden], bound));
        let act_out_b = params.insert("decoder.act_out.b", Tensor::zeros(&[n_acts]));
        let sent_out_w = params.insert(
            "decoder.sent_out.w",
            uniform(rng, &[n_sents, hidden], bound),
        );
        let sent_out_b = params.insert("decoder.sent_out.b", Tensor::zeros(&[n_sents]));
        Self {
            act_lstm,
            sent_linear_w,
            sent_linear_b,
            act_out_w,
            act_out_b,
            sent_out_w,
            sent_out_b,
        }
    }

    pub fn decode(
        &self,
        tape: &mut Tape,
        bound: &[Var],
        acts: Var,
        sentiments: Var,
    ) -> Result<Decoded> {
        let d_task = self.act_lstm.run(tape, bound, acts, false)?;
        let s_task = affine(
            tape,
            bound,
            sentiments,
            self.sent_linear_w,
            self.sent_linear_b,
        )?;
        let act_logits = affine(tape, bound, d_task, self.act_out_w, self.act_out_b)?;
        let sent_logits = affine(tape, bound, s_task, self.sent_out_w, self.sent_out_b)?;
        let act_probs = tape.softmax_rows(act_logits)?;
        let sent_probs = tape.softmax_rows(sent_logits)?;
        Ok(Decoded {
            act_logits,
            sent_logits,
            act_probs,
            sent_probs,
        })
    }
}

/// `x Wᵀ + b` row-wise.
fn affine(tape: &mut Tape, bound: &[Var], x: Var, w: ParamId, b: ParamId) -> Result<Var> {
    let w_t = tape.transpose(bound[w.index()])?;
    let y = tape.matmul(x, w_t)?;
    tape.add_bias(y, bound[b.index()])
}

/// Sentiment cross-entropy plus act cross-entropy, each summed over utterances.
pub fn joint_loss(
    tape: &mut Tape,
    act_probs: Var,
    sent_probs: Var,
    gold_acts: &[usize],
    gold_sents: &[usize],
) -> Result<Var> {
    let sentiment = tape.cross_entropy(sent_probs, gold_sents)?;
    let act = tape.cross_entropy(act_probs, gold_acts)?;
    tape.add(sentiment, act)
}
