//! Multi-head graph attention over a boolean neighbor mask.
//!
//! Per head `k`: `z = H W_kᵀ`, scores `e_ij = LeakyReLU(a_src·z_i + a_dst·z_j)`
//! (the split form of `aᵀ[z_i ‖ z_j]`), `α = softmax_j` over the neighbors of
//! `i`, and message `Σ_j α_ij z_j`. Hidden layers apply σ per head and
//! concatenate; final layers average the heads and then apply σ.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var, LEAKY_RELU_SLOPE};
use crate::error::{Error, Result};
use crate::graph::Mask;
use crate::params::{glorot, ModelParams, ParamId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Elu,
    Relu,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Elu => tape.elu(x, 1.0),
            Activation::Relu => tape.relu(x),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GatHead {
    /// `head_dim × in_dim`
    pub w: ParamId,
    /// `2·head_dim`, source half first.
    pub a: ParamId,
    /// Separate projection for cross-type neighbors, when enabled.
    pub w_cross: Option<ParamId>,
}

#[derive(Debug, Clone)]
pub struct GatLayer {
    pub heads: Vec<GatHead>,
    pub in_dim: usize,
    pub head_dim: usize,
}

#[derive(Debug, Clone)]
pub struct GatOutput {
    pub output: Var,
    /// One `M×M` attention matrix per head.
    pub attention: Vec<Var>,
}

impl GatLayer {
    pub fn init(
        params: &mut ModelParams,
        prefix: &str,
        in_dim: usize,
        head_dim: usize,
        heads: usize,
        per_type_projection: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let heads = (0..heads)
            .map(|k| {
                let w = params.insert(
                    format!("{prefix}.head{k}.w"),
                    glorot(rng, &[head_dim, in_dim], in_dim, head_dim),
                );
                let w_cross = per_type_projection.then(|| {
                    params.insert(
                        format!("{prefix}.head{k}.w_cross"),
                        glorot(rng, &[head_dim, in_dim], in_dim, head_dim),
                    )
                });
                let a = params.insert(
                    format!("{prefix}.head{k}.a"),
                    glorot(rng, &[2 * head_dim], 2 * head_dim, 1),
                );
                GatHead { w, a, w_cross }
            })
            .collect();
        Self {
            heads,
            in_dim,
            head_dim,
        }
    }

    /// Output width: `heads·head_dim` for hidden layers, `head_dim` for final ones.
    pub fn out_dim(&self, final_layer: bool) -> usize {
        if final_layer {
            self.head_dim
        } else {
            self.heads.len() * self.head_dim
        }
    }

    /// `h` is `M×in_dim`; `neighbors` is the `M×M` attention neighborhood. With
    /// per-type projection, `cross` marks which neighbors use `w_cross`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &[Var],
        h: Var,
        neighbors: &Mask,
        cross: Option<&Mask>,
        final_layer: bool,
        activation: Activation,
    ) -> Result<GatOutput> {
        let m = tape.shape(h)[0];
        if neighbors.size() != m {
            return Err(Error::Dimension {
                op: "gat_layer",
                left: tape.shape(h).to_vec(),
                right: vec![neighbors.size(), neighbors.size()],
            });
        }
        let d = self.head_dim;
        let mut outs = Vec::with_capacity(self.heads.len());
        let mut attention = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let w_t = tape.transpose(bound[head.w.index()])?;
            let z = tape.matmul(h, w_t)?;
            let a = bound[head.a.index()];
            let a_src = tape.slice(a, 0, 0, d)?;
            let a_src = tape.reshape(a_src, &[d, 1])?;
            let a_dst = tape.slice(a, 0, d, 2 * d)?;
            let a_dst = tape.reshape(a_dst, &[d, 1])?;
            let src = tape.matmul(z, a_src)?;

            let message = match (head.w_cross, cross) {
                (Some(wc), Some(cross)) => {
                    let wc_t = tape.transpose(bound[wc.index()])?;
                    let zc = tape.matmul(h, wc_t)?;
                    let same_mask =
                        Mask::from_fn(m, |i, j| neighbors.get(i, j) && !cross.get(i, j));
                    let cross_mask =
                        Mask::from_fn(m, |i, j| neighbors.get(i, j) && cross.get(i, j));
                    let same_sel = tape.constant(&indicator(&same_mask));
                    let cross_sel = tape.constant(&indicator(&cross_mask));

                    let dst = tape.matmul(z, a_dst)?;
                    let dst_c = tape.matmul(zc, a_dst)?;
                    let e_same = tape.outer_sum(src, dst);
                    let e_cross = tape.outer_sum(src, dst_c);
                    let e_same = tape.mul(e_same, same_sel)?;
                    let e_cross = tape.mul(e_cross, cross_sel)?;
                    let e = tape.add(e_same, e_cross)?;
                    let e = tape.leaky_relu(e, LEAKY_RELU_SLOPE);
                    let alpha = tape.masked_softmax(e, neighbors.as_slice())?;
                    attention.push(alpha);
                    let alpha_same = tape.mul(alpha, same_sel)?;
                    let alpha_cross = tape.mul(alpha, cross_sel)?;
                    let ms = tape.matmul(alpha_same, z)?;
                    let mc = tape.matmul(alpha_cross, zc)?;
                    tape.add(ms, mc)?
                }
                _ => {
                    let dst = tape.matmul(z, a_dst)?;
                    let e = tape.outer_sum(src, dst);
                    let e = tape.leaky_relu(e, LEAKY_RELU_SLOPE);
                    let alpha = tape.masked_softmax(e, neighbors.as_slice())?;
                    attention.push(alpha);
                    tape.matmul(alpha, z)?
                }
            };
            outs.push(message);
        }

        let output = if final_layer {
            let mut acc = outs[0];
            for &o in &outs[1..] {
                acc = tape.add(acc, o)?;
            }
            let avg = tape.scale(acc, 1.0 / outs.len() as f64);
            activation.apply(tape, avg)
        } else {
            let activated: Vec<Var> = outs
                .into_iter()
                .map(|o| activation.apply(tape, o))
                .collect();
            tape.concat(&activated, 1)?
        };
        Ok(GatOutput { output, attention })
    }
}

fn indicator(mask: &Mask) -> Tensor {
    let n = mask.size();
    Tensor::matrix(
        n,
        n,
        mask.as_slice().iter().map(|&b| b as u8 as f64).collect(),
    )
    .expect("square mask")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layer(in_dim: usize, head_dim: usize, heads: usize, seed: u64) -> (ModelParams, GatLayer) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParams::new();
        let l = GatLayer::init(&mut params, "g", in_dim, head_dim, heads, false, &mut rng);
        (params, l)
    }

    fn elu(x: f64) -> f64 {
        if x > 0.0 {
            x
        } else {
            x.exp_m1()
        }
    }

    #[test]
    fn zero_attention_vector_is_uniform() {
        let (mut params, l) = layer(3, 2, 2, 3);
        for h in &l.heads {
            params
                .get_mut(h.a)
                .tensor
                .values_mut()
                .iter_mut()
                .for_each(|v| *v = 0.0);
        }
        let mask = Mask::from_fn(4, |i, j| i == j || (i + j) % 2 == 0 || j == 3);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let h = tape
            .constant(&Tensor::matrix(4, 3, (0..12).map(|x| x as f64 * 0.1).collect()).unwrap());
        let out = l
            .forward(&mut tape, &bound, h, &mask, None, false, Activation::Elu)
            .unwrap();
        for &alpha in &out.attention {
            let alpha = tape.tensor(alpha);
            for i in 0..4 {
                let k = mask.neighbors(i).len() as f64;
                for j in 0..4 {
                    let want = if mask.get(i, j) { 1.0 / k } else { 0.0 };
                    assert!((alpha.at(i, j) - want).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn identity_mask_is_self_attention_only() {
        let (params, l) = layer(2, 2, 1, 4);
        let w = params.get(l.heads[0].w).tensor.clone();
        let rows = [[0.3, -0.7], [1.1, 0.2], [-0.5, -0.4]];
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let h = tape.constant(&Tensor::from_rows(&[&rows[0], &rows[1], &rows[2]]).unwrap());
        let out = l
            .forward(
                &mut tape,
                &bound,
                h,
                &Mask::identity(3),
                None,
                false,
                Activation::Elu,
            )
            .unwrap();
        let out = tape.tensor(out.output);
        for (i, r) in rows.iter().enumerate() {
            for o in 0..2 {
                let z = w.at(o, 0) * r[0] + w.at(o, 1) * r[1];
                assert!((out.at(i, o) - elu(z)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn two_node_hand_computation() {
        let (mut params, l) = layer(1, 1, 1, 5);
        let head = &l.heads[0];
        params.get_mut(head.w).tensor.values_mut()[0] = 2.0;
        params
            .get_mut(head.a)
            .tensor
            .values_mut()
            .copy_from_slice(&[0.5, -1.0]);
        let (h0, h1) = (1.0, -0.5);
        // z = 2h; e_ij = lrelu(0.5 z_i - z_j)
        let z = [2.0 * h0, 2.0 * h1];
        let lrelu = |x: f64| if x >= 0.0 { x } else { 0.2 * x };
        let mut expect = [0.0; 2];
        for i in 0..2 {
            let e: Vec<f64> = (0..2).map(|j| lrelu(0.5 * z[i] - z[j])).collect();
            let s: f64 = e.iter().map(|x| x.exp()).sum();
            let agg: f64 = (0..2).map(|j| e[j].exp() / s * z[j]).sum();
            expect[i] = elu(agg);
        }
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let h = tape.constant(&Tensor::matrix(2, 1, vec![h0, h1]).unwrap());
        let out = l
            .forward(
                &mut tape,
                &bound,
                h,
                &Mask::full(2),
                None,
                true,
                Activation::Elu,
            )
            .unwrap();
        for (got, want) in tape.value(out.output).iter().zip(expect) {
            assert!((got - want).abs() < 1e-14, "{got} vs {want}");
        }
    }

    #[test]
    fn isolated_node_is_degenerate() {
        let (params, l) = layer(2, 1, 1, 6);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let h = tape.constant(&Tensor::zeros(&[2, 2]));
        let mask = Mask::from_fn(2, |i, j| i == 0 && j == 0);
        let err = l
            .forward(&mut tape, &bound, h, &mask, None, false, Activation::Elu)
            .unwrap_err();
        assert!(matches!(err, Error::DegenerateNeighborhood { node: 1 }));
    }

    #[test]
    fn final_layer_averages_heads() {
        let (params, l) = layer(3, 2, 3, 7);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let h = tape.constant(&Tensor::matrix(2, 3, vec![0.1, 0.2, 0.3, -0.1, 0.0, 0.4]).unwrap());
        let hidden = l
            .forward(
                &mut tape,
                &bound,
                h,
                &Mask::full(2),
                None,
                false,
                Activation::Relu,
            )
            .unwrap();
        let last = l
            .forward(
                &mut tape,
                &bound,
                h,
                &Mask::full(2),
                None,
                true,
                Activation::Relu,
            )
            .unwrap();
        assert_eq!(tape.shape(hidden.output), &[2, 6]);
        assert_eq!(tape.shape(last.output), &[2, 2]);
    }
}
