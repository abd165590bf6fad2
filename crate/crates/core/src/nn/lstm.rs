use rand::Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::Result;
use crate::params::{uniform, ModelParams, ParamId};

/// One LSTM direction. Gates are packed `[input, forget, cell, output]` along the
/// first axis of the weights.
#[derive(Debug, Clone)]
pub struct Lstm {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl Lstm {
    /// Weights uniform in `±1/√hidden`; bias zero except the forget gate at 1.
    pub fn init(
        params: &mut ModelParams,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let w_ih = params.insert(
            format!("{prefix}.w_ih"),
            uniform(rng, &[4 * hidden, input], bound),
        );
        let w_hh = params.insert(
            format!("{prefix}.w_hh"),
            uniform(rng, &[4 * hidden, hidden], bound),
        );
        let mut b = vec![0.0; 4 * hidden];
        b[hidden..2 * hidden].iter_mut().for_each(|x| *x = 1.0);
        let bias = params.insert(format!("{prefix}.bias"), Tensor::vector(b));
        Self {
            w_ih,
            w_hh,
            bias,
            input,
            hidden,
        }
    }

    /// Runs over the rows of `xs` (`n×input`), left to right or right to left.
    /// Row `t` of the result is the hidden state after reading position `t`.
    pub fn run(&self, tape: &mut Tape, bound: &[Var], xs: Var, reverse: bool) -> Result<Var> {
        let h = self.hidden;
        let n = tape.shape(xs)[0];
        let w_ih_t = tape.transpose(bound[self.w_ih.index()])?;
        let w_hh_t = tape.transpose(bound[self.w_hh.index()])?;
        let proj = tape.matmul(xs, w_ih_t)?;
        let proj = tape.add_bias(proj, bound[self.bias.index()])?;

        let zero = Tensor::zeros(&[1, h]);
        let mut hidden = tape.constant(&zero);
        let mut cell = tape.constant(&zero);
        let mut states = vec![hidden; n];
        let order: Box<dyn Iterator<Item = usize>> = if reverse {
            Box::new((0..n).rev())
        } else {
            Box::new(0..n)
        };
        for t in order {
            let x = tape.row(proj, t)?;
            let rec = tape.matmul(hidden, w_hh_t)?;
            let gates = tape.add(x, rec)?;
            let i = tape.slice(gates, 1, 0, h)?;
            let f = tape.slice(gates, 1, h, 2 * h)?;
            let g = tape.slice(gates, 1, 2 * h, 3 * h)?;
            let o = tape.slice(gates, 1, 3 * h, 4 * h)?;
            let (i, f, g, o) = (
                tape.sigmoid(i),
                tape.sigmoid(f),
                tape.tanh(g),
                tape.sigmoid(o),
            );
            let keep = tape.mul(f, cell)?;
            let write = tape.mul(i, g)?;
            cell = tape.add(keep, write)?;
            let squashed = tape.tanh(cell);
            hidden = tape.mul(o, squashed)?;
            states[t] = hidden;
        }
        tape.concat(&states, 0)
    }
}

/// Forward and backward LSTMs whose per-position states are concatenated.
#[derive(Debug, Clone)]
pub struct BiLstm {
    pub forward: Lstm,
    pub backward: Lstm,
}

impl BiLstm {
    /// `output` must be even; each direction gets half.
    pub fn init(
        params: &mut ModelParams,
        prefix: &str,
        input: usize,
        output: usize,
        rng: &mut impl Rng,
    ) -> Self {
        debug_assert!(output % 2 == 0);
        Self {
            forward: Lstm::init(params, &format!("{prefix}.fwd"), input, output / 2, rng),
            backward: Lstm::init(params, &format!("{prefix}.bwd"), input, output / 2, rng),
        }
    }

    /// `n×output` states, row `t` = `[→h_t ‖ ←h_t]`.
    pub fn run(&self, tape: &mut Tape, bound: &[Var], xs: Var) -> Result<Var> {
        let f = self.forward.run(tape, bound, xs, false)?;
        let b = self.backward.run(tape, bound, xs, true)?;
        tape.concat(&[f, b], 1)
    }
}
