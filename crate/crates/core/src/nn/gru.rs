use rand::Rng;

use super::{init, Graph, ParamId, ParamSet, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Gated recurrent unit with the reset gate applied inside the candidate:
///
/// ```text
/// u = σ(W_u x + U_u h + b_u)
/// r = σ(W_r x + U_r h + b_r)
/// c = tanh(W_c x + U_c (r ⊙ h) + b_c)
/// h' = (1 − u) ⊙ h + u ⊙ c
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GruCell {
    pub input: usize,
    pub hidden: usize,
    /// Input weights for update, reset and candidate, stacked: `[3H × input]`.
    pub w_x: ParamId,
    /// Recurrent weights for update and reset: `[2H × H]`.
    pub w_h: ParamId,
    /// Recurrent weight for the candidate: `[H × H]`.
    pub w_hc: ParamId,
    /// Biases for update, reset and candidate: `[3H]`.
    pub bias: ParamId,
}

impl GruCell {
    pub fn new<T: Scalar>(
        params: &mut ParamSet<T>,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let hb = 1.0 / (hidden as f64).sqrt();
        Ok(GruCell {
            input,
            hidden,
            w_x: params.add(format!("{name}.w_x"), init::uniform(rng, &[3 * hidden, input], 1.0 / (input as f64).sqrt()))?,
            w_h: params.add(format!("{name}.w_h"), init::uniform(rng, &[2 * hidden, hidden], hb))?,
            w_hc: params.add(format!("{name}.w_hc"), init::uniform(rng, &[hidden, hidden], hb))?,
            bias: params.add(format!("{name}.bias"), init::uniform(rng, &[3 * hidden], hb))?,
        })
    }

    pub fn step<T: Scalar>(&self, g: &mut Graph<'_, T>, h_prev: Var, x: Var) -> Result<Var> {
        let hsize = self.hidden;
        if g.value(x).cols() != self.input || g.value(h_prev).cols() != hsize {
            return Err(Error::shape(
                "gru_step",
                format!(
                    "cell ({}→{}) given x {:?}, h {:?}",
                    self.input,
                    hsize,
                    g.value(x).shape(),
                    g.value(h_prev).shape()
                ),
            ));
        }
        let (w_x, w_h, w_hc, bias) = (g.param(self.w_x), g.param(self.w_h), g.param(self.w_hc), g.param(self.bias));
        let gx = g.linear(w_x, bias, x)?;
        let gh = g.matmul_t(h_prev, w_h)?;
        let (ux, rx, cx) = (g.slice(gx, 0, hsize)?, g.slice(gx, hsize, hsize)?, g.slice(gx, 2 * hsize, hsize)?);
        let (uh, rh) = (g.slice(gh, 0, hsize)?, g.slice(gh, hsize, hsize)?);
        let u = g.add(ux, uh)?;
        let u = g.sigmoid(u);
        let r = g.add(rx, rh)?;
        let r = g.sigmoid(r);
        let rh_prev = g.mul(r, h_prev)?;
        let ch = g.matmul_t(rh_prev, w_hc)?;
        let c = g.add(cx, ch)?;
        let c = g.tanh(c);
        let delta = g.sub(c, h_prev)?;
        let delta = g.mul(u, delta)?;
        g.add(h_prev, delta)
    }

    /// One step on plain vectors, outside any training graph.
    pub fn forward<T: Scalar>(&self, params: &ParamSet<T>, h_prev: &[T], x: &[T]) -> Result<Vec<T>> {
        let mut g = Graph::inference(params);
        let h = g.input(Tensor::from_vec(&[1, h_prev.len()], h_prev.to_vec())?);
        let x = g.input(Tensor::from_vec(&[1, x.len()], x.to_vec())?);
        let out = self.step(&mut g, h, x)?;
        Ok(g.value(out).data().to_vec())
    }
}
