//! Gated recurrent units, one direction at a time, stacked into
//! bidirectional layers.
//!
//! Gate order inside the stacked weights is reset, update, candidate:
//!
//! ```text
//! r  = σ(W_ir x + b_ir + W_hr h + b_hr)
//! z  = σ(W_iz x + b_iz + W_hz h + b_hz)
//! n  = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
//! h' = (1 - z) ⊙ n + z ⊙ h
//! ```

use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use crate::nn::sigmoid;
use crate::params::{ParamBuilder, ParamId, ParamStore};

#[derive(Debug, Clone)]
pub struct GruDirection {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
    pub input: usize,
    pub hidden: usize,
}

/// Activations of one direction over one sequence.
#[derive(Debug, Clone)]
pub struct GruTrace {
    x: Array2<f64>,
    /// Hidden states, `h[0]` is the zero initial state.
    h: Array2<f64>,
    r: Array2<f64>,
    z: Array2<f64>,
    n: Array2<f64>,
    /// `W_hn h + b_hn` before the reset gate is applied.
    hn: Array2<f64>,
}

impl GruTrace {
    /// Outputs `h[1..]`, one row per step.
    pub fn outputs(&self) -> ArrayView2<'_, f64> {
        self.h.slice(s![1.., ..])
    }
}

impl GruDirection {
    pub fn new(b: &mut ParamBuilder, name: &str, input: usize, hidden: usize) -> Self {
        Self {
            w_ih: b.fan_in_uniform(&format!("{name}.w_ih"), &[3 * hidden, input], input),
            w_hh: b.orthogonal_blocks(&format!("{name}.w_hh"), 3, hidden),
            b_ih: b.zeros(&format!("{name}.b_ih"), &[3 * hidden]),
            b_hh: b.zeros(&format!("{name}.b_hh"), &[3 * hidden]),
            input,
            hidden,
        }
    }

    pub fn forward(&self, p: &ParamStore, x: ArrayView2<'_, f64>) -> GruTrace {
        let steps = x.nrows();
        let hd = self.hidden;
        let w_hh = p.mat(self.w_hh);
        let b_hh = p.vec(self.b_hh);
        let mut gi = x.dot(&p.mat(self.w_ih).t());
        gi += &p.vec(self.b_ih);

        let mut h = Array2::zeros((steps + 1, hd));
        let mut r = Array2::zeros((steps, hd));
        let mut z = Array2::zeros((steps, hd));
        let mut n = Array2::zeros((steps, hd));
        let mut hn = Array2::zeros((steps, hd));
        for t in 0..steps {
            let prev = h.row(t).to_owned();
            let gh = w_hh.dot(&prev) + b_hh;
            let gi_t = gi.row(t);
            for k in 0..hd {
                let rk = sigmoid(gi_t[k] + gh[k]);
                let zk = sigmoid(gi_t[hd + k] + gh[hd + k]);
                let nk = (gi_t[2 * hd + k] + rk * gh[2 * hd + k]).tanh();
                r[[t, k]] = rk;
                z[[t, k]] = zk;
                n[[t, k]] = nk;
                hn[[t, k]] = gh[2 * hd + k];
                h[[t + 1, k]] = (1.0 - zk) * nk + zk * prev[k];
            }
        }
        GruTrace {
            x: x.to_owned(),
            h,
            r,
            z,
            n,
            hn,
        }
    }

    /// Backpropagation through time; `dh` holds the gradient of each output
    /// row. Returns `dL/dx`.
    pub fn backward(
        &self,
        p: &ParamStore,
        g: &mut ParamStore,
        trace: &GruTrace,
        dh: ArrayView2<'_, f64>,
    ) -> Array2<f64> {
        let steps = trace.x.nrows();
        let hd = self.hidden;
        let w_hh = p.mat(self.w_hh);
        let mut d_gi = Array2::zeros((steps, 3 * hd));
        let mut d_gh = Array1::zeros(3 * hd);
        let mut carry = Array1::<f64>::zeros(hd);
        for t in (0..steps).rev() {
            let prev = trace.h.row(t);
            let mut d_prev = Array1::zeros(hd);
            for k in 0..hd {
                let dht = dh[[t, k]] + carry[k];
                let (rk, zk, nk) = (trace.r[[t, k]], trace.z[[t, k]], trace.n[[t, k]]);
                let dn = dht * (1.0 - zk);
                let dz = dht * (prev[k] - nk);
                d_prev[k] = dht * zk;
                let dan = dn * (1.0 - nk * nk);
                let dr = dan * trace.hn[[t, k]];
                let dar = dr * rk * (1.0 - rk);
                let daz = dz * zk * (1.0 - zk);
                d_gi[[t, k]] = dar;
                d_gi[[t, hd + k]] = daz;
                d_gi[[t, 2 * hd + k]] = dan;
                d_gh[k] = dar;
                d_gh[hd + k] = daz;
                d_gh[2 * hd + k] = dan * rk;
            }
            {
                let mut gw = g.mat_mut(self.w_hh);
                for (row, mut w) in gw.axis_iter_mut(Axis(0)).enumerate() {
                    w.scaled_add(d_gh[row], &prev);
                }
            }
            g.vec_mut(self.b_hh).scaled_add(1.0, &d_gh);
            d_prev += &w_hh.t().dot(&d_gh);
            carry = d_prev;
        }
        ndarray::linalg::general_mat_mul(
            1.0,
            &d_gi.t(),
            &trace.x,
            1.0,
            &mut g.mat_mut(self.w_ih),
        );
        g.vec_mut(self.b_ih).scaled_add(1.0, &d_gi.sum_axis(Axis(0)));
        d_gi.dot(&p.mat(self.w_ih))
    }
}

/// Stacked bidirectional GRU; each direction has `hidden` units and the two
/// directions are concatenated (forward first) per step.
#[derive(Debug, Clone)]
pub struct BiGru {
    layers: Vec<[GruDirection; 2]>,
    hidden: usize,
}

#[derive(Debug, Clone)]
pub struct BiGruTrace {
    layers: Vec<[GruTrace; 2]>,
}

fn reversed(x: ArrayView2<'_, f64>) -> Array2<f64> {
    x.slice(s![..;-1, ..]).to_owned()
}

impl BiGru {
    pub fn new(
        b: &mut ParamBuilder,
        name: &str,
        input: usize,
        hidden: usize,
        layers: usize,
    ) -> Self {
        let layers = (0..layers)
            .map(|l| {
                let in_dim = if l == 0 { input } else { 2 * hidden };
                [
                    GruDirection::new(b, &format!("{name}.l{l}.fwd"), in_dim, hidden),
                    GruDirection::new(b, &format!("{name}.l{l}.bwd"), in_dim, hidden),
                ]
            })
            .collect();
        Self { layers, hidden }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn direction(&self, layer: usize, backward: bool) -> &GruDirection {
        &self.layers[layer][backward as usize]
    }

    pub fn forward(&self, p: &ParamStore, x: ArrayView2<'_, f64>) -> (Array2<f64>, BiGruTrace) {
        let hd = self.hidden;
        let mut input = x.to_owned();
        let mut traces = Vec::with_capacity(self.layers.len());
        for [fwd, bwd] in &self.layers {
            let tf = fwd.forward(p, input.view());
            let tb = bwd.forward(p, reversed(input.view()).view());
            let mut out = Array2::zeros((input.nrows(), 2 * hd));
            out.slice_mut(s![.., ..hd]).assign(&tf.outputs());
            out.slice_mut(s![.., hd..])
                .assign(&tb.outputs().slice(s![..;-1, ..]));
            traces.push([tf, tb]);
            input = out;
        }
        (input, BiGruTrace { layers: traces })
    }

    pub fn backward(
        &self,
        p: &ParamStore,
        g: &mut ParamStore,
        trace: &BiGruTrace,
        d_out: ArrayView2<'_, f64>,
    ) -> Array2<f64> {
        let hd = self.hidden;
        let mut d = d_out.to_owned();
        for ([fwd, bwd], [tf, tb]) in self.layers.iter().zip(&trace.layers).rev() {
            let d_f = d.slice(s![.., ..hd]);
            let d_b = reversed(d.slice(s![.., hd..]));
            let mut dx = fwd.backward(p, g, tf, d_f);
            let dx_b = bwd.backward(p, g, tb, d_b.view());
            dx += &dx_b.slice(s![..;-1, ..]);
            d = dx;
        }
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_step_matches_cell_equations() {
        let mut b = ParamBuilder::new(ChaCha8Rng::seed_from_u64(9));
        let dir = GruDirection::new(&mut b, "g", 3, 2);
        let mut p = b.finish();
        // nonzero biases to exercise every term
        for (i, v) in p.slice_mut(dir.b_ih).iter_mut().enumerate() {
            *v = 0.1 * i as f64;
        }
        for (i, v) in p.slice_mut(dir.b_hh).iter_mut().enumerate() {
            *v = -0.05 * i as f64;
        }
        let x = ndarray::array![[0.5, -1.0, 2.0]];
        let trace = dir.forward(&p, x.view());

        // hand evaluation with h0 = 0: W_hh h0 vanishes, only b_hh remains
        let wi = p.mat(dir.w_ih);
        let bi = p.vec(dir.b_ih);
        let bh = p.vec(dir.b_hh);
        let pre = |row: usize| -> f64 { (0..3).map(|c| wi[[row, c]] * x[[0, c]]).sum::<f64>() + bi[row] };
        for k in 0..2 {
            let r = 1.0 / (1.0 + (-(pre(k) + bh[k])).exp());
            let z = 1.0 / (1.0 + (-(pre(2 + k) + bh[2 + k])).exp());
            let n = (pre(4 + k) + r * bh[4 + k]).tanh();
            let h = (1.0 - z) * n;
            assert!((trace.outputs()[[0, k]] - h).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_input_zero_params_gives_zero_output() {
        let mut b = ParamBuilder::new(ChaCha8Rng::seed_from_u64(2));
        let gru = BiGru::new(&mut b, "enc", 4, 3, 2);
        let mut p = b.finish();
        p.fill(0.0);
        let (out, _) = gru.forward(&p, Array2::zeros((5, 4)).view());
        assert_eq!(out.dim(), (5, 6));
        assert!(out.iter().all(|&v| v == 0.0));
    }
}
