use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, Axis};

use crate::params::{ParamBuilder, ParamId, ParamStore};

/// Length-preserving 1D convolution over the rows of an `L × in` matrix.
///
/// Kernel size `k` pads `k / 2` rows on the left and `k - 1 - k / 2` on the
/// right with zeros. Weights are stored tap-major, shape `k × out × in`.
#[derive(Debug, Clone)]
pub struct TemporalConv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl TemporalConv {
    pub fn new(
        b: &mut ParamBuilder,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        kernel: usize,
    ) -> Self {
        Self {
            weight: b.fan_in_uniform(
                &format!("{name}.weight"),
                &[kernel, out_dim, in_dim],
                in_dim * kernel,
            ),
            bias: b.zeros(&format!("{name}.bias"), &[out_dim]),
            kernel,
            in_dim,
            out_dim,
        }
    }

    pub fn left_pad(&self) -> usize {
        self.kernel / 2
    }

    fn tap<'a>(&self, w: &'a [f64], m: usize) -> ArrayView2<'a, f64> {
        let n = self.out_dim * self.in_dim;
        ArrayView2::from_shape((self.out_dim, self.in_dim), &w[m * n..(m + 1) * n]).unwrap()
    }

    /// Output rows `[dst.0, dst.1)` read input rows shifted by `m - left`.
    fn shifted(&self, len: usize, m: usize) -> Option<((usize, usize), (usize, usize))> {
        let offset = m as isize - self.left_pad() as isize;
        let lo = (-offset).max(0) as usize;
        let hi = (len as isize - offset.max(0)).max(0) as usize;
        (lo < hi).then(|| {
            let src = ((lo as isize + offset) as usize, (hi as isize + offset) as usize);
            ((lo, hi), src)
        })
    }

    pub fn forward(&self, p: &ParamStore, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let len = x.nrows();
        let w = p.slice(self.weight);
        let mut y = Array2::zeros((len, self.out_dim));
        y += &p.vec(self.bias);
        for m in 0..self.kernel {
            if let Some(((d0, d1), (s0, s1))) = self.shifted(len, m) {
                general_mat_mul(
                    1.0,
                    &x.slice(s![s0..s1, ..]),
                    &self.tap(w, m).t(),
                    1.0,
                    &mut y.slice_mut(s![d0..d1, ..]),
                );
            }
        }
        y
    }

    pub fn backward(
        &self,
        p: &ParamStore,
        g: &mut ParamStore,
        x: ArrayView2<'_, f64>,
        dy: ArrayView2<'_, f64>,
    ) -> Array2<f64> {
        let len = x.nrows();
        let w = p.slice(self.weight);
        let mut dx = Array2::zeros((len, self.in_dim));
        let n = self.out_dim * self.in_dim;
        for m in 0..self.kernel {
            if let Some(((d0, d1), (s0, s1))) = self.shifted(len, m) {
                let dys = dy.slice(s![d0..d1, ..]);
                {
                    let gw = &mut g.slice_mut(self.weight)[m * n..(m + 1) * n];
                    let mut gw = ndarray::ArrayViewMut2::from_shape((self.out_dim, self.in_dim), gw)
                        .unwrap();
                    general_mat_mul(1.0, &dys.t(), &x.slice(s![s0..s1, ..]), 1.0, &mut gw);
                }
                general_mat_mul(
                    1.0,
                    &dys,
                    &self.tap(w, m),
                    1.0,
                    &mut dx.slice_mut(s![s0..s1, ..]),
                );
            }
        }
        g.vec_mut(self.bias).scaled_add(1.0, &dy.sum_axis(Axis(0)));
        dx
    }
}

/// Grouped 2D convolution over a `side × side` grid stored as
/// `(side·side) × channels` rows.
///
/// Only rows flagged `active` are read or written: inactive inputs count as
/// zeros and inactive outputs stay zero. Weights are stored
/// `kernel × kernel × out × (in / groups)`. The bias is optional since a
/// following normalization would cancel it.
#[derive(Debug, Clone)]
pub struct GroupConv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_ch: usize,
    pub out_ch: usize,
    pub groups: usize,
    pub kernel: usize,
    pub padding: usize,
}

impl GroupConv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        b: &mut ParamBuilder,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        groups: usize,
        kernel: usize,
        padding: usize,
        bias: bool,
    ) -> Self {
        assert!(in_ch.is_multiple_of(groups) && out_ch.is_multiple_of(groups));
        let per_group = in_ch / groups;
        Self {
            weight: b.fan_in_uniform(
                &format!("{name}.weight"),
                &[kernel, kernel, out_ch, per_group],
                per_group * kernel * kernel,
            ),
            bias: bias.then(|| b.zeros(&format!("{name}.bias"), &[out_ch])),
            in_ch,
            out_ch,
            groups,
            kernel,
            padding,
        }
    }

    fn in_per_group(&self) -> usize {
        self.in_ch / self.groups
    }

    fn out_per_group(&self) -> usize {
        self.out_ch / self.groups
    }

    /// Calls `f(out_row, in_row, tap)` for every active pair in the window.
    fn for_each_tap(&self, side: usize, active: &[bool], mut f: impl FnMut(usize, usize, usize)) {
        let k = self.kernel;
        let pad = self.padding as isize;
        for oi in 0..side {
            for oj in 0..side {
                let orow = oi * side + oj;
                if !active[orow] {
                    continue;
                }
                for ky in 0..k {
                    let ii = oi as isize + ky as isize - pad;
                    if ii < 0 || ii >= side as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let jj = oj as isize + kx as isize - pad;
                        if jj < 0 || jj >= side as isize {
                            continue;
                        }
                        let irow = ii as usize * side + jj as usize;
                        if active[irow] {
                            f(orow, irow, ky * k + kx);
                        }
                    }
                }
            }
        }
    }

    pub fn forward(
        &self,
        p: &ParamStore,
        x: ArrayView2<'_, f64>,
        side: usize,
        active: &[bool],
    ) -> Array2<f64> {
        assert_eq!(x.nrows(), side * side);
        let w = p.slice(self.weight);
        let (cin, cout) = (self.in_per_group(), self.out_per_group());
        let tap_len = self.out_ch * cin;
        let mut y = Array2::zeros((side * side, self.out_ch));
        if let Some(id) = self.bias {
            let bias = p.slice(id);
            for (row, mut r) in y.axis_iter_mut(Axis(0)).enumerate() {
                if active[row] {
                    r.iter_mut().zip(bias).for_each(|(d, b)| *d = *b);
                }
            }
        }
        let xs = x.as_standard_layout();
        let xs = xs.as_slice().unwrap();
        let ys = y.as_slice_mut().unwrap();
        self.for_each_tap(side, active, |orow, irow, tap| {
            let wt = &w[tap * tap_len..(tap + 1) * tap_len];
            let xin = &xs[irow * self.in_ch..(irow + 1) * self.in_ch];
            let yout = &mut ys[orow * self.out_ch..(orow + 1) * self.out_ch];
            for (oc, yo) in yout.iter_mut().enumerate() {
                let base = (oc / cout) * cin;
                let wr = &wt[oc * cin..(oc + 1) * cin];
                let xg = &xin[base..base + cin];
                *yo += wr.iter().zip(xg).map(|(a, b)| a * b).sum::<f64>();
            }
        });
        y
    }

    pub fn backward(
        &self,
        p: &ParamStore,
        g: &mut ParamStore,
        x: ArrayView2<'_, f64>,
        dy: ArrayView2<'_, f64>,
        side: usize,
        active: &[bool],
    ) -> Array2<f64> {
        let w = p.slice(self.weight);
        let (cin, cout) = (self.in_per_group(), self.out_per_group());
        let tap_len = self.out_ch * cin;
        let xs = x.as_standard_layout();
        let xs = xs.as_slice().unwrap();
        let dys = dy.as_standard_layout();
        let dys = dys.as_slice().unwrap();
        let mut dx = Array2::zeros((side * side, self.in_ch));
        let dxs = dx.as_slice_mut().unwrap();
        {
            let gw = g.slice_mut(self.weight);
            self.for_each_tap(side, active, |orow, irow, tap| {
                let wt = &w[tap * tap_len..(tap + 1) * tap_len];
                let gwt = &mut gw[tap * tap_len..(tap + 1) * tap_len];
                let xin = &xs[irow * self.in_ch..(irow + 1) * self.in_ch];
                let dout = &dys[orow * self.out_ch..(orow + 1) * self.out_ch];
                let dxin = &mut dxs[irow * self.in_ch..(irow + 1) * self.in_ch];
                for (oc, &d) in dout.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let base = (oc / cout) * cin;
                    for ic in 0..cin {
                        gwt[oc * cin + ic] += d * xin[base + ic];
                        dxin[base + ic] += d * wt[oc * cin + ic];
                    }
                }
            });
        }
        if let Some(id) = self.bias {
            let gb = g.slice_mut(id);
            for (row, d) in dy.axis_iter(Axis(0)).enumerate() {
                if active[row] {
                    gb.iter_mut().zip(d).for_each(|(a, b)| *a += b);
                }
            }
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unigram_identity() {
        let mut b = ParamBuilder::new(ChaCha8Rng::seed_from_u64(0));
        let conv = TemporalConv::new(&mut b, "u", 3, 3, 1);
        let mut p = b.finish();
        p.fill(0.0);
        for i in 0..3 {
            p.slice_mut(conv.weight)[i * 3 + i] = 1.0;
        }
        let x = ndarray::array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
        assert_eq!(conv.forward(&p, x.view()), x);
    }

    #[test]
    fn bigram_pads_left() {
        let mut b = ParamBuilder::new(ChaCha8Rng::seed_from_u64(0));
        let conv = TemporalConv::new(&mut b, "b", 1, 1, 2);
        let mut p = b.finish();
        // tap 0 sees the previous row, tap 1 the current row
        p.slice_mut(conv.weight).copy_from_slice(&[10.0, 1.0]);
        p.slice_mut(conv.bias)[0] = 0.0;
        let x = ndarray::array![[1.0], [2.0], [3.0]];
        let y = conv.forward(&p, x.view());
        assert_eq!(y, ndarray::array![[1.0], [12.0], [23.0]]);
    }

    #[test]
    fn inactive_rows_stay_zero() {
        let mut b = ParamBuilder::new(ChaCha8Rng::seed_from_u64(4));
        let conv = GroupConv2d::new(&mut b, "c", 4, 4, 2, 3, 1, true);
        let mut p = b.finish();
        p.slice_mut(conv.bias.unwrap()).fill(1.0);
        let active = [true, false, true, true];
        let x = Array2::from_elem((4, 4), 0.5);
        let y = conv.forward(&p, x.view(), 2, &active);
        assert!(y.row(1).iter().all(|&v| v == 0.0));
        assert!(y.row(0).iter().all(|&v| v != 0.0));
    }
}
