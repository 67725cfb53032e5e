//! Flat-parameter forward and reverse-mode kernels for the denoiser.
//!
//! All buffers are row-major `Vec<f64>` slices: an `L x K` activation stores
//! row `l` at `l * K`. Block `i` uses dilation `2^i`; taps that fall outside
//! the window read zeros.

use ndarray::Array2;
use std::ops::Range;

use super::{embed_timestep, DenoiserConfig};

/// Offsets of every parameter segment inside the flat vector.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    c: usize,
    w: usize,
    d: usize,
    input_w: usize,
    input_b: usize,
    layers: Vec<LayerOffsets>,
    head_w: usize,
    head_b: usize,
    total: usize,
}

#[derive(Debug, Clone)]
struct LayerOffsets {
    conv_w: usize,
    conv_b: usize,
    mix_w: usize,
    mix_b: usize,
    temb_w: usize,
    temb_b: usize,
}

impl Layout {
    pub(crate) fn new(cfg: &DenoiserConfig) -> Self {
        let (c, w, d) = (cfg.input_channels, cfg.channels, cfg.time_emb_dim);
        let mut at = 0;
        let mut take = |n: usize| {
            let start = at;
            at += n;
            start
        };
        let input_w = take(w * c);
        let input_b = take(w);
        let layers = (0..cfg.residual_layers)
            .map(|_| LayerOffsets {
                conv_w: take(2 * w * 3 * w),
                conv_b: take(2 * w),
                mix_w: take(w * w),
                mix_b: take(w),
                temb_w: take(w * d),
                temb_b: take(w),
            })
            .collect();
        let head_w = take(c * w);
        let head_b = take(c);
        Self {
            c,
            w,
            d,
            input_w,
            input_b,
            layers,
            head_w,
            head_b,
            total: at,
        }
    }

    pub(crate) fn total(&self) -> usize {
        self.total
    }

    pub(crate) fn input_w(&self) -> Range<usize> {
        self.input_w..self.input_w + self.w * self.c
    }
    fn input_b(&self) -> Range<usize> {
        self.input_b..self.input_b + self.w
    }
    pub(crate) fn conv_w(&self, i: usize) -> Range<usize> {
        self.layers[i].conv_w..self.layers[i].conv_w + 2 * self.w * 3 * self.w
    }
    fn conv_b(&self, i: usize) -> Range<usize> {
        self.layers[i].conv_b..self.layers[i].conv_b + 2 * self.w
    }
    pub(crate) fn mix_w(&self, i: usize) -> Range<usize> {
        self.layers[i].mix_w..self.layers[i].mix_w + self.w * self.w
    }
    fn mix_b(&self, i: usize) -> Range<usize> {
        self.layers[i].mix_b..self.layers[i].mix_b + self.w
    }
    pub(crate) fn temb_w(&self, i: usize) -> Range<usize> {
        self.layers[i].temb_w..self.layers[i].temb_w + self.w * self.d
    }
    fn temb_b(&self, i: usize) -> Range<usize> {
        self.layers[i].temb_b..self.layers[i].temb_b + self.w
    }
    pub(crate) fn head_w(&self) -> Range<usize> {
        self.head_w..self.head_w + self.c * self.w
    }
    pub(crate) fn head_b(&self) -> Range<usize> {
        self.head_b..self.head_b + self.c
    }
}

/// Intermediates of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct EvalCache {
    x: Vec<f64>,        // L*C input copy
    emb: Vec<f64>,      // D
    hs: Vec<Vec<f64>>,  // residual stream before each block and after the last
    vs: Vec<Vec<f64>>,  // pre-gate conv outputs, L*2W per block
    gs: Vec<Vec<f64>>,  // gated activations, L*W per block
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// `out[l, :] = b + W * inp[l, :]` for every row.
fn affine_rows(out: &mut [f64], inp: &[f64], w: &[f64], b: &[f64], rows: usize, din: usize, dout: usize) {
    for l in 0..rows {
        let src = &inp[l * din..(l + 1) * din];
        let dst = &mut out[l * dout..(l + 1) * dout];
        for (o, d) in dst.iter_mut().enumerate() {
            let row = &w[o * din..(o + 1) * din];
            let mut acc = b[o];
            for (wv, iv) in row.iter().zip(src) {
                acc += wv * iv;
            }
            *d = acc;
        }
    }
}

/// Dilated kernel-3 convolution over the time axis, `win -> wout` channels.
/// Weight layout: `[wout][tap][win]`, taps at offsets `-dil, 0, +dil`.
fn dilated_conv(
    out: &mut [f64],
    inp: &[f64],
    w: &[f64],
    b: &[f64],
    rows: usize,
    win: usize,
    wout: usize,
    dil: usize,
) {
    for l in 0..rows {
        let dst = &mut out[l * wout..(l + 1) * wout];
        for (o, d) in dst.iter_mut().enumerate() {
            let mut acc = b[o];
            for k in 0..3usize {
                let shifted = l as isize + (k as isize - 1) * dil as isize;
                if shifted < 0 || shifted >= rows as isize {
                    continue;
                }
                let src = &inp[shifted as usize * win..(shifted as usize + 1) * win];
                let row = &w[(o * 3 + k) * win..(o * 3 + k + 1) * win];
                for (wv, iv) in row.iter().zip(src) {
                    acc += wv * iv;
                }
            }
            *d = acc;
        }
    }
}

/// Gated activation: `g = sigmoid(v[.., :w]) * tanh(v[.., w:])`.
fn gate(g: &mut [f64], v: &[f64], rows: usize, w: usize) {
    for l in 0..rows {
        let vrow = &v[l * 2 * w..(l + 1) * 2 * w];
        let grow = &mut g[l * w..(l + 1) * w];
        for j in 0..w {
            grow[j] = sigmoid(vrow[j]) * vrow[w + j].tanh();
        }
    }
}

pub(crate) fn forward(
    cfg: &DenoiserConfig,
    layout: &Layout,
    params: &[f64],
    x: &Array2<f64>,
    t: usize,
) -> (Array2<f64>, EvalCache) {
    let (l_len, c, w, d) = (
        cfg.window_len,
        cfg.input_channels,
        cfg.channels,
        cfg.time_emb_dim,
    );
    let x_flat: Vec<f64> = x.iter().copied().collect();
    let emb = embed_timestep(t, d).expect("config validated");

    let mut hs = Vec::with_capacity(cfg.residual_layers + 1);
    let mut vs = Vec::with_capacity(cfg.residual_layers);
    let mut gs = Vec::with_capacity(cfg.residual_layers);

    let mut h = vec![0.0; l_len * w];
    affine_rows(
        &mut h,
        &x_flat,
        &params[layout.input_w()],
        &params[layout.input_b()],
        l_len,
        c,
        w,
    );
    hs.push(h);

    for i in 0..cfg.residual_layers {
        let dil = 1usize << i;
        let h_in = hs.last().unwrap();

        let mut v = vec![0.0; l_len * 2 * w];
        dilated_conv(
            &mut v,
            h_in,
            &params[layout.conv_w(i)],
            &params[layout.conv_b(i)],
            l_len,
            w,
            2 * w,
            dil,
        );

        let mut g = vec![0.0; l_len * w];
        gate(&mut g, &v, l_len, w);

        // Step-embedding projection, shared across positions.
        let temb_w = &params[layout.temb_w(i)];
        let temb_b = &params[layout.temb_b(i)];
        let mut temb = vec![0.0; w];
        for (j, tv) in temb.iter_mut().enumerate() {
            let row = &temb_w[j * d..(j + 1) * d];
            let mut acc = temb_b[j];
            for (wv, ev) in row.iter().zip(&emb) {
                acc += wv * ev;
            }
            *tv = acc;
        }

        let mix_w = &params[layout.mix_w(i)];
        let mix_b = &params[layout.mix_b(i)];
        let mut h_out = hs.last().unwrap().clone();
        for l in 0..l_len {
            let grow = &g[l * w..(l + 1) * w];
            let hrow = &mut h_out[l * w..(l + 1) * w];
            for j in 0..w {
                let row = &mix_w[j * w..(j + 1) * w];
                let mut acc = mix_b[j] + temb[j];
                for (wv, gv) in row.iter().zip(grow) {
                    acc += wv * gv;
                }
                hrow[j] += acc;
            }
        }

        vs.push(v);
        gs.push(g);
        hs.push(h_out);
    }

    let mut out_flat = vec![0.0; l_len * c];
    affine_rows(
        &mut out_flat,
        hs.last().unwrap(),
        &params[layout.head_w()],
        &params[layout.head_b()],
        l_len,
        w,
        c,
    );
    if cfg.skip_input_to_output {
        for (o, xv) in out_flat.iter_mut().zip(&x_flat) {
            *o += xv;
        }
    }
    let out = Array2::from_shape_vec((l_len, c), out_flat).expect("shape");
    (
        out,
        EvalCache {
            x: x_flat,
            emb,
            hs,
            vs,
            gs,
        },
    )
}

/// Reverse-mode pass. Returns the input gradient and/or the parameter
/// gradient depending on the `want_*` flags.
pub(crate) fn backward(
    cfg: &DenoiserConfig,
    layout: &Layout,
    params: &[f64],
    cache: &EvalCache,
    cotangent: &Array2<f64>,
    want_input: bool,
    want_params: bool,
) -> (Option<Array2<f64>>, Option<Vec<f64>>) {
    let (l_len, c, w, d) = (
        cfg.window_len,
        cfg.input_channels,
        cfg.channels,
        cfg.time_emb_dim,
    );
    assert_eq!(cotangent.dim(), (l_len, c), "cotangent shape");
    let cot: Vec<f64> = cotangent.iter().copied().collect();
    let mut dparams = if want_params {
        vec![0.0; layout.total()]
    } else {
        Vec::new()
    };

    // Head backward.
    let head_w = &params[layout.head_w()];
    let h_last = cache.hs.last().unwrap();
    let mut dh = vec![0.0; l_len * w];
    for l in 0..l_len {
        let crow = &cot[l * c..(l + 1) * c];
        let drow = &mut dh[l * w..(l + 1) * w];
        for (ci, cv) in crow.iter().enumerate() {
            let row = &head_w[ci * w..(ci + 1) * w];
            for (dv, wv) in drow.iter_mut().zip(row) {
                *dv += wv * cv;
            }
        }
    }
    if want_params {
        let hw = layout.head_w().start;
        let hb = layout.head_b().start;
        for l in 0..l_len {
            let crow = &cot[l * c..(l + 1) * c];
            let hrow = &h_last[l * w..(l + 1) * w];
            for (ci, cv) in crow.iter().enumerate() {
                dparams[hb + ci] += cv;
                let wrow = &mut dparams[hw + ci * w..hw + (ci + 1) * w];
                for (wv, hv) in wrow.iter_mut().zip(hrow) {
                    *wv += cv * hv;
                }
            }
        }
    }

    for i in (0..cfg.residual_layers).rev() {
        let dil = 1usize << i;
        let h_in = &cache.hs[i];
        let v = &cache.vs[i];
        let g = &cache.gs[i];
        let mix_w = &params[layout.mix_w(i)];
        let conv_w = &params[layout.conv_w(i)];

        // dz = dh (the residual adds z to the stream). Mix backward.
        let mut dg = vec![0.0; l_len * w];
        for l in 0..l_len {
            let dzrow = &dh[l * w..(l + 1) * w];
            let dgrow = &mut dg[l * w..(l + 1) * w];
            for (j, dz) in dzrow.iter().enumerate() {
                let row = &mix_w[j * w..(j + 1) * w];
                for (dgv, wv) in dgrow.iter_mut().zip(row) {
                    *dgv += wv * dz;
                }
            }
        }
        if want_params {
            let mw = layout.mix_w(i).start;
            let mb = layout.mix_b(i).start;
            let tw = layout.temb_w(i).start;
            let tb = layout.temb_b(i).start;
            let mut col_sum = vec![0.0; w];
            for l in 0..l_len {
                let dzrow = &dh[l * w..(l + 1) * w];
                let grow = &g[l * w..(l + 1) * w];
                for (j, dz) in dzrow.iter().enumerate() {
                    col_sum[j] += dz;
                    let wrow = &mut dparams[mw + j * w..mw + (j + 1) * w];
                    for (wv, gv) in wrow.iter_mut().zip(grow) {
                        *wv += dz * gv;
                    }
                }
            }
            for (j, s) in col_sum.iter().enumerate() {
                dparams[mb + j] += s;
                dparams[tb + j] += s;
                let wrow = &mut dparams[tw + j * d..tw + (j + 1) * d];
                for (wv, ev) in wrow.iter_mut().zip(&cache.emb) {
                    *wv += s * ev;
                }
            }
        }

        // Gate backward: g = sigmoid(a) * tanh(b) with a = v[:w], b = v[w:].
        let mut dv = vec![0.0; l_len * 2 * w];
        for l in 0..l_len {
            let vrow = &v[l * 2 * w..(l + 1) * 2 * w];
            let dgrow = &dg[l * w..(l + 1) * w];
            let dvrow = &mut dv[l * 2 * w..(l + 1) * 2 * w];
            for j in 0..w {
                let sa = sigmoid(vrow[j]);
                let tb = vrow[w + j].tanh();
                dvrow[j] = dgrow[j] * sa * (1.0 - sa) * tb;
                dvrow[w + j] = dgrow[j] * sa * (1.0 - tb * tb);
            }
        }

        // Conv backward: accumulate into the residual stream gradient.
        for l in 0..l_len {
            let dvrow = &dv[l * 2 * w..(l + 1) * 2 * w];
            for k in 0..3usize {
                let shifted = l as isize + (k as isize - 1) * dil as isize;
                if shifted < 0 || shifted >= l_len as isize {
                    continue;
                }
                let dst = shifted as usize;
                for (o, dvv) in dvrow.iter().enumerate() {
                    if *dvv == 0.0 {
                        continue;
                    }
                    let row = &conv_w[(o * 3 + k) * w..(o * 3 + k + 1) * w];
                    let drow = &mut dh[dst * w..(dst + 1) * w];
                    for (dhv, wv) in drow.iter_mut().zip(row) {
                        *dhv += wv * dvv;
                    }
                }
            }
        }
        if want_params {
            let cw = layout.conv_w(i).start;
            let cb = layout.conv_b(i).start;
            for l in 0..l_len {
                let dvrow = &dv[l * 2 * w..(l + 1) * 2 * w];
                for (o, dvv) in dvrow.iter().enumerate() {
                    if *dvv == 0.0 {
                        continue;
                    }
                    dparams[cb + o] += dvv;
                    for k in 0..3usize {
                        let shifted = l as isize + (k as isize - 1) * dil as isize;
                        if shifted < 0 || shifted >= l_len as isize {
                            continue;
                        }
                        let src = &h_in[shifted as usize * w..(shifted as usize + 1) * w];
                        let wrow =
                            &mut dparams[cw + (o * 3 + k) * w..cw + (o * 3 + k + 1) * w];
                        for (wv, hv) in wrow.iter_mut().zip(src) {
                            *wv += dvv * hv;
                        }
                    }
                }
            }
        }
    }

    // Input projection backward.
    let input_w = &params[layout.input_w()];
    let dx = if want_input {
        let mut dx = if cfg.skip_input_to_output {
            cot.clone()
        } else {
            vec![0.0; l_len * c]
        };
        for l in 0..l_len {
            let dhrow = &dh[l * w..(l + 1) * w];
            let dxrow = &mut dx[l * c..(l + 1) * c];
            for (j, dhv) in dhrow.iter().enumerate() {
                let row = &input_w[j * c..(j + 1) * c];
                for (dxv, wv) in dxrow.iter_mut().zip(row) {
                    *dxv += wv * dhv;
                }
            }
        }
        Some(Array2::from_shape_vec((l_len, c), dx).expect("shape"))
    } else {
        None
    };
    if want_params {
        let iw = layout.input_w().start;
        let ib = layout.input_b().start;
        for l in 0..l_len {
            let dhrow = &dh[l * w..(l + 1) * w];
            let xrow = &cache.x[l * c..(l + 1) * c];
            for (j, dhv) in dhrow.iter().enumerate() {
                dparams[ib + j] += dhv;
                let wrow = &mut dparams[iw + j * c..iw + (j + 1) * c];
                for (wv, xv) in wrow.iter_mut().zip(xrow) {
                    *wv += dhv * xv;
                }
            }
        }
    }

    (dx, if want_params { Some(dparams) } else { None })
}

#[cfg(test)]
mod tests {
    use super::super::{DenoiserConfig, Denoiser, NoisePredictor};
    use super::*;
    use crate::rng::{standard_normal_matrix, substream};
    use approx::assert_relative_eq;

    /// Independent straight-line re-implementation of the forward pass used
    /// as the manual-evaluation oracle. Written against the layout contract,
    /// not the production kernels.
    fn naive_forward(cfg: &DenoiserConfig, params: &[f64], x: &Array2<f64>, t: usize) -> Array2<f64> {
        let layout = Layout::new(cfg);
        let (ll, cc, ww, dd) = (
            cfg.window_len,
            cfg.input_channels,
            cfg.channels,
            cfg.time_emb_dim,
        );
        let emb = embed_timestep(t, dd).unwrap();
        let mut h = vec![vec![0.0; ww]; ll];
        for l in 0..ll {
            for j in 0..ww {
                let mut acc = params[layout.input_b()][j];
                for ci in 0..cc {
                    acc += params[layout.input_w()][j * cc + ci] * x[[l, ci]];
                }
                h[l][j] = acc;
            }
        }
        for i in 0..cfg.residual_layers {
            let dil = 1usize << i;
            let mut v = vec![vec![0.0; 2 * ww]; ll];
            for l in 0..ll {
                for o in 0..2 * ww {
                    let mut acc = params[layout.conv_b(i)][o];
                    for k in 0..3usize {
                        let pos = l as isize + dil as isize * (k as isize - 1);
                        if pos >= 0 && (pos as usize) < ll {
                            for j in 0..ww {
                                acc += params[layout.conv_w(i)][(o * 3 + k) * ww + j]
                                    * h[pos as usize][j];
                            }
                        }
                    }
                    v[l][o] = acc;
                }
            }
            let mut temb = vec![0.0; ww];
            for j in 0..ww {
                let mut acc = params[layout.temb_b(i)][j];
                for k in 0..dd {
                    acc += params[layout.temb_w(i)][j * dd + k] * emb[k];
                }
                temb[j] = acc;
            }
            let mut next = h.clone();
            for l in 0..ll {
                for j in 0..ww {
                    let mut acc = params[layout.mix_b(i)][j] + temb[j];
                    for u in 0..ww {
                        let gu = 1.0 / (1.0 + (-v[l][u]).exp()) * v[l][ww + u].tanh();
                        acc += params[layout.mix_w(i)][j * ww + u] * gu;
                    }
                    next[l][j] += acc;
                }
            }
            h = next;
        }
        let mut out = Array2::zeros((ll, cc));
        for l in 0..ll {
            for ci in 0..cc {
                let mut acc = params[layout.head_b()][ci];
                for j in 0..ww {
                    acc += params[layout.head_w()][ci * ww + j] * h[l][j];
                }
                if cfg.skip_input_to_output {
                    acc += x[[l, ci]];
                }
                out[[l, ci]] = acc;
            }
        }
        out
    }

    fn random_net(cfg: DenoiserConfig, seed: u64) -> Denoiser {
        let mut d = Denoiser::init(cfg, seed).unwrap();
        super::super::tests::randomize_head(&mut d, seed.wrapping_add(100));
        d
    }

    #[test]
    fn forward_matches_naive_oracle() {
        let cfg = DenoiserConfig {
            window_len: 4,
            input_channels: 1,
            residual_layers: 1,
            channels: 2,
            time_emb_dim: 4,
            skip_input_to_output: false,
        };
        let d = random_net(cfg.clone(), 21);
        let mut rng = substream(31, &[]);
        let x = standard_normal_matrix(&mut rng, 4, 1);
        let got = d.forward(&x, 3).unwrap();
        let want = naive_forward(&cfg, &d.params().values, &x, 3);
        for (g, w) in got.iter().zip(want.iter()) {
            assert_relative_eq!(*g, *w, epsilon = 1e-13);
        }
    }

    #[test]
    fn forward_matches_naive_oracle_multichannel() {
        let cfg = DenoiserConfig {
            window_len: 9,
            input_channels: 3,
            residual_layers: 3,
            channels: 5,
            time_emb_dim: 8,
            skip_input_to_output: true,
        };
        let d = random_net(cfg.clone(), 22);
        let mut rng = substream(32, &[]);
        let x = standard_normal_matrix(&mut rng, 9, 3);
        for t in [1usize, 50, 100] {
            let got = d.forward(&x, t).unwrap();
            let want = naive_forward(&cfg, &d.params().values, &x, t);
            for (g, w) in got.iter().zip(want.iter()) {
                assert_relative_eq!(*g, *w, epsilon = 1e-12);
            }
        }
    }

    fn fd_input_grad(
        d: &Denoiser,
        x: &Array2<f64>,
        t: usize,
        cot: &Array2<f64>,
        h: f64,
    ) -> Array2<f64> {
        let mut grad = Array2::zeros(x.dim());
        let (rows, cols) = x.dim();
        for r in 0..rows {
            for c in 0..cols {
                let mut xp = x.clone();
                xp[[r, c]] += h;
                let mut xm = x.clone();
                xm[[r, c]] -= h;
                let fp: f64 = d
                    .forward(&xp, t)
                    .unwrap()
                    .iter()
                    .zip(cot.iter())
                    .map(|(a, b)| a * b)
                    .sum();
                let fm: f64 = d
                    .forward(&xm, t)
                    .unwrap()
                    .iter()
                    .zip(cot.iter())
                    .map(|(a, b)| a * b)
                    .sum();
                grad[[r, c]] = (fp - fm) / (2.0 * h);
            }
        }
        grad
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        diff / na.max(nb).max(1e-12)
    }

    #[test]
    fn input_vjp_matches_finite_differences() {
        let cfg = DenoiserConfig {
            window_len: 6,
            input_channels: 2,
            residual_layers: 2,
            channels: 3,
            time_emb_dim: 6,
            skip_input_to_output: true,
        };
        let d = random_net(cfg, 41);
        let mut rng = substream(42, &[]);
        for t in [1usize, 50, 100] {
            let x = standard_normal_matrix(&mut rng, 6, 2);
            let cot = standard_normal_matrix(&mut rng, 6, 2);
            let ana = d.vjp_input(&x, t, &cot).unwrap();
            let num = fd_input_grad(&d, &x, t, &cot, 1e-5);
            let e = rel_err(ana.as_slice().unwrap(), num.as_slice().unwrap());
            assert!(e < 1e-5, "t={t} rel err {e}");
        }
    }

    #[test]
    fn param_vjp_matches_finite_differences() {
        let cfg = DenoiserConfig {
            window_len: 5,
            input_channels: 1,
            residual_layers: 2,
            channels: 2,
            time_emb_dim: 4,
            skip_input_to_output: false,
        };
        let d = random_net(cfg.clone(), 51);
        let mut rng = substream(52, &[]);
        let x = standard_normal_matrix(&mut rng, 5, 1);
        let cot = standard_normal_matrix(&mut rng, 5, 1);
        let ana = d.vjp_params(&x, 2, &cot).unwrap();

        let h = 1e-5;
        let mut num = vec![0.0; ana.len()];
        for p in 0..ana.len() {
            let mut plus = d.clone();
            plus.params_mut()[p] += h;
            let mut minus = d.clone();
            minus.params_mut()[p] -= h;
            let fp: f64 = plus
                .forward(&x, 2)
                .unwrap()
                .iter()
                .zip(cot.iter())
                .map(|(a, b)| a * b)
                .sum();
            let fm: f64 = minus
                .forward(&x, 2)
                .unwrap()
                .iter()
                .zip(cot.iter())
                .map(|(a, b)| a * b)
                .sum();
            num[p] = (fp - fm) / (2.0 * h);
        }
        let e = rel_err(&ana, &num);
        assert!(e < 1e-5, "rel err {e}");
    }
}
