//! Forward and backward kernels shared by the recording tape and the plain
//! evaluator. Sequences are `[channels x T]`, row-major.

use super::{NnError, Tensor};

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
}

pub fn check_dense(w: &Tensor, x: &Tensor, b: &Tensor) -> Result<(), NnError> {
    let ws = w.shape();
    if ws.len() != 2 || x.shape().len() != 1 || ws[1] != x.len() || b.shape() != [ws[0]] {
        return Err(NnError::Shape(format!(
            "dense: W {:?}, x {:?}, b {:?} (need W [out x in], x [in], b [out])",
            ws,
            x.shape(),
            b.shape()
        )));
    }
    Ok(())
}

pub fn dense_forward(w: &Tensor, x: &Tensor, b: &Tensor) -> Tensor {
    let out = w.shape()[0];
    let y: Vec<f64> = (0..out).map(|o| dot(w.row(o), x.data()) + b.data()[o]).collect();
    Tensor::vector(y)
}

/// Returns (dW, dx, db).
pub fn dense_backward(w: &Tensor, x: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (out, inp) = (w.shape()[0], w.shape()[1]);
    let mut dw = Tensor::zeros(&[out, inp]);
    let mut dx = Tensor::zeros(&[inp]);
    for o in 0..out {
        let g = dy.data()[o];
        axpy(g, x.data(), &mut dw.data_mut()[o * inp..(o + 1) * inp]);
        axpy(g, w.row(o), dx.data_mut());
    }
    (dw, dx, dy.clone())
}

pub fn check_conv(x: &Tensor, w: &Tensor, b: Option<&Tensor>, dilation: usize) -> Result<(), NnError> {
    let (xs, ws) = (x.shape(), w.shape());
    if dilation == 0 {
        return Err(NnError::Shape("conv1d: dilation must be >= 1".into()));
    }
    if xs.len() != 2 || ws.len() != 3 || ws[1] != xs[0] || ws[2] == 0 {
        return Err(NnError::Shape(format!(
            "conv1d: x {xs:?}, kernel {ws:?} (need x [in x T], kernel [out x in x k])"
        )));
    }
    if let Some(b) = b {
        if b.shape() != [ws[0]] {
            return Err(NnError::Shape(format!("conv1d: bias {:?} for {} outputs", b.shape(), ws[0])));
        }
    }
    Ok(())
}

/// Causal dilated convolution with zero left padding. Tap `j` of a size-`k`
/// kernel reads `x[t - (k-1-j) d]`, so the last tap is the current sample.
pub fn conv1d_forward(x: &Tensor, w: &Tensor, b: Option<&Tensor>, dilation: usize) -> Tensor {
    let (cin, t_len) = (x.shape()[0], x.shape()[1]);
    let (cout, k) = (w.shape()[0], w.shape()[2]);
    let mut y = Tensor::zeros(&[cout, t_len]);
    let wd = w.data();
    for o in 0..cout {
        let yrow = &mut y.data_mut()[o * t_len..(o + 1) * t_len];
        if let Some(b) = b {
            yrow.iter_mut().for_each(|v| *v = b.data()[o]);
        }
        for i in 0..cin {
            let xrow = x.row(i);
            for j in 0..k {
                let lag = (k - 1 - j) * dilation;
                if lag >= t_len {
                    continue;
                }
                let wv = wd[(o * cin + i) * k + j];
                if wv != 0.0 {
                    axpy(wv, &xrow[..t_len - lag], &mut yrow[lag..]);
                }
            }
        }
    }
    y
}

/// Returns (dx, dw, db).
pub fn conv1d_backward(x: &Tensor, w: &Tensor, dilation: usize, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (cin, t_len) = (x.shape()[0], x.shape()[1]);
    let (cout, k) = (w.shape()[0], w.shape()[2]);
    let mut dx = Tensor::zeros(&[cin, t_len]);
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[cout]);
    for o in 0..cout {
        let dyrow = dy.row(o);
        db.data_mut()[o] = dyrow.iter().sum();
        for i in 0..cin {
            let xrow = x.row(i);
            for j in 0..k {
                let lag = (k - 1 - j) * dilation;
                if lag >= t_len {
                    continue;
                }
                let idx = (o * cin + i) * k + j;
                dw.data_mut()[idx] = dot(&dyrow[lag..], &xrow[..t_len - lag]);
                let wv = w.data()[idx];
                if wv != 0.0 {
                    axpy(wv, &dyrow[lag..], &mut dx.data_mut()[i * t_len..i * t_len + t_len - lag]);
                }
            }
        }
    }
    (dx, dw, db)
}

pub fn check_lstm(x: &Tensor, w_ih: &Tensor, w_hh: &Tensor, b: &Tensor) -> Result<usize, NnError> {
    let (xs, wi, wh) = (x.shape(), w_ih.shape(), w_hh.shape());
    if xs.len() != 2 || wi.len() != 2 || wh.len() != 2 || wi[0] % 4 != 0 {
        return Err(NnError::Shape(format!("lstm: x {xs:?}, W_ih {wi:?}, W_hh {wh:?}")));
    }
    let h = wi[0] / 4;
    if wi[1] != xs[0] || wh != [4 * h, h] || b.shape() != [4 * h] {
        return Err(NnError::Shape(format!(
            "lstm: x {xs:?}, W_ih {wi:?}, W_hh {wh:?}, b {:?} (need W_ih [4H x in], W_hh [4H x H], b [4H])",
            b.shape()
        )));
    }
    Ok(h)
}

/// Activations kept for the backward pass, all `[T x ...]` time-major.
#[derive(Debug, Clone)]
pub struct LstmCache {
    hidden: usize,
    /// post-activation gates i, f, g, o: [T x 4H]
    gates: Vec<f64>,
    /// cell state: [T x H]
    cell: Vec<f64>,
    /// hidden state: [T x H]
    h: Vec<f64>,
}

/// Standard LSTM over the whole sequence from a zero state. Gate rows are
/// ordered input, forget, cell candidate, output.
pub fn lstm_forward(x: &Tensor, w_ih: &Tensor, w_hh: &Tensor, b: &Tensor) -> (Tensor, LstmCache) {
    let (cin, t_len) = (x.shape()[0], x.shape()[1]);
    let h = w_ih.shape()[0] / 4;
    let g4 = 4 * h;

    // input projection for all steps: [4H x T]
    let mut zx = vec![0.0; g4 * t_len];
    for r in 0..g4 {
        let row = &mut zx[r * t_len..(r + 1) * t_len];
        row.iter_mut().for_each(|v| *v = b.data()[r]);
        for i in 0..cin {
            let wv = w_ih.data()[r * cin + i];
            if wv != 0.0 {
                axpy(wv, x.row(i), row);
            }
        }
    }

    let mut gates = vec![0.0; t_len * g4];
    let mut cell = vec![0.0; t_len * h];
    let mut hs = vec![0.0; t_len * h];
    let zero = vec![0.0; h];
    let mut z = vec![0.0; g4];
    for t in 0..t_len {
        let (h_prev, c_prev) = if t == 0 {
            (&zero[..], &zero[..])
        } else {
            (&hs[(t - 1) * h..t * h], &cell[(t - 1) * h..t * h])
        };
        for r in 0..g4 {
            z[r] = zx[r * t_len + t] + dot(&w_hh.data()[r * h..(r + 1) * h], h_prev);
        }
        let gt = &mut gates[t * g4..(t + 1) * g4];
        for k in 0..h {
            gt[k] = sigmoid(z[k]);
            gt[h + k] = sigmoid(z[h + k]);
            gt[2 * h + k] = z[2 * h + k].tanh();
            gt[3 * h + k] = sigmoid(z[3 * h + k]);
        }
        let mut c_new = vec![0.0; h];
        for k in 0..h {
            c_new[k] = gt[h + k] * c_prev[k] + gt[k] * gt[2 * h + k];
        }
        for k in 0..h {
            hs[t * h + k] = gt[3 * h + k] * c_new[k].tanh();
        }
        cell[t * h..(t + 1) * h].copy_from_slice(&c_new);
    }

    let mut out = Tensor::zeros(&[h, t_len]);
    for t in 0..t_len {
        for k in 0..h {
            out.data_mut()[k * t_len + t] = hs[t * h + k];
        }
    }
    (out, LstmCache { hidden: h, gates, cell, h: hs })
}

/// Backpropagation through time. Returns (dx, dW_ih, dW_hh, db).
pub fn lstm_backward(
    x: &Tensor,
    w_ih: &Tensor,
    w_hh: &Tensor,
    cache: &LstmCache,
    dout: &Tensor,
) -> (Tensor, Tensor, Tensor, Tensor) {
    let (cin, t_len) = (x.shape()[0], x.shape()[1]);
    let h = cache.hidden;
    let g4 = 4 * h;
    let mut dz_all = vec![0.0; g4 * t_len]; // [4H x T]
    let mut dw_hh = Tensor::zeros(&[g4, h]);
    let mut db = Tensor::zeros(&[g4]);
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let mut dz = vec![0.0; g4];

    for t in (0..t_len).rev() {
        let gt = &cache.gates[t * g4..(t + 1) * g4];
        let c = &cache.cell[t * h..(t + 1) * h];
        for k in 0..h {
            let (i, f, g, o) = (gt[k], gt[h + k], gt[2 * h + k], gt[3 * h + k]);
            let c_prev = if t == 0 { 0.0 } else { cache.cell[(t - 1) * h + k] };
            let tc = c[k].tanh();
            let dh = dout.data()[k * t_len + t] + dh_next[k];
            let d_o = dh * tc;
            let dc = dh * o * (1.0 - tc * tc) + dc_next[k];
            let di = dc * g;
            let dg = dc * i;
            let df = dc * c_prev;
            dc_next[k] = dc * f;
            dz[k] = di * i * (1.0 - i);
            dz[h + k] = df * f * (1.0 - f);
            dz[2 * h + k] = dg * (1.0 - g * g);
            dz[3 * h + k] = d_o * o * (1.0 - o);
        }
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..g4 {
            let g = dz[r];
            dz_all[r * t_len + t] = g;
            db.data_mut()[r] += g;
            if g == 0.0 {
                continue;
            }
            if t > 0 {
                let h_prev = &cache.h[(t - 1) * h..t * h];
                axpy(g, h_prev, &mut dw_hh.data_mut()[r * h..(r + 1) * h]);
            }
            axpy(g, &w_hh.data()[r * h..(r + 1) * h], &mut dh_next);
        }
    }

    let mut dw_ih = Tensor::zeros(&[g4, cin]);
    let mut dx = Tensor::zeros(&[cin, t_len]);
    for r in 0..g4 {
        let dzr = &dz_all[r * t_len..(r + 1) * t_len];
        for i in 0..cin {
            dw_ih.data_mut()[r * cin + i] = dot(dzr, x.row(i));
            let wv = w_ih.data()[r * cin + i];
            if wv != 0.0 {
                axpy(wv, dzr, &mut dx.data_mut()[i * t_len..(i + 1) * t_len]);
            }
        }
    }
    (dx, dw_ih, dw_hh, db)
}
