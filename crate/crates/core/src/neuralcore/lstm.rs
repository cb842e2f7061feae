use crate::error::{Error, Result};
use crate::neuralcore::{sigmoid, Matrix, Rng};

/// LSTM cell weights. Gate blocks are stacked in the order
/// input, forget, candidate, output; each block has `hidden` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub wx: Matrix,
    pub wh: Matrix,
    pub b: Vec<f64>,
}

impl LstmParams {
    pub fn new(inputs: usize, hidden: usize, rng: &mut Rng) -> Self {
        let mut b = vec![0.0; 4 * hidden];
        b[hidden..2 * hidden].iter_mut().for_each(|v| *v = 1.0);
        LstmParams {
            wx: Matrix::glorot(4 * hidden, inputs, rng),
            wh: Matrix::glorot(4 * hidden, hidden, rng),
            b,
        }
    }

    pub fn zeros(inputs: usize, hidden: usize) -> Self {
        LstmParams {
            wx: Matrix::zeros(4 * hidden, inputs),
            wh: Matrix::zeros(4 * hidden, hidden),
            b: vec![0.0; 4 * hidden],
        }
    }

    pub fn hidden(&self) -> usize {
        self.wh.cols()
    }

    pub fn inputs(&self) -> usize {
        self.wx.cols()
    }
}

/// Activations kept from the forward step for backpropagation.
#[derive(Debug, Clone)]
pub struct LstmCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub o: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

/// One forward step; returns `(h_t, c_t, cache)`.
pub fn lstm_step(
    params: &LstmParams,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, LstmCache)> {
    let h = params.hidden();
    if x.len() != params.inputs() || h_prev.len() != h || c_prev.len() != h || params.b.len() != 4 * h {
        return Err(Error::Shape(format!(
            "lstm step: input {} (expects {}), hidden {} / cell {} (expects {h})",
            x.len(),
            params.inputs(),
            h_prev.len(),
            c_prev.len()
        )));
    }
    let mut a = params.wx.matvec(x)?;
    let ah = params.wh.matvec(h_prev)?;
    for k in 0..4 * h {
        a[k] += ah[k] + params.b[k];
    }
    let i: Vec<f64> = a[..h].iter().map(|&v| sigmoid(v)).collect();
    let f: Vec<f64> = a[h..2 * h].iter().map(|&v| sigmoid(v)).collect();
    let g: Vec<f64> = a[2 * h..3 * h].iter().map(|v| v.tanh()).collect();
    let o: Vec<f64> = a[3 * h..].iter().map(|&v| sigmoid(v)).collect();
    let c: Vec<f64> = (0..h).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h_t: Vec<f64> = (0..h).map(|k| o[k] * tanh_c[k]).collect();
    let cache = LstmCache {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        i,
        f,
        g,
        o,
        tanh_c,
    };
    Ok((h_t, c, cache))
}

/// Backward through one step. `dh`/`dc` are the gradients arriving at
/// `h_t`/`c_t`; parameter gradients accumulate into `grads`.
/// Returns `(dx, dh_prev, dc_prev)`.
pub fn lstm_step_backward(
    params: &LstmParams,
    cache: &LstmCache,
    dh: &[f64],
    dc: &[f64],
    grads: &mut LstmParams,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let h = params.hidden();
    if dh.len() != h || dc.len() != h {
        return Err(Error::Shape(
            "lstm backward: gradient length differs from hidden size".into(),
        ));
    }
    let mut da = vec![0.0; 4 * h];
    let mut dc_prev = vec![0.0; h];
    for k in 0..h {
        let (i, f, g, o, tc) = (cache.i[k], cache.f[k], cache.g[k], cache.o[k], cache.tanh_c[k]);
        let d_o = dh[k] * tc;
        let dct = dc[k] + dh[k] * o * (1.0 - tc * tc);
        let di = dct * g;
        let df = dct * cache.c_prev[k];
        let dg = dct * i;
        dc_prev[k] = dct * f;
        da[k] = di * i * (1.0 - i);
        da[h + k] = df * f * (1.0 - f);
        da[2 * h + k] = dg * (1.0 - g * g);
        da[3 * h + k] = d_o * o * (1.0 - o);
    }
    grads.wx.add_outer(&da, &cache.x);
    grads.wh.add_outer(&da, &cache.h_prev);
    for (gb, d) in grads.b.iter_mut().zip(&da) {
        *gb += d;
    }
    let dx = params.wx.matvec_t(&da)?;
    let dh_prev = params.wh.matvec_t(&da)?;
    Ok((dx, dh_prev, dc_prev))
}
