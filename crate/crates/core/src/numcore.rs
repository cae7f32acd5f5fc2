//! Minimal differentiable numerics: dense matrices, linear and GRU layers
//! with hand-derived backward passes, softmax, the squared TD loss, Adam,
//! and a central-difference gradient checker.
//!
//! Everything is double precision and single-threaded. There is no autodiff
//! tape; the network architecture is fixed, so each layer carries its own
//! exact backward pass.

use rand::Rng;

#[derive(Debug, thiserror::Error)]
pub enum NumError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("numeric fault: {0}")]
    NumericFault(String),
    #[error("empty input")]
    EmptyInput,
}

/// Row-major dense matrix, f64.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let r = rows.len();
        let c = if r > 0 { rows[0].len() } else { 0 };
        let mut data = Vec::with_capacity(r * c);
        for row in &rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Mat { rows: r, cols: c, data }
    }

    /// Glorot-uniform initialization: U(-s, s) with s = sqrt(6 / (rows + cols)).
    pub fn glorot<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let s = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-s..s)).collect();
        Mat { rows, cols, data }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// y = A x
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len(), "matvec shape");
        let mut y = vec![0.0; self.rows];
        for r in 0..self.rows {
            let row = self.row(r);
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            y[r] = acc;
        }
        y
    }

    /// y = A^T x
    pub fn t_matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, x.len(), "t_matvec shape");
        let mut y = vec![0.0; self.cols];
        for r in 0..self.rows {
            let row = self.row(r);
            let xr = x[r];
            for (yc, a) in y.iter_mut().zip(row) {
                *yc += a * xr;
            }
        }
        y
    }

    /// self += a * b^T (outer product accumulate)
    pub fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        assert_eq!(self.rows, a.len());
        assert_eq!(self.cols, b.len());
        for r in 0..self.rows {
            let ar = a[r];
            let row = self.row_mut(r);
            for (cell, bv) in row.iter_mut().zip(b) {
                *cell += ar * bv;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn add_assign(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

// ---------------------------------------------------------------------------
// Linear layer
// ---------------------------------------------------------------------------

/// y = W x + b
pub fn linear_forward(x: &[f64], w: &Mat, b: &[f64]) -> Result<Vec<f64>, NumError> {
    if w.cols != x.len() || w.rows != b.len() {
        return Err(NumError::ShapeMismatch(format!(
            "linear: W {}x{}, x {}, b {}",
            w.rows,
            w.cols,
            x.len(),
            b.len()
        )));
    }
    let mut y = w.matvec(x);
    add_assign(&mut y, b);
    Ok(y)
}

/// Gradients of y = W x + b given upstream dy.
pub fn linear_backward(dy: &[f64], x: &[f64], w: &Mat) -> Result<(Vec<f64>, Mat, Vec<f64>), NumError> {
    if dy.len() != w.rows || x.len() != w.cols {
        return Err(NumError::ShapeMismatch("linear backward".into()));
    }
    let dx = w.t_matvec(dy);
    let mut dw = Mat::zeros(w.rows, w.cols);
    dw.add_outer(dy, x);
    let db = dy.to_vec();
    Ok((dx, dw, db))
}

// ---------------------------------------------------------------------------
// GRU cell
// ---------------------------------------------------------------------------

/// Weights of a single GRU: z (update), r (reset), h (candidate) gates.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GruParams {
    pub input: usize,
    pub hidden: usize,
    pub wz: Mat,
    pub uz: Mat,
    pub bz: Vec<f64>,
    pub wr: Mat,
    pub ur: Mat,
    pub br: Vec<f64>,
    pub wh: Mat,
    pub uh: Mat,
    pub bh: Vec<f64>,
}

impl GruParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        GruParams {
            input,
            hidden,
            wz: Mat::zeros(hidden, input),
            uz: Mat::zeros(hidden, hidden),
            bz: vec![0.0; hidden],
            wr: Mat::zeros(hidden, input),
            ur: Mat::zeros(hidden, hidden),
            br: vec![0.0; hidden],
            wh: Mat::zeros(hidden, input),
            uh: Mat::zeros(hidden, hidden),
            bh: vec![0.0; hidden],
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        GruParams {
            input,
            hidden,
            wz: Mat::glorot(hidden, input, rng),
            uz: Mat::glorot(hidden, hidden, rng),
            bz: vec![0.0; hidden],
            wr: Mat::glorot(hidden, input, rng),
            ur: Mat::glorot(hidden, hidden, rng),
            br: vec![0.0; hidden],
            wh: Mat::glorot(hidden, input, rng),
            uh: Mat::glorot(hidden, hidden, rng),
            bh: vec![0.0; hidden],
        }
    }

    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("wz", &self.wz.data),
            ("uz", &self.uz.data),
            ("bz", &self.bz),
            ("wr", &self.wr.data),
            ("ur", &self.ur.data),
            ("br", &self.br),
            ("wh", &self.wh.data),
            ("uh", &self.uh.data),
            ("bh", &self.bh),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            ("wz", &mut self.wz.data[..]),
            ("uz", &mut self.uz.data[..]),
            ("bz", &mut self.bz[..]),
            ("wr", &mut self.wr.data[..]),
            ("ur", &mut self.ur.data[..]),
            ("br", &mut self.br[..]),
            ("wh", &mut self.wh.data[..]),
            ("uh", &mut self.uh.data[..]),
            ("bh", &mut self.bh[..]),
        ]
    }
}

/// Per-step intermediates needed for the backward pass.
#[derive(Debug, Clone)]
pub struct GruCache {
    pub xs: Vec<Vec<f64>>,
    /// hs[0] is h_0 (zeros); hs[t+1] is the state after consuming xs[t].
    pub hs: Vec<Vec<f64>>,
    pub zs: Vec<Vec<f64>>,
    pub rs: Vec<Vec<f64>>,
    pub hhats: Vec<Vec<f64>>,
}

/// Runs the GRU over a sequence of input vectors from h_0 = 0 and returns
/// the final hidden state and the cache.
///
/// Gate equations: z = sigma(Wz x + Uz h + bz), r = sigma(Wr x + Ur h + br),
/// hhat = tanh(Wh x + Uh (r*h) + bh), h' = (1-z)*h + z*hhat.
pub fn gru_forward(p: &GruParams, xs: &[Vec<f64>]) -> Result<(Vec<f64>, GruCache), NumError> {
    for x in xs {
        if x.len() != p.input {
            return Err(NumError::ShapeMismatch(format!(
                "gru input {} expected {}",
                x.len(),
                p.input
            )));
        }
    }
    let h0 = vec![0.0; p.hidden];
    let mut cache = GruCache {
        xs: xs.to_vec(),
        hs: vec![h0],
        zs: Vec::with_capacity(xs.len()),
        rs: Vec::with_capacity(xs.len()),
        hhats: Vec::with_capacity(xs.len()),
    };
    for x in xs {
        let h_prev = cache.hs.last().unwrap().clone();
        let mut az = p.wz.matvec(x);
        add_assign(&mut az, &p.uz.matvec(&h_prev));
        add_assign(&mut az, &p.bz);
        let z: Vec<f64> = az.iter().map(|&v| sigmoid(v)).collect();

        let mut ar = p.wr.matvec(x);
        add_assign(&mut ar, &p.ur.matvec(&h_prev));
        add_assign(&mut ar, &p.br);
        let r: Vec<f64> = ar.iter().map(|&v| sigmoid(v)).collect();

        let rh: Vec<f64> = r.iter().zip(&h_prev).map(|(a, b)| a * b).collect();
        let mut ah = p.wh.matvec(x);
        add_assign(&mut ah, &p.uh.matvec(&rh));
        add_assign(&mut ah, &p.bh);
        let hhat: Vec<f64> = ah.iter().map(|&v| v.tanh()).collect();

        let h: Vec<f64> = (0..p.hidden)
            .map(|i| (1.0 - z[i]) * h_prev[i] + z[i] * hhat[i])
            .collect();

        cache.zs.push(z);
        cache.rs.push(r);
        cache.hhats.push(hhat);
        cache.hs.push(h);
    }
    let h_final = cache.hs.last().unwrap().clone();
    if !h_final.iter().all(|v| v.is_finite()) {
        return Err(NumError::NumericFault("gru forward produced non-finite state".into()));
    }
    Ok((h_final, cache))
}

/// Backpropagates an upstream gradient on the final hidden state through
/// the whole sequence. Returns parameter gradients and per-step input grads.
pub fn gru_backward(
    p: &GruParams,
    cache: &GruCache,
    dh_final: &[f64],
) -> Result<(GruParams, Vec<Vec<f64>>), NumError> {
    if dh_final.len() != p.hidden {
        return Err(NumError::ShapeMismatch("gru backward dh".into()));
    }
    let steps = cache.xs.len();
    let mut grads = GruParams::zeros(p.input, p.hidden);
    let mut dxs = vec![vec![0.0; p.input]; steps];
    let mut dh = dh_final.to_vec();

    for t in (0..steps).rev() {
        let x = &cache.xs[t];
        let h_prev = &cache.hs[t];
        let z = &cache.zs[t];
        let r = &cache.rs[t];
        let hhat = &cache.hhats[t];

        let n = p.hidden;
        let mut dz = vec![0.0; n];
        let mut dhhat = vec![0.0; n];
        let mut dh_prev = vec![0.0; n];
        for i in 0..n {
            dz[i] = dh[i] * (hhat[i] - h_prev[i]);
            dhhat[i] = dh[i] * z[i];
            dh_prev[i] = dh[i] * (1.0 - z[i]);
        }

        // candidate gate
        let dah: Vec<f64> = (0..n).map(|i| dhhat[i] * (1.0 - hhat[i] * hhat[i])).collect();
        let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
        grads.wh.add_outer(&dah, x);
        grads.uh.add_outer(&dah, &rh);
        add_assign(&mut grads.bh, &dah);
        let drh = p.uh.t_matvec(&dah);
        let dr: Vec<f64> = (0..n).map(|i| drh[i] * h_prev[i]).collect();
        for i in 0..n {
            dh_prev[i] += drh[i] * r[i];
        }

        // update gate
        let daz: Vec<f64> = (0..n).map(|i| dz[i] * z[i] * (1.0 - z[i])).collect();
        grads.wz.add_outer(&daz, x);
        grads.uz.add_outer(&daz, h_prev);
        add_assign(&mut grads.bz, &daz);
        add_assign(&mut dh_prev, &p.uz.t_matvec(&daz));

        // reset gate
        let dar: Vec<f64> = (0..n).map(|i| dr[i] * r[i] * (1.0 - r[i])).collect();
        grads.wr.add_outer(&dar, x);
        grads.ur.add_outer(&dar, h_prev);
        add_assign(&mut grads.br, &dar);
        add_assign(&mut dh_prev, &p.ur.t_matvec(&dar));

        // input gradient
        let mut dx = p.wz.t_matvec(&daz);
        add_assign(&mut dx, &p.wr.t_matvec(&dar));
        add_assign(&mut dx, &p.wh.t_matvec(&dah));
        dxs[t] = dx;

        dh = dh_prev;
    }
    Ok((grads, dxs))
}

// ---------------------------------------------------------------------------
// Softmax and TD loss
// ---------------------------------------------------------------------------

/// Numerically stable softmax (max-subtracted exponentials).
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>, NumError> {
    if logits.is_empty() {
        return Err(NumError::EmptyInput);
    }
    if !logits.iter().all(|v| v.is_finite()) {
        return Err(NumError::NumericFault("softmax input non-finite".into()));
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.iter().map(|&e| e / sum).collect())
}

/// Squared TD loss with the bootstrap target held constant.
/// Returns (loss, d loss / d q).
pub fn squared_td_loss(q: f64, target: f64) -> (f64, f64) {
    let diff = target - q;
    (diff * diff, -2.0 * diff)
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment buffers for one parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState { m: vec![0.0; len], v: vec![0.0; len] }
    }
}

/// One Adam update with bias correction; `t` is the 1-based step count.
/// A coordinate with zero gradient and zero moments is left bit-identical.
pub fn adam_step(
    param: &mut [f64],
    grad: &[f64],
    state: &mut AdamState,
    t: u64,
    cfg: &AdamConfig,
) -> Result<(), NumError> {
    if param.len() != grad.len() || param.len() != state.m.len() {
        return Err(NumError::ShapeMismatch("adam buffers".into()));
    }
    if !grad.iter().all(|g| g.is_finite()) {
        return Err(NumError::NumericFault("non-finite gradient in adam_step".into()));
    }
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..param.len() {
        let g = grad[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let mhat = state.m[i] / bc1;
        let vhat = state.v[i] / bc2;
        let delta = cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        if delta != 0.0 {
            param[i] -= delta;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Gradient checker
// ---------------------------------------------------------------------------

/// Central finite differences of a scalar function against an analytic
/// gradient. Returns the maximum relative error
/// |a - n| / max(|a|, |n|, 1e-8) over all coordinates.
pub fn grad_check<F>(mut f: F, theta: &[f64], analytic: &[f64], eps: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(theta.len(), analytic.len());
    let mut worst = 0.0f64;
    let mut probe = theta.to_vec();
    for i in 0..theta.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let fp = f(&probe);
        probe[i] = orig - eps;
        let fm = f(&probe);
        probe[i] = orig;
        let numeric = (fp - fm) / (2.0 * eps);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        let rel = (a - numeric).abs() / denom;
        if rel > worst {
            worst = rel;
        }
    }
    worst
}
