//! Bidirectional LSTM with full backpropagation through time.
//!
//! Gate layout along the `4H` axis is `[input, forget, candidate, output]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gemm::gemm;
use super::{Param, Tensor};
use crate::error::{MoilError, Result};

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One direction of an LSTM layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LstmCell {
    pub input: usize,
    pub hidden: usize,
    /// Runs from the last time step to the first.
    pub reverse: bool,
    /// `[input × 4H]`
    pub w_x: Param,
    /// `[H × 4H]`
    pub w_h: Param,
    pub bias: Param,
    #[serde(skip)]
    cache: Option<CellCache>,
}

#[derive(Debug, Clone)]
struct CellCache {
    x: Vec<f64>,
    /// Activated gates `[B × L × 4H]`, indexed by absolute time.
    gates: Vec<f64>,
    /// Cell states `[B × L × H]`.
    cells: Vec<f64>,
    /// Hidden states `[B × L × H]`.
    hidden: Vec<f64>,
    batch: usize,
    len: usize,
}

impl LstmCell {
    pub fn new<R: Rng>(input: usize, hidden: usize, reverse: bool, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut bias = Param::zeros(vec![4 * hidden], false);
        bias.value[hidden..2 * hidden].iter_mut().for_each(|b| *b = 1.0);
        Self {
            input,
            hidden,
            reverse,
            w_x: Param::uniform(vec![input, 4 * hidden], bound, rng),
            w_h: Param::uniform(vec![hidden, 4 * hidden], bound, rng),
            bias,
            cache: None,
        }
    }

    fn time(&self, step: usize, len: usize) -> usize {
        if self.reverse {
            len - 1 - step
        } else {
            step
        }
    }

    /// Returns hidden states `[B × L × H]` plus the activated gates and cells.
    fn run(&self, x: &[f64], b: usize, l: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let h = self.hidden;
        let g4 = 4 * h;
        let mut pre = Vec::with_capacity(b * l * g4);
        for _ in 0..b * l {
            pre.extend_from_slice(&self.bias.value);
        }
        gemm(b * l, self.input, g4, x, false, &self.w_x.value, false, &mut pre, 1.0);

        let mut gates = pre;
        let mut cells = vec![0.0; b * l * h];
        let mut hidden = vec![0.0; b * l * h];
        let mut h_prev = vec![0.0; b * h];
        let mut rec = vec![0.0; b * g4];
        for s in 0..l {
            let t = self.time(s, l);
            let first = s == 0;
            if !first {
                gemm(b, h, g4, &h_prev, false, &self.w_h.value, false, &mut rec, 0.0);
            }
            let tp = if first { 0 } else { self.time(s - 1, l) };
            for bi in 0..b {
                let row = bi * l + t;
                let gr = &mut gates[row * g4..(row + 1) * g4];
                if !first {
                    for (g, r) in gr.iter_mut().zip(&rec[bi * g4..(bi + 1) * g4]) {
                        *g += r;
                    }
                }
                for j in 0..h {
                    gr[j] = sigmoid(gr[j]);
                    gr[h + j] = sigmoid(gr[h + j]);
                    gr[2 * h + j] = gr[2 * h + j].tanh();
                    gr[3 * h + j] = sigmoid(gr[3 * h + j]);
                }
                for j in 0..h {
                    let c_prev = if first { 0.0 } else { cells[(bi * l + tp) * h + j] };
                    let c = gr[h + j] * c_prev + gr[j] * gr[2 * h + j];
                    cells[row * h + j] = c;
                    let hv = gr[3 * h + j] * c.tanh();
                    hidden[row * h + j] = hv;
                    h_prev[bi * h + j] = hv;
                }
            }
        }
        (hidden, gates, cells)
    }

    fn forward(&mut self, x: &[f64], b: usize, l: usize) -> Vec<f64> {
        let (hidden, gates, cells) = self.run(x, b, l);
        self.cache = Some(CellCache {
            x: x.to_vec(),
            gates,
            cells,
            hidden: hidden.clone(),
            batch: b,
            len: l,
        });
        hidden
    }

    fn infer(&self, x: &[f64], b: usize, l: usize) -> Vec<f64> {
        self.run(x, b, l).0
    }

    /// `dh_out` is `[B × L × H]`; returns the input gradient `[B × L × input]`.
    fn backward(&mut self, dh_out: &[f64]) -> Result<Vec<f64>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| MoilError::Training("lstm backward without forward".into()))?;
        let (b, l, h) = (cache.batch, cache.len, self.hidden);
        let g4 = 4 * h;
        let mut dgates = vec![0.0; b * l * g4];
        // Hidden state feeding each time step's recurrence, zero at the start.
        let mut h_prev_all = vec![0.0; b * l * h];
        let mut dh_next = vec![0.0; b * h];
        let mut dc_next = vec![0.0; b * h];
        let mut dg_step = vec![0.0; b * g4];
        for s in (0..l).rev() {
            let t = self.time(s, l);
            let prev = if s == 0 { None } else { Some(self.time(s - 1, l)) };
            for bi in 0..b {
                let row = bi * l + t;
                let gr = &cache.gates[row * g4..(row + 1) * g4];
                let dgr = &mut dg_step[bi * g4..(bi + 1) * g4];
                for j in 0..h {
                    let (i, f, g, o) = (gr[j], gr[h + j], gr[2 * h + j], gr[3 * h + j]);
                    let c = cache.cells[row * h + j];
                    let c_prev = prev.map_or(0.0, |tp| cache.cells[(bi * l + tp) * h + j]);
                    let tc = c.tanh();
                    let dh = dh_out[row * h + j] + dh_next[bi * h + j];
                    let d_o = dh * tc;
                    let dc = dc_next[bi * h + j] + dh * o * (1.0 - tc * tc);
                    dgr[j] = dc * g * i * (1.0 - i);
                    dgr[h + j] = dc * c_prev * f * (1.0 - f);
                    dgr[2 * h + j] = dc * i * (1.0 - g * g);
                    dgr[3 * h + j] = d_o * o * (1.0 - o);
                    dc_next[bi * h + j] = dc * f;
                    if let Some(tp) = prev {
                        h_prev_all[row * h + j] = cache.hidden[(bi * l + tp) * h + j];
                    }
                }
                dgates[row * g4..(row + 1) * g4].copy_from_slice(dgr);
            }
            gemm(b, g4, h, &dg_step, false, &self.w_h.value, true, &mut dh_next, 0.0);
        }
        let rows = b * l;
        gemm(h, rows, g4, &h_prev_all, true, &dgates, false, self.w_h.grad_mut(), 1.0);
        gemm(self.input, rows, g4, &cache.x, true, &dgates, false, self.w_x.grad_mut(), 1.0);
        let db = self.bias.grad_mut();
        for row in dgates.chunks_exact(g4) {
            for (g, v) in db.iter_mut().zip(row) {
                *g += v;
            }
        }
        let mut dx = vec![0.0; rows * self.input];
        gemm(rows, g4, self.input, &dgates, false, &self.w_x.value, true, &mut dx, 0.0);
        Ok(dx)
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w_x, &mut self.w_h, &mut self.bias]
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.w_x, &self.w_h, &self.bias]
    }
}

/// `[B × L × C_in] -> [B × L × 2H]`: forward-direction states then
/// backward-direction states at each step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BiLstm {
    pub input: usize,
    pub hidden: usize,
    pub forward: LstmCell,
    pub backward: LstmCell,
}

impl BiLstm {
    pub fn new<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        if input == 0 || hidden == 0 {
            return Err(MoilError::Config(format!(
                "lstm needs positive sizes, got input {input}, hidden {hidden}"
            )));
        }
        let forward = LstmCell::new(input, hidden, false, rng);
        let backward = LstmCell::new(input, hidden, true, rng);
        Ok(Self {
            input,
            hidden,
            forward,
            backward,
        })
    }

    fn check(&self, x: &Tensor) -> Result<(usize, usize)> {
        let (b, l, c) = x.dims3()?;
        if c != self.input {
            return Err(MoilError::Shape(format!("lstm expects {} inputs, got {c}", self.input)));
        }
        Ok((b, l))
    }

    fn concat(&self, fwd: &[f64], bwd: &[f64], b: usize, l: usize) -> Result<Tensor> {
        let h = self.hidden;
        let mut out = Vec::with_capacity(b * l * 2 * h);
        for (f, r) in fwd.chunks_exact(h).zip(bwd.chunks_exact(h)) {
            out.extend_from_slice(f);
            out.extend_from_slice(r);
        }
        Tensor::new(vec![b, l, 2 * h], out)
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let (b, l) = self.check(x)?;
        let f = self.forward.forward(x.data(), b, l);
        let r = self.backward.forward(x.data(), b, l);
        self.concat(&f, &r, b, l)
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let (b, l) = self.check(x)?;
        let f = self.forward.infer(x.data(), b, l);
        let r = self.backward.infer(x.data(), b, l);
        self.concat(&f, &r, b, l)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let (b, l, c) = grad_out.dims3()?;
        let h = self.hidden;
        if c != 2 * h {
            return Err(MoilError::Shape(format!("lstm grad has {c} channels, expected {}", 2 * h)));
        }
        let mut df = Vec::with_capacity(b * l * h);
        let mut dr = Vec::with_capacity(b * l * h);
        for row in grad_out.data().chunks_exact(2 * h) {
            df.extend_from_slice(&row[..h]);
            dr.extend_from_slice(&row[h..]);
        }
        let mut dx = self.forward.backward(&df)?;
        for (d, v) in dx.iter_mut().zip(self.backward.backward(&dr)?) {
            *d += v;
        }
        Tensor::new(vec![b, l, self.input], dx)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.forward.params_mut();
        p.extend(self.backward.params_mut());
        p
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut p = self.forward.params();
        p.extend(self.backward.params());
        p
    }
}
