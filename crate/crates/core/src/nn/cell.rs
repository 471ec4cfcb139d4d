//! SimpleRNN and GRU cells: single steps, their caches, and step-local
//! backpropagation.
//!
//! Kernels are stored input-major, `w_x: [input, hidden]` and
//! `w_h: [hidden, hidden]`, so a step computes `x · w_x + h · w_h + b`.

use super::tensor::{add_acc, mat_vec_acc, outer_acc, vec_mat_acc, Tensor};
use crate::rng::SplitMix64;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    SimpleRnn,
    Gru,
}

impl CellKind {
    pub fn name(self) -> &'static str {
        match self {
            CellKind::SimpleRnn => "simple_rnn",
            CellKind::Gru => "gru",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "simple_rnn" | "simplernn" | "rnn" => Some(CellKind::SimpleRnn),
            "gru" => Some(CellKind::Gru),
            _ => None,
        }
    }
}

/// Which side of the GRU interpolation the update gate `z` weighs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GruConvention {
    /// `h = (1 - z) * h_prev + z * candidate`
    #[default]
    UpdateGatesCandidate,
    /// `h = z * h_prev + (1 - z) * candidate`
    UpdateGatesPrevious,
}

impl GruConvention {
    pub fn name(self) -> &'static str {
        match self {
            GruConvention::UpdateGatesCandidate => "candidate",
            GruConvention::UpdateGatesPrevious => "previous",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "candidate" => Some(GruConvention::UpdateGatesCandidate),
            "previous" => Some(GruConvention::UpdateGatesPrevious),
            _ => None,
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One affine map `x · w_x + h · w_h + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gate {
    pub w_x: Tensor,
    pub w_h: Tensor,
    pub b: Tensor,
}

impl Gate {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_x: Tensor::zeros(&[input, hidden]),
            w_h: Tensor::zeros(&[hidden, hidden]),
            b: Tensor::zeros(&[hidden]),
        }
    }

    fn init(input: usize, hidden: usize, rng: &mut SplitMix64) -> Self {
        Self {
            w_x: glorot_uniform(input, hidden, rng),
            w_h: orthogonal(hidden, rng),
            b: Tensor::zeros(&[hidden]),
        }
    }

    fn pre_activation(&self, x: &[f64], h: &[f64]) -> Vec<f64> {
        let mut a = self.b.data().to_vec();
        vec_mat_acc(x, &self.w_x, &mut a);
        vec_mat_acc(h, &self.w_h, &mut a);
        a
    }

    /// Accumulates parameter gradients for pre-activation gradient `da`.
    fn accumulate(&self, grad: &mut Gate, x: &[f64], h: &[f64], da: &[f64]) {
        outer_acc(&mut grad.w_x, x, da);
        outer_acc(&mut grad.w_h, h, da);
        add_acc(grad.b.data_mut(), da);
    }

    fn check(&self, input: usize, hidden: usize) -> Result<()> {
        self.w_x.check_shape(&[input, hidden])?;
        self.w_h.check_shape(&[hidden, hidden])?;
        self.b.check_shape(&[hidden])
    }
}

pub(crate) fn glorot_uniform(fan_in: usize, fan_out: usize, rng: &mut SplitMix64) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.uniform(-limit, limit)).collect();
    Tensor::from_vec(&[fan_in, fan_out], data).expect("shape")
}

/// Square matrix with orthonormal columns (Gram-Schmidt on Gaussian draws).
pub(crate) fn orthogonal(n: usize, rng: &mut SplitMix64) -> Tensor {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    while cols.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        for _ in 0..2 {
            for c in &cols {
                let dot: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(c).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|a| *a /= norm);
            cols.push(v);
        }
    }
    let mut data = vec![0.0; n * n];
    for (j, c) in cols.iter().enumerate() {
        for (i, v) in c.iter().enumerate() {
            data[i * n + j] = *v;
        }
    }
    Tensor::from_vec(&[n, n], data).expect("shape")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimpleRnnParams {
    pub cell: Gate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub update: Gate,
    pub reset: Gate,
    pub candidate: Gate,
    pub convention: GruConvention,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellParams {
    SimpleRnn(SimpleRnnParams),
    Gru(GruParams),
}

/// Intermediate values of one step, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct StepCache {
    /// Input as seen by the cell (after input dropout).
    pub x: Vec<f64>,
    /// Unmasked previous hidden state.
    pub h_prev: Vec<f64>,
    /// Previous hidden state after the recurrent mask.
    pub h_masked: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub candidate: Vec<f64>,
    pub h: Vec<f64>,
}

impl CellParams {
    pub fn zeros(kind: CellKind, input: usize, hidden: usize, convention: GruConvention) -> Self {
        match kind {
            CellKind::SimpleRnn => CellParams::SimpleRnn(SimpleRnnParams {
                cell: Gate::zeros(input, hidden),
            }),
            CellKind::Gru => CellParams::Gru(GruParams {
                update: Gate::zeros(input, hidden),
                reset: Gate::zeros(input, hidden),
                candidate: Gate::zeros(input, hidden),
                convention,
            }),
        }
    }

    pub fn init(
        kind: CellKind,
        input: usize,
        hidden: usize,
        convention: GruConvention,
        rng: &mut SplitMix64,
    ) -> Self {
        match kind {
            CellKind::SimpleRnn => CellParams::SimpleRnn(SimpleRnnParams {
                cell: Gate::init(input, hidden, rng),
            }),
            CellKind::Gru => CellParams::Gru(GruParams {
                update: Gate::init(input, hidden, rng),
                reset: Gate::init(input, hidden, rng),
                candidate: Gate::init(input, hidden, rng),
                convention,
            }),
        }
    }

    pub fn kind(&self) -> CellKind {
        match self {
            CellParams::SimpleRnn(_) => CellKind::SimpleRnn,
            CellParams::Gru(_) => CellKind::Gru,
        }
    }

    fn gates(&self) -> Vec<&Gate> {
        match self {
            CellParams::SimpleRnn(p) => vec![&p.cell],
            CellParams::Gru(p) => vec![&p.update, &p.reset, &p.candidate],
        }
    }

    fn gates_mut(&mut self) -> Vec<&mut Gate> {
        match self {
            CellParams::SimpleRnn(p) => vec![&mut p.cell],
            CellParams::Gru(p) => vec![&mut p.update, &mut p.reset, &mut p.candidate],
        }
    }

    pub fn input_size(&self) -> usize {
        self.gates()[0].w_x.rows()
    }

    pub fn hidden(&self) -> usize {
        self.gates()[0].w_h.rows()
    }

    /// Parameter tensors in declaration order: per gate `w_x, w_h, b`, gates
    /// ordered update, reset, candidate for GRU.
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.gates()
            .into_iter()
            .flat_map(|g| [&g.w_x, &g.w_h, &g.b])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.gates_mut()
            .into_iter()
            .flat_map(|g| [&mut g.w_x, &mut g.w_h, &mut g.b])
            .collect()
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    pub fn validate(&self) -> Result<()> {
        let (i, h) = (self.input_size(), self.hidden());
        self.gates().iter().try_for_each(|g| g.check(i, h))
    }

    fn check_inputs(&self, x: &[f64], h_prev: &[f64]) -> Result<()> {
        if x.len() != self.input_size() {
            return Err(Error::shape(&[self.input_size()], &[x.len()]));
        }
        if h_prev.len() != self.hidden() {
            return Err(Error::shape(&[self.hidden()], &[h_prev.len()]));
        }
        Ok(())
    }

    /// One step; `rec_mask` multiplies `h_prev` on the recurrent path only.
    pub(crate) fn step(&self, x: &[f64], h_prev: &[f64], rec_mask: Option<&[f64]>) -> StepCache {
        let h_masked: Vec<f64> = match rec_mask {
            Some(m) => h_prev.iter().zip(m).map(|(h, m)| h * m).collect(),
            None => h_prev.to_vec(),
        };
        match self {
            CellParams::SimpleRnn(p) => {
                let mut h = p.cell.pre_activation(x, &h_masked);
                h.iter_mut().for_each(|v| *v = v.tanh());
                StepCache {
                    x: x.to_vec(),
                    h_prev: h_prev.to_vec(),
                    h_masked,
                    z: Vec::new(),
                    r: Vec::new(),
                    candidate: Vec::new(),
                    h,
                }
            }
            CellParams::Gru(p) => {
                let mut z = p.update.pre_activation(x, &h_masked);
                z.iter_mut().for_each(|v| *v = sigmoid(*v));
                let mut r = p.reset.pre_activation(x, &h_masked);
                r.iter_mut().for_each(|v| *v = sigmoid(*v));
                let rh: Vec<f64> = r.iter().zip(&h_masked).map(|(r, h)| r * h).collect();
                let mut c = p.candidate.pre_activation(x, &rh);
                c.iter_mut().for_each(|v| *v = v.tanh());
                let h = match p.convention {
                    GruConvention::UpdateGatesCandidate => h_prev
                        .iter()
                        .zip(&z)
                        .zip(&c)
                        .map(|((hp, z), c)| (1.0 - z) * hp + z * c)
                        .collect(),
                    GruConvention::UpdateGatesPrevious => h_prev
                        .iter()
                        .zip(&z)
                        .zip(&c)
                        .map(|((hp, z), c)| z * hp + (1.0 - z) * c)
                        .collect(),
                };
                StepCache {
                    x: x.to_vec(),
                    h_prev: h_prev.to_vec(),
                    h_masked,
                    z,
                    r,
                    candidate: c,
                    h,
                }
            }
        }
    }

    /// Backpropagates `dh` (total gradient reaching `h_t`) through one step.
    /// Accumulates into `grad` and `dx`; returns the gradient for `h_prev`.
    pub(crate) fn step_backward(
        &self,
        cache: &StepCache,
        dh: &[f64],
        rec_mask: Option<&[f64]>,
        grad: &mut CellParams,
        dx: &mut [f64],
    ) -> Vec<f64> {
        let hidden = dh.len();
        let mut dh_masked = vec![0.0; hidden];
        let mut dh_prev = vec![0.0; hidden];
        match (self, grad) {
            (CellParams::SimpleRnn(p), CellParams::SimpleRnn(g)) => {
                let da: Vec<f64> = dh.iter().zip(&cache.h).map(|(d, h)| d * (1.0 - h * h)).collect();
                p.cell.accumulate(&mut g.cell, &cache.x, &cache.h_masked, &da);
                mat_vec_acc(&p.cell.w_x, &da, dx);
                mat_vec_acc(&p.cell.w_h, &da, &mut dh_masked);
            }
            (CellParams::Gru(p), CellParams::Gru(g)) => {
                let (z, c) = (&cache.z, &cache.candidate);
                let mut dz = vec![0.0; hidden];
                let mut dc = vec![0.0; hidden];
                for j in 0..hidden {
                    match p.convention {
                        GruConvention::UpdateGatesCandidate => {
                            dz[j] = dh[j] * (c[j] - cache.h_prev[j]);
                            dc[j] = dh[j] * z[j];
                            dh_prev[j] = dh[j] * (1.0 - z[j]);
                        }
                        GruConvention::UpdateGatesPrevious => {
                            dz[j] = dh[j] * (cache.h_prev[j] - c[j]);
                            dc[j] = dh[j] * (1.0 - z[j]);
                            dh_prev[j] = dh[j] * z[j];
                        }
                    }
                }
                let dac: Vec<f64> = dc.iter().zip(c).map(|(d, c)| d * (1.0 - c * c)).collect();
                let rh: Vec<f64> = cache.r.iter().zip(&cache.h_masked).map(|(r, h)| r * h).collect();
                p.candidate.accumulate(&mut g.candidate, &cache.x, &rh, &dac);
                mat_vec_acc(&p.candidate.w_x, &dac, dx);
                let mut drh = vec![0.0; hidden];
                mat_vec_acc(&p.candidate.w_h, &dac, &mut drh);

                let mut dar = vec![0.0; hidden];
                for j in 0..hidden {
                    let r = cache.r[j];
                    dar[j] = drh[j] * cache.h_masked[j] * r * (1.0 - r);
                    dh_masked[j] += drh[j] * r;
                }
                let daz: Vec<f64> = dz.iter().zip(z).map(|(d, z)| d * z * (1.0 - z)).collect();

                p.update.accumulate(&mut g.update, &cache.x, &cache.h_masked, &daz);
                p.reset.accumulate(&mut g.reset, &cache.x, &cache.h_masked, &dar);
                mat_vec_acc(&p.update.w_x, &daz, dx);
                mat_vec_acc(&p.reset.w_x, &dar, dx);
                mat_vec_acc(&p.update.w_h, &daz, &mut dh_masked);
                mat_vec_acc(&p.reset.w_h, &dar, &mut dh_masked);
            }
            _ => unreachable!("gradient buffer kind mismatch"),
        }
        match rec_mask {
            Some(m) => {
                for j in 0..hidden {
                    dh_prev[j] += dh_masked[j] * m[j];
                }
            }
            None => add_acc(&mut dh_prev, &dh_masked),
        }
        dh_prev
    }
}

/// `h_t = tanh(x_t · W_x + h_prev · W_h + b)`.
pub fn simple_rnn_step(x: &[f64], h_prev: &[f64], p: &SimpleRnnParams) -> Result<Vec<f64>> {
    let cell = CellParams::SimpleRnn(p.clone());
    cell.validate()?;
    cell.check_inputs(x, h_prev)?;
    Ok(cell.step(x, h_prev, None).h)
}

/// GRU step with `z` and `r` sigmoid gates and a tanh candidate computed
/// from `r * h_prev`; the interpolation follows `p.convention`.
pub fn gru_step(x: &[f64], h_prev: &[f64], p: &GruParams) -> Result<Vec<f64>> {
    let cell = CellParams::Gru(p.clone());
    cell.validate()?;
    cell.check_inputs(x, h_prev)?;
    Ok(cell.step(x, h_prev, None).h)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn filled(shape: &[usize], v: f64) -> Tensor {
        let mut t = Tensor::zeros(shape);
        t.fill(v);
        t
    }

    #[test]
    fn zero_simple_rnn_gives_zero() {
        let p = SimpleRnnParams {
            cell: Gate::zeros(4, 3),
        };
        assert_eq!(simple_rnn_step(&[1.0, 2.0, 3.0, 4.0], &[0.5, -0.5, 0.1], &p).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn simple_rnn_bias_only() {
        let mut p = SimpleRnnParams {
            cell: Gate::zeros(1, 1),
        };
        p.cell.b = filled(&[1], 0.5);
        let h = simple_rnn_step(&[0.0], &[0.0], &p).unwrap();
        assert!((h[0] - 0.462_117_157_260_009_8).abs() < 1e-15);
    }

    #[test]
    fn simple_rnn_recurrent_only() {
        // W_x = 0, W_h = diag(0.3, -0.2): h = tanh(W_h^T h_prev).
        let mut p = SimpleRnnParams {
            cell: Gate::zeros(2, 2),
        };
        p.cell.w_h = Tensor::from_vec(&[2, 2], vec![0.3, 0.0, 0.0, -0.2]).unwrap();
        let h = simple_rnn_step(&[5.0, 5.0], &[1.0, 2.0], &p).unwrap();
        assert_eq!(h, vec![0.3f64.tanh(), (-0.4f64).tanh()]);
    }

    #[test]
    fn zero_gru_halves_previous_state() {
        let p = GruParams {
            update: Gate::zeros(4, 2),
            reset: Gate::zeros(4, 2),
            candidate: Gate::zeros(4, 2),
            convention: GruConvention::UpdateGatesCandidate,
        };
        let h = gru_step(&[1.0, 1.0, 1.0, 1.0], &[0.8, -0.4], &p).unwrap();
        assert_eq!(h, vec![0.4, -0.2]);
        let h0 = gru_step(&[1.0, 1.0, 1.0, 1.0], &[0.0, 0.0], &p).unwrap();
        assert_eq!(h0, vec![0.0, 0.0]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let p = SimpleRnnParams {
            cell: Gate::zeros(4, 3),
        };
        assert!(simple_rnn_step(&[1.0; 3], &[0.0; 3], &p).is_err());
        assert!(simple_rnn_step(&[1.0; 4], &[0.0; 2], &p).is_err());
    }

    #[test]
    fn orthogonal_is_orthonormal() {
        let mut rng = SplitMix64::new(5);
        let q = orthogonal(6, &mut rng);
        for a in 0..6 {
            for b in 0..6 {
                let dot: f64 = (0..6).map(|i| q.data()[i * 6 + a] * q.data()[i * 6 + b]).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-1000.0) >= 0.0);
        assert!(sigmoid(1000.0) <= 1.0);
    }
}
