//! Recurrent autoencoder: configuration, parameters, forward pass with
//! caches, backpropagation through time and losses.

use rayon::prelude::*;

use super::cell::{glorot_uniform, CellKind, CellParams, GruConvention};
use super::dropout::{sample_masks, DropoutMasks};
use super::layer::{
    concat_directions, dense_backward, dense_forward, run_layer_backward, run_layer_observed, Direction, LayerRun,
    StepEvent, StepMasks,
};
use super::tensor::Tensor;
use crate::rng::SplitMix64;
use crate::{Error, Result, NUM_FEATURES, SENTINEL, SLOTS_PER_DAY};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub cell: CellKind,
    pub gru_convention: GruConvention,
    pub bidirectional: bool,
    pub layers: usize,
    /// Units per direction.
    pub hidden: usize,
    /// Conventional dropout on the input of every layer after the first and
    /// on the input of the dense head.
    pub dropout_rate: f64,
    /// Dropout on `h_prev`, one mask per sequence.
    pub recurrent_dropout_rate: f64,
    pub timesteps: usize,
    pub features: usize,
}

impl ModelConfig {
    /// Deeper unidirectional variant: two 64-unit layers, dropout 0.2.
    pub fn stacked(cell: CellKind) -> Self {
        Self {
            cell,
            gru_convention: GruConvention::default(),
            bidirectional: false,
            layers: 2,
            hidden: 64,
            dropout_rate: 0.2,
            recurrent_dropout_rate: 0.0,
            timesteps: SLOTS_PER_DAY,
            features: NUM_FEATURES,
        }
    }

    /// One bidirectional layer of 32 units per direction, recurrent dropout
    /// 0.2 and dropout 0.2 before the dense head.
    pub fn bidirectional(cell: CellKind) -> Self {
        Self {
            cell,
            gru_convention: GruConvention::default(),
            bidirectional: true,
            layers: 1,
            hidden: 32,
            dropout_rate: 0.2,
            recurrent_dropout_rate: 0.2,
            timesteps: SLOTS_PER_DAY,
            features: NUM_FEATURES,
        }
    }

    pub fn directions(&self) -> usize {
        if self.bidirectional {
            2
        } else {
            1
        }
    }

    pub fn layer_input_size(&self, layer: usize) -> usize {
        if layer == 0 {
            self.features
        } else {
            self.hidden * self.directions()
        }
    }

    pub fn dense_input_size(&self) -> usize {
        self.hidden * self.directions()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.layers == 0 {
            return bad("layers must be >= 1".into());
        }
        if self.hidden == 0 || self.timesteps == 0 || self.features == 0 {
            return bad("hidden, timesteps and features must be positive".into());
        }
        for (name, r) in [
            ("dropout", self.dropout_rate),
            ("recurrent_dropout", self.recurrent_dropout_rate),
        ] {
            if !(0.0..1.0).contains(&r) {
                return bad(format!("{name} rate must lie in [0, 1), got {r}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub forward: CellParams,
    pub backward: Option<CellParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<LayerParams>,
    /// `[dense_input, features]`
    pub w_out: Tensor,
    pub b_out: Tensor,
}

impl ModelParams {
    /// All tensors in declaration order: per layer the forward cell then the
    /// backward cell, then `w_out`, `b_out`.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v = Vec::new();
        for l in &self.layers {
            v.extend(l.forward.tensors());
            if let Some(b) = &l.backward {
                v.extend(b.tensors());
            }
        }
        v.push(&self.w_out);
        v.push(&self.b_out);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = Vec::new();
        for l in &mut self.layers {
            v.extend(l.forward.tensors_mut());
            if let Some(b) = &mut l.backward {
                v.extend(b.tensors_mut());
            }
        }
        v.push(&mut self.w_out);
        v.push(&mut self.b_out);
        v
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    pub fn add_assign(&mut self, other: &ModelParams) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.scale(s);
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossKind {
    /// Mean over every cell, sentinel targets included.
    #[default]
    Mse,
    /// Mean over cells whose target is not the `-1` sentinel.
    MaskedMse,
}

/// Everything a single sequence's forward pass keeps for backpropagation.
#[derive(Debug, Clone)]
pub struct SequencePass {
    layer_inputs: Vec<Vec<f64>>,
    runs: Vec<(LayerRun, Option<LayerRun>)>,
    dense_input: Vec<f64>,
    pub output: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

fn reborrow<'a>(o: &'a mut Option<&mut dyn FnMut(&StepEvent)>) -> Option<&'a mut dyn FnMut(&StepEvent)> {
    match o {
        Some(f) => Some(&mut **f),
        None => None,
    }
}

impl Model {
    /// Fan-based uniform input kernels, orthogonal recurrent kernels, zero
    /// biases.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = SplitMix64::new(seed);
        let cell = |input: usize, rng: &mut SplitMix64| {
            CellParams::init(config.cell, input, config.hidden, config.gru_convention, rng)
        };
        let layers = (0..config.layers)
            .map(|l| {
                let input = config.layer_input_size(l);
                let forward = cell(input, &mut rng);
                let backward = config.bidirectional.then(|| cell(input, &mut rng));
                LayerParams { forward, backward }
            })
            .collect();
        let w_out = glorot_uniform(config.dense_input_size(), config.features, &mut rng);
        let b_out = Tensor::zeros(&[config.features]);
        Ok(Self {
            config,
            params: ModelParams { layers, w_out, b_out },
        })
    }

    pub fn zeros(config: ModelConfig) -> Result<Self> {
        let mut m = Self::new(config, 0)?;
        m.params = m.params.zeros_like();
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        if self.params.layers.len() != c.layers {
            return Err(Error::Config(format!(
                "config has {} layers, parameters have {}",
                c.layers,
                self.params.layers.len()
            )));
        }
        for (l, lp) in self.params.layers.iter().enumerate() {
            let cells = std::iter::once(&lp.forward).chain(lp.backward.as_ref());
            if lp.backward.is_some() != c.bidirectional {
                return Err(Error::Config(format!("layer {l}: directionality mismatch")));
            }
            for cell in cells {
                cell.validate()?;
                if cell.kind() != c.cell || cell.input_size() != c.layer_input_size(l) || cell.hidden() != c.hidden {
                    return Err(Error::Config(format!("layer {l}: cell does not match config")));
                }
            }
        }
        self.params.w_out.check_shape(&[c.dense_input_size(), c.features])?;
        self.params.b_out.check_shape(&[c.features])
    }

    fn seq_len(&self) -> usize {
        self.config.timesteps * self.config.features
    }

    /// Forward pass of one `timesteps x features` sequence. `masks` is
    /// `Some` in training mode only.
    pub fn forward_sequence(&self, x: &[f64], masks: Option<&DropoutMasks>) -> Result<SequencePass> {
        self.forward_sequence_observed(x, masks, None)
    }

    /// As [`Model::forward_sequence`], reporting every step to `observer`.
    /// The dense head is reported as layer index `config.layers`.
    pub fn forward_sequence_observed(
        &self,
        x: &[f64],
        masks: Option<&DropoutMasks>,
        mut observer: Option<&mut dyn FnMut(&StepEvent)>,
    ) -> Result<SequencePass> {
        let c = &self.config;
        if x.len() != self.seq_len() {
            return Err(Error::shape(&[c.timesteps, c.features], &[x.len()]));
        }
        let t = c.timesteps;
        let mut layer_inputs = Vec::with_capacity(c.layers);
        let mut runs = Vec::with_capacity(c.layers);
        let mut current = x.to_vec();
        for (l, lp) in self.params.layers.iter().enumerate() {
            let lm = masks.map(|m| &m.layers[l]);
            let step_masks = |dir: usize| StepMasks {
                input: lm.map(|m| m.input.as_slice()),
                recurrent: lm.map(|m| m.recurrent[dir].as_slice()),
            };
            let fwd = run_layer_observed(
                &current,
                t,
                &lp.forward,
                step_masks(0),
                Direction::Forward,
                l,
                reborrow(&mut observer),
            );
            let bwd = match &lp.backward {
                Some(cell) => Some(run_layer_observed(
                    &current,
                    t,
                    cell,
                    step_masks(1),
                    Direction::Backward,
                    l,
                    reborrow(&mut observer),
                )),
                None => None,
            };
            let out = match &bwd {
                Some(b) => concat_directions(&fwd.hidden, &b.hidden, t, c.hidden),
                None => fwd.hidden.clone(),
            };
            if !out.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("output of recurrent layer {l}"),
                });
            }
            layer_inputs.push(std::mem::replace(&mut current, out));
            runs.push((fwd, bwd));
        }
        let dense_input = match masks {
            Some(m) => {
                if let Some(obs) = observer.as_mut() {
                    let d = c.dense_input_size();
                    for step in 0..t {
                        obs(&StepEvent {
                            layer: c.layers,
                            direction: Direction::Forward,
                            t: step,
                            input_mask: Some(&m.output[step * d..(step + 1) * d]),
                            recurrent_mask: None,
                        });
                    }
                }
                current.iter().zip(&m.output).map(|(h, m)| h * m).collect()
            }
            None => current,
        };
        let output = dense_forward(&dense_input, t, &self.params.w_out, &self.params.b_out);
        if !output.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: "output of dense layer".into(),
            });
        }
        Ok(SequencePass {
            layer_inputs,
            runs,
            dense_input,
            output,
        })
    }

    /// Backpropagates `dy` (gradient w.r.t. `pass.output`) and adds every
    /// parameter gradient into `grad`. `masks` must be the ones used by the
    /// forward pass.
    pub fn backward_sequence(
        &self,
        pass: &SequencePass,
        dy: &[f64],
        masks: Option<&DropoutMasks>,
        grad: &mut ModelParams,
    ) {
        let c = &self.config;
        let t = c.timesteps;
        let mut d_current = dense_backward(
            &pass.dense_input,
            &pass.output,
            dy,
            &self.params.w_out,
            &mut grad.w_out,
            &mut grad.b_out,
        );
        if let Some(m) = masks {
            d_current.iter_mut().zip(&m.output).for_each(|(d, m)| *d *= m);
        }
        for l in (0..c.layers).rev() {
            let lp = &self.params.layers[l];
            let gl = &mut grad.layers[l];
            let (fwd_run, bwd_run) = &pass.runs[l];
            let lm = masks.map(|m| &m.layers[l]);
            let step_masks = |dir: usize| StepMasks {
                input: lm.map(|m| m.input.as_slice()),
                recurrent: lm.map(|m| m.recurrent[dir].as_slice()),
            };
            let mut dx = vec![0.0; pass.layer_inputs[l].len()];
            match (bwd_run, &lp.backward, &mut gl.backward) {
                (Some(bwd_run), Some(bwd_cell), Some(bwd_grad)) => {
                    let h = c.hidden;
                    let mut d_f = Vec::with_capacity(t * h);
                    let mut d_b = Vec::with_capacity(t * h);
                    for row in d_current.chunks_exact(2 * h) {
                        d_f.extend_from_slice(&row[..h]);
                        d_b.extend_from_slice(&row[h..]);
                    }
                    run_layer_backward(fwd_run, &d_f, &lp.forward, step_masks(0), Direction::Forward, &mut gl.forward, &mut dx);
                    run_layer_backward(bwd_run, &d_b, bwd_cell, step_masks(1), Direction::Backward, bwd_grad, &mut dx);
                }
                _ => {
                    run_layer_backward(
                        fwd_run,
                        &d_current,
                        &lp.forward,
                        step_masks(0),
                        Direction::Forward,
                        &mut gl.forward,
                        &mut dx,
                    );
                }
            }
            d_current = dx;
        }
    }

    /// Reconstructs a `B x timesteps x features` batch. Training mode draws
    /// fresh dropout masks per sequence from `rng`.
    pub fn forward(&self, batch: &Tensor, mode: Mode, rng: &mut SplitMix64) -> Result<Tensor> {
        self.check_batch(batch)?;
        let n = self.seq_len();
        let mut out = Vec::with_capacity(batch.len());
        for x in batch.data().chunks_exact(n) {
            let masks = match mode {
                Mode::Train => Some(sample_masks(&self.config, rng)),
                Mode::Eval => None,
            };
            out.extend(self.forward_sequence(x, masks.as_ref())?.output);
        }
        Tensor::from_vec(batch.shape(), out)
    }

    /// Eval-mode reconstruction, rows processed in parallel.
    pub fn reconstruct(&self, batch: &Tensor) -> Result<Tensor> {
        self.check_batch(batch)?;
        let n = self.seq_len();
        let rows: Vec<Result<Vec<f64>>> = batch
            .data()
            .par_chunks_exact(n)
            .map(|x| self.forward_sequence(x, None).map(|p| p.output))
            .collect();
        let mut out = Vec::with_capacity(batch.len());
        for r in rows {
            out.extend(r?);
        }
        Tensor::from_vec(batch.shape(), out)
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        let c = &self.config;
        let s = batch.shape();
        if s.len() != 3 || s[1] != c.timesteps || s[2] != c.features {
            return Err(Error::shape(&[s.first().copied().unwrap_or(0), c.timesteps, c.features], s));
        }
        Ok(())
    }

    /// Loss and its gradient over a batch. `masks`, when given, holds one
    /// entry per sequence and switches on training-mode dropout.
    pub fn loss_and_gradient(
        &self,
        batch: &Tensor,
        masks: Option<&[DropoutMasks]>,
        loss: LossKind,
    ) -> Result<(f64, ModelParams)> {
        self.check_batch(batch)?;
        let n = self.seq_len();
        let rows: Vec<&[f64]> = batch.data().chunks_exact(n).collect();
        let denom = loss_denominator(batch.data(), loss);
        let mut grad = self.params.zeros_like();
        let mut total = 0.0;
        for (i, x) in rows.iter().enumerate() {
            let m = masks.map(|ms| &ms[i]);
            total += self.sequence_gradient(x, m, loss, denom, &mut grad)?;
        }
        check_grad(&grad)?;
        Ok((total, grad))
    }

    /// Adds one sequence's share of the batch gradient into `grad` and
    /// returns its share of the batch loss.
    pub(crate) fn sequence_gradient(
        &self,
        x: &[f64],
        masks: Option<&DropoutMasks>,
        loss: LossKind,
        denom: f64,
        grad: &mut ModelParams,
    ) -> Result<f64> {
        let pass = self.forward_sequence(x, masks)?;
        let mut dy = vec![0.0; x.len()];
        let mut l = 0.0;
        if denom > 0.0 {
            for ((d, y), t) in dy.iter_mut().zip(&pass.output).zip(x) {
                if loss == LossKind::MaskedMse && *t == SENTINEL {
                    continue;
                }
                let e = y - t;
                l += e * e / denom;
                *d = 2.0 * e / denom;
            }
        }
        self.backward_sequence(&pass, &dy, masks, grad);
        Ok(l)
    }
}

pub(crate) fn loss_denominator(targets: &[f64], loss: LossKind) -> f64 {
    match loss {
        LossKind::Mse => targets.len() as f64,
        LossKind::MaskedMse => targets.iter().filter(|&&t| t != SENTINEL).count() as f64,
    }
}

pub(crate) fn check_grad(grad: &ModelParams) -> Result<()> {
    for (i, t) in grad.tensors().iter().enumerate() {
        t.ensure_finite(|| format!("gradient of parameter tensor {i}"))?;
    }
    Ok(())
}

/// Mean squared error over every element; sentinel cells count.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<f64> {
    loss(pred, target, LossKind::Mse)
}

pub fn loss(pred: &Tensor, target: &Tensor, kind: LossKind) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(target.shape(), pred.shape()));
    }
    let denom = loss_denominator(target.data(), kind);
    if denom == 0.0 {
        return Ok(0.0);
    }
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .filter(|(_, t)| kind == LossKind::Mse || **t != SENTINEL)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sum / denom)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(cell: CellKind, bidirectional: bool, layers: usize) -> ModelConfig {
        ModelConfig {
            cell,
            gru_convention: GruConvention::default(),
            bidirectional,
            layers,
            hidden: 3,
            dropout_rate: 0.0,
            recurrent_dropout_rate: 0.0,
            timesteps: 5,
            features: 4,
        }
    }

    fn batch(b: usize, t: usize, seed: u64) -> Tensor {
        let mut rng = SplitMix64::new(seed);
        Tensor::from_vec(&[b, t, 4], (0..b * t * 4).map(|_| rng.next_f64()).collect()).unwrap()
    }

    #[test]
    fn zero_model_reconstructs_zero() {
        let m = Model::zeros(ModelConfig::bidirectional(CellKind::Gru)).unwrap();
        let y = m.forward(&batch(2, 48, 1), Mode::Eval, &mut SplitMix64::new(0)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eval_is_deterministic_and_ignores_dropout() {
        let mut cfg = ModelConfig::bidirectional(CellKind::Gru);
        cfg.hidden = 4;
        let m = Model::new(cfg.clone(), 3).unwrap();
        let x = batch(3, 48, 2);
        let a = m.forward(&x, Mode::Eval, &mut SplitMix64::new(1)).unwrap();
        let b = m.forward(&x, Mode::Eval, &mut SplitMix64::new(2)).unwrap();
        assert_eq!(a, b);
        let mut no_drop = m.clone();
        no_drop.config.dropout_rate = 0.0;
        no_drop.config.recurrent_dropout_rate = 0.0;
        assert_eq!(no_drop.forward(&x, Mode::Eval, &mut SplitMix64::new(1)).unwrap(), a);
        assert!(a.data().iter().all(|v| v.abs() < 1.0));
        let t = m.forward(&x, Mode::Train, &mut SplitMix64::new(1)).unwrap();
        assert_ne!(t, a);
    }

    #[test]
    fn two_layers_compose() {
        let cfg = small(CellKind::Gru, true, 2);
        let m = Model::new(cfg.clone(), 4).unwrap();
        let x = batch(1, 5, 5);
        let full = m.forward_sequence(x.data(), None).unwrap().output;

        let l0 = &m.params.layers[0];
        let h0 = super::super::layer::bidirectional_layer(
            x.data(),
            5,
            &l0.forward,
            l0.backward.as_ref().unwrap(),
            StepMasks::default(),
            StepMasks::default(),
        )
        .unwrap();
        let l1 = &m.params.layers[1];
        let h1 = super::super::layer::bidirectional_layer(
            &h0,
            5,
            &l1.forward,
            l1.backward.as_ref().unwrap(),
            StepMasks::default(),
            StepMasks::default(),
        )
        .unwrap();
        let y = super::super::layer::dense_per_timestep(&h1, 5, &m.params.w_out, &m.params.b_out).unwrap();
        assert_eq!(full, y);
    }

    #[test]
    fn mse_examples() {
        let t = batch(2, 3, 7);
        assert_eq!(mse_loss(&t, &t).unwrap(), 0.0);
        let mut p = t.clone();
        p.data_mut().iter_mut().for_each(|v| *v += 0.1);
        assert!((mse_loss(&p, &t).unwrap() - 0.01).abs() < 1e-15);
        assert!(mse_loss(&p, &batch(1, 3, 7)).is_err());
    }

    #[test]
    fn mse_matches_scalar_loop() {
        let p = batch(3, 6, 8);
        let t = batch(3, 6, 9);
        let mut s = 0.0;
        for i in 0..p.len() {
            let d = p.data()[i] - t.data()[i];
            s += d * d;
        }
        assert!((mse_loss(&p, &t).unwrap() - s / p.len() as f64).abs() < 1e-15);
    }

    #[test]
    fn masked_loss_skips_sentinels() {
        let t = Tensor::from_vec(&[1, 1, 4], vec![SENTINEL, 0.5, 0.5, SENTINEL]).unwrap();
        let p = Tensor::from_vec(&[1, 1, 4], vec![0.0, 0.7, 0.3, 0.0]).unwrap();
        assert!((loss(&p, &t, LossKind::MaskedMse).unwrap() - 0.04).abs() < 1e-15);
        assert!((mse_loss(&p, &t).unwrap() - (1.0 + 0.04 + 0.04 + 1.0) / 4.0).abs() < 1e-15);
    }

    #[test]
    fn zero_loss_gives_zero_gradient() {
        // A zero model reconstructs zeros exactly, so an all-zero batch is a
        // stationary point.
        let m = Model::zeros(small(CellKind::Gru, true, 1)).unwrap();
        let x = Tensor::zeros(&[2, 5, 4]);
        let (l, g) = m.loss_and_gradient(&x, None, LossKind::Mse).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.tensors().iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn gradient_loss_equals_mse() {
        let m = Model::new(small(CellKind::SimpleRnn, false, 2), 5).unwrap();
        let x = batch(3, 5, 10);
        let (l, _) = m.loss_and_gradient(&x, None, LossKind::Mse).unwrap();
        let y = m.forward(&x, Mode::Eval, &mut SplitMix64::new(0)).unwrap();
        assert!((l - mse_loss(&y, &x).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn rows_are_independent() {
        let m = Model::new(small(CellKind::Gru, true, 1), 6).unwrap();
        let x = batch(4, 5, 11);
        let y = m.reconstruct(&x).unwrap();
        let perm = [2usize, 0, 3, 1];
        let n = 20;
        let px: Vec<f64> = perm.iter().flat_map(|&i| x.data()[i * n..(i + 1) * n].to_vec()).collect();
        let py = m.reconstruct(&Tensor::from_vec(&[4, 5, 4], px).unwrap()).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(&py.data()[k * n..(k + 1) * n], &y.data()[i * n..(i + 1) * n]);
        }
    }

    #[test]
    fn wrong_batch_shape() {
        let m = Model::new(small(CellKind::Gru, false, 1), 6).unwrap();
        assert!(m.reconstruct(&Tensor::zeros(&[1, 48, 4])).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = small(CellKind::Gru, false, 1);
        c.dropout_rate = 1.0;
        assert!(c.validate().is_err());
        c.dropout_rate = 0.0;
        c.layers = 0;
        assert!(c.validate().is_err());
    }
}
