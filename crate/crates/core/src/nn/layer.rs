//! Sequence-level operations: unrolling a cell over time in either
//! direction, bidirectional concatenation and the per-timestep dense head.
//! Sequences are flat row-major `timesteps x width` slices.

use super::cell::{CellParams, StepCache};
use super::tensor::{mat_vec_acc, outer_acc, vec_mat_acc, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    fn order(self, timesteps: usize) -> Box<dyn Iterator<Item = usize>> {
        match self {
            Direction::Forward => Box::new(0..timesteps),
            Direction::Backward => Box::new((0..timesteps).rev()),
        }
    }
}

/// Masks used by one direction of one layer. `None` means no dropout.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepMasks<'a> {
    /// `timesteps x input` mask applied to each `x_t`.
    pub input: Option<&'a [f64]>,
    /// `hidden` mask applied to `h_prev` at every step.
    pub recurrent: Option<&'a [f64]>,
}

/// What a step saw, reported to forward-pass observers.
#[derive(Debug, Clone, Copy)]
pub struct StepEvent<'a> {
    pub layer: usize,
    pub direction: Direction,
    pub t: usize,
    pub input_mask: Option<&'a [f64]>,
    pub recurrent_mask: Option<&'a [f64]>,
}

pub type Observer<'o> = Option<&'o mut dyn FnMut(&StepEvent)>;

/// Result of unrolling one direction, aligned to time: `hidden[t]` and
/// `steps[t]` belong to input `t` whichever way the cell ran.
#[derive(Debug, Clone)]
pub struct LayerRun {
    pub hidden: Vec<f64>,
    pub steps: Vec<StepCache>,
}

pub(crate) fn run_layer_observed(
    seq: &[f64],
    timesteps: usize,
    cell: &CellParams,
    masks: StepMasks,
    direction: Direction,
    layer: usize,
    mut observer: Observer,
) -> LayerRun {
    let input = cell.input_size();
    let hidden = cell.hidden();
    debug_assert_eq!(seq.len(), timesteps * input);
    let mut h = vec![0.0; hidden];
    let mut steps: Vec<Option<StepCache>> = vec![None; timesteps];
    let mut out = vec![0.0; timesteps * hidden];
    for t in direction.order(timesteps) {
        let x_raw = &seq[t * input..(t + 1) * input];
        let in_mask = masks.input.map(|m| &m[t * input..(t + 1) * input]);
        let x: Vec<f64> = match in_mask {
            Some(m) => x_raw.iter().zip(m).map(|(x, m)| x * m).collect(),
            None => x_raw.to_vec(),
        };
        if let Some(obs) = observer.as_mut() {
            obs(&StepEvent {
                layer,
                direction,
                t,
                input_mask: in_mask,
                recurrent_mask: masks.recurrent,
            });
        }
        let cache = cell.step(&x, &h, masks.recurrent);
        h.clone_from(&cache.h);
        out[t * hidden..(t + 1) * hidden].copy_from_slice(&cache.h);
        steps[t] = Some(cache);
    }
    LayerRun {
        hidden: out,
        steps: steps.into_iter().map(|s| s.expect("every step ran")).collect(),
    }
}

/// Unrolls `cell` over `seq` from a zero initial state. A backward run
/// consumes `t = T-1 .. 0` and its outputs are re-aligned to time order.
pub fn run_layer(
    seq: &[f64],
    timesteps: usize,
    cell: &CellParams,
    masks: StepMasks,
    direction: Direction,
) -> Result<Vec<f64>> {
    cell.validate()?;
    if seq.len() != timesteps * cell.input_size() {
        return Err(Error::shape(&[timesteps, cell.input_size()], &[seq.len()]));
    }
    Ok(run_layer_observed(seq, timesteps, cell, masks, direction, 0, None).hidden)
}

/// Backpropagates time-aligned `d_hidden` through one direction's run.
/// Adds the input gradient into `dx` (same layout as the layer input,
/// before the input mask) and parameter gradients into `grad`.
pub(crate) fn run_layer_backward(
    run: &LayerRun,
    d_hidden: &[f64],
    cell: &CellParams,
    masks: StepMasks,
    direction: Direction,
    grad: &mut CellParams,
    dx: &mut [f64],
) {
    let timesteps = run.steps.len();
    let input = cell.input_size();
    let hidden = cell.hidden();
    let mut carry = vec![0.0; hidden];
    let reverse = match direction {
        Direction::Forward => Direction::Backward,
        Direction::Backward => Direction::Forward,
    };
    let mut dx_t = vec![0.0; input];
    for t in reverse.order(timesteps) {
        let dh: Vec<f64> = d_hidden[t * hidden..(t + 1) * hidden]
            .iter()
            .zip(&carry)
            .map(|(a, b)| a + b)
            .collect();
        dx_t.iter_mut().for_each(|v| *v = 0.0);
        carry = cell.step_backward(&run.steps[t], &dh, masks.recurrent, grad, &mut dx_t);
        let dst = &mut dx[t * input..(t + 1) * input];
        match masks.input {
            Some(m) => {
                let m = &m[t * input..(t + 1) * input];
                for ((d, g), m) in dst.iter_mut().zip(&dx_t).zip(m) {
                    *d += g * m;
                }
            }
            None => dst.iter_mut().zip(&dx_t).for_each(|(d, g)| *d += g),
        }
    }
}

/// Concatenates `[forward_t || backward_t]` per timestep.
pub(crate) fn concat_directions(fwd: &[f64], bwd: &[f64], timesteps: usize, hidden: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(timesteps * 2 * hidden);
    for t in 0..timesteps {
        out.extend_from_slice(&fwd[t * hidden..(t + 1) * hidden]);
        out.extend_from_slice(&bwd[t * hidden..(t + 1) * hidden]);
    }
    out
}

/// Forward and backward runs of `seq`, concatenated per timestep into a
/// `timesteps x 2H` sequence.
pub fn bidirectional_layer(
    seq: &[f64],
    timesteps: usize,
    cell_fwd: &CellParams,
    cell_bwd: &CellParams,
    masks_fwd: StepMasks,
    masks_bwd: StepMasks,
) -> Result<Vec<f64>> {
    if cell_fwd.hidden() != cell_bwd.hidden() || cell_fwd.input_size() != cell_bwd.input_size() {
        return Err(Error::shape(
            &[cell_fwd.input_size(), cell_fwd.hidden()],
            &[cell_bwd.input_size(), cell_bwd.hidden()],
        ));
    }
    let f = run_layer(seq, timesteps, cell_fwd, masks_fwd, Direction::Forward)?;
    let b = run_layer(seq, timesteps, cell_bwd, masks_bwd, Direction::Backward)?;
    Ok(concat_directions(&f, &b, timesteps, cell_fwd.hidden()))
}

/// `y_t = tanh(h_t · W_o + b_o)` for every timestep.
pub fn dense_per_timestep(hidden_seq: &[f64], timesteps: usize, w_out: &Tensor, b_out: &Tensor) -> Result<Vec<f64>> {
    if w_out.shape().len() != 2 {
        return Err(Error::shape(&[0, 0], w_out.shape()));
    }
    let (d, f) = (w_out.rows(), w_out.cols());
    b_out.check_shape(&[f])?;
    if hidden_seq.len() != timesteps * d {
        return Err(Error::shape(&[timesteps, d], &[hidden_seq.len()]));
    }
    Ok(dense_forward(hidden_seq, timesteps, w_out, b_out))
}

pub(crate) fn dense_forward(hidden_seq: &[f64], timesteps: usize, w_out: &Tensor, b_out: &Tensor) -> Vec<f64> {
    let (d, f) = (w_out.rows(), w_out.cols());
    let mut out = Vec::with_capacity(timesteps * f);
    for t in 0..timesteps {
        let mut a = b_out.data().to_vec();
        vec_mat_acc(&hidden_seq[t * d..(t + 1) * d], w_out, &mut a);
        out.extend(a.into_iter().map(f64::tanh));
    }
    out
}

/// Returns the gradient w.r.t. the dense input; accumulates `W_o`, `b_o`.
pub(crate) fn dense_backward(
    hidden_seq: &[f64],
    output: &[f64],
    dy: &[f64],
    w_out: &Tensor,
    g_w: &mut Tensor,
    g_b: &mut Tensor,
) -> Vec<f64> {
    let (d, f) = (w_out.rows(), w_out.cols());
    let timesteps = output.len() / f;
    let mut dh = vec![0.0; timesteps * d];
    for t in 0..timesteps {
        let da: Vec<f64> = (0..f)
            .map(|k| {
                let y = output[t * f + k];
                dy[t * f + k] * (1.0 - y * y)
            })
            .collect();
        outer_acc(g_w, &hidden_seq[t * d..(t + 1) * d], &da);
        for (b, a) in g_b.data_mut().iter_mut().zip(&da) {
            *b += a;
        }
        mat_vec_acc(w_out, &da, &mut dh[t * d..(t + 1) * d]);
    }
    dh
}
