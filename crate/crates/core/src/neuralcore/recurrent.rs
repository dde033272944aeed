use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::{sigmoid, Scalar};

use super::seq::broadcast_row;
use super::{
    add_column_sums, gemm_nn, gemm_nt, gemm_tn, glorot_uniform, orthogonal, NnError, NnResult, Param, SeqBatch,
    Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    /// `h' = tanh(x·Wx + h·Wh + b)`
    Simple,
    /// Input, forget, cell and output gates (in that column order).
    Lstm,
    /// Update and reset gates with `h' = (1−z)∘h + z∘h̃`.
    Gru,
}

impl CellKind {
    pub fn gates(self) -> usize {
        match self {
            CellKind::Simple => 1,
            CellKind::Lstm => 4,
            CellKind::Gru => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CellKind::Simple => "rnn",
            CellKind::Lstm => "lstm",
            CellKind::Gru => "gru",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rnn" | "simple" => Some(CellKind::Simple),
            "lstm" => Some(CellKind::Lstm),
            "gru" => Some(CellKind::Gru),
            _ => None,
        }
    }
}

/// Weights of one recurrent cell. The same tensors are applied at every step.
///
/// * `wx: [input × gates·units]`
/// * `wh`: `[units × units]` (simple), `[units × 4·units]` (LSTM) or the
///   update/reset block `[units × 2·units]` (GRU)
/// * `wh_candidate`: GRU only, `[units × units]`, applied to `r∘h`
/// * `b: [gates·units]`
#[derive(Debug, Clone)]
pub struct CellParams<F> {
    pub kind: CellKind,
    pub wx: Param<F>,
    pub wh: Param<F>,
    pub wh_candidate: Option<Param<F>>,
    pub b: Param<F>,
}

impl<F: Scalar> CellParams<F> {
    pub fn new<R: Rng>(rng: &mut R, kind: CellKind, input_dim: usize, units: usize) -> Self {
        let g = kind.gates();
        let wx = glorot_uniform(rng, &[input_dim, g * units], input_dim, g * units);
        let blocks = match kind {
            CellKind::Gru => 2,
            _ => g,
        };
        let mut wh = Tensor::zeros(&[units, blocks * units]);
        for blk in 0..blocks {
            let q: Tensor<F> = orthogonal(rng, units);
            for i in 0..units {
                wh.row_mut(i)[blk * units..(blk + 1) * units].copy_from_slice(q.row(i));
            }
        }
        let wh_candidate = (kind == CellKind::Gru).then(|| Param::new("wh_candidate", orthogonal(rng, units)));
        let mut b = Tensor::zeros(&[g * units]);
        if kind == CellKind::Lstm {
            // unit forget bias
            b.data_mut()[units..2 * units].iter_mut().for_each(|v| *v = F::one());
        }
        CellParams {
            kind,
            wx: Param::new("wx", wx),
            wh: Param::new("wh", wh),
            wh_candidate,
            b: Param::new("b", b),
        }
    }

    pub fn units(&self) -> usize {
        self.wh.value.shape()[0]
    }

    pub fn input_dim(&self) -> usize {
        self.wx.value.shape()[0]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        let mut v = vec![&mut self.wx, &mut self.wh];
        if let Some(p) = self.wh_candidate.as_mut() {
            v.push(p);
        }
        v.push(&mut self.b);
        v
    }

    pub fn params(&self) -> Vec<&Param<F>> {
        let mut v = vec![&self.wx, &self.wh];
        if let Some(p) = self.wh_candidate.as_ref() {
            v.push(p);
        }
        v.push(&self.b);
        v
    }
}

/// Hidden state (and LSTM cell state) for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState<F> {
    pub h: Tensor<F>,
    pub c: Option<Tensor<F>>,
}

impl<F: Scalar> CellState<F> {
    pub fn zeros(kind: CellKind, batch: usize, units: usize) -> Self {
        CellState {
            h: Tensor::zeros(&[batch, units]),
            c: (kind == CellKind::Lstm).then(|| Tensor::zeros(&[batch, units])),
        }
    }

    fn broadcast(&self, batch: usize) -> Self {
        CellState {
            h: broadcast_row(&self.h, batch),
            c: self.c.as_ref().map(|c| broadcast_row(c, batch)),
        }
    }
}

/// Values saved by a forward step for backpropagation through time.
#[derive(Debug, Clone)]
pub struct StepCache<F> {
    x: Tensor<F>,
    h_prev: Tensor<F>,
    c_prev: Option<Tensor<F>>,
    /// Activated gate values, `[batch × gates·units]`.
    gates: Tensor<F>,
    tanh_c: Option<Tensor<F>>,
    rh: Option<Tensor<F>>,
    pub h: Tensor<F>,
    pub c: Option<Tensor<F>>,
}

fn cell_step<F: Scalar>(p: &CellParams<F>, x: &Tensor<F>, state: &CellState<F>) -> NnResult<(CellState<F>, StepCache<F>)> {
    let (bsz, d) = (x.rows(), x.row_len());
    let hdim = p.units();
    let g = p.kind.gates();
    if d != p.input_dim() || state.h.shape() != [bsz, hdim] {
        return Err(NnError::Shape(format!(
            "{} step: input {:?}, state {:?}, expected input dim {} and {} units",
            p.kind.name(),
            x.shape(),
            state.h.shape(),
            p.input_dim(),
            hdim
        )));
    }
    let gh = g * hdim;
    let mut pre = Tensor::zeros(&[bsz, gh]);
    for i in 0..bsz {
        pre.row_mut(i).copy_from_slice(p.b.value.data());
    }
    gemm_nn(x.data(), p.wx.value.data(), pre.data_mut(), bsz, d, gh);
    let h_prev = &state.h;
    match p.kind {
        CellKind::Simple => {
            gemm_nn(h_prev.data(), p.wh.value.data(), pre.data_mut(), bsz, hdim, hdim);
            let h = pre.map(|v| v.tanh());
            Ok((
                CellState { h: h.clone(), c: None },
                StepCache {
                    x: x.clone(),
                    h_prev: h_prev.clone(),
                    c_prev: None,
                    gates: h.clone(),
                    tanh_c: None,
                    rh: None,
                    h,
                    c: None,
                },
            ))
        }
        CellKind::Lstm => {
            let c_prev = state
                .c
                .as_ref()
                .ok_or_else(|| NnError::Invalid("lstm step needs a cell state".into()))?;
            if c_prev.shape() != [bsz, hdim] {
                return Err(NnError::Shape("lstm cell state".into()));
            }
            gemm_nn(h_prev.data(), p.wh.value.data(), pre.data_mut(), bsz, hdim, gh);
            let mut c = Tensor::zeros(&[bsz, hdim]);
            let mut tanh_c = Tensor::zeros(&[bsz, hdim]);
            let mut h = Tensor::zeros(&[bsz, hdim]);
            for i in 0..bsz {
                let row = pre.row_mut(i);
                for j in 0..hdim {
                    row[j] = sigmoid(row[j]);
                    row[hdim + j] = sigmoid(row[hdim + j]);
                    row[2 * hdim + j] = row[2 * hdim + j].tanh();
                    row[3 * hdim + j] = sigmoid(row[3 * hdim + j]);
                }
                let cp = c_prev.row(i);
                let (cr, tr, hr) = (c.row_mut(i), tanh_c.row_mut(i), h.row_mut(i));
                for j in 0..hdim {
                    let (ig, fg, gg, og) = (row[j], row[hdim + j], row[2 * hdim + j], row[3 * hdim + j]);
                    cr[j] = fg * cp[j] + ig * gg;
                    tr[j] = cr[j].tanh();
                    hr[j] = og * tr[j];
                }
            }
            Ok((
                CellState {
                    h: h.clone(),
                    c: Some(c.clone()),
                },
                StepCache {
                    x: x.clone(),
                    h_prev: h_prev.clone(),
                    c_prev: Some(c_prev.clone()),
                    gates: pre,
                    tanh_c: Some(tanh_c),
                    rh: None,
                    h,
                    c: Some(c),
                },
            ))
        }
        CellKind::Gru => {
            let whn = p
                .wh_candidate
                .as_ref()
                .ok_or_else(|| NnError::Invalid("gru cell without candidate weights".into()))?;
            let mut zr = Tensor::zeros(&[bsz, 2 * hdim]);
            gemm_nn(h_prev.data(), p.wh.value.data(), zr.data_mut(), bsz, hdim, 2 * hdim);
            let mut rh = Tensor::zeros(&[bsz, hdim]);
            for i in 0..bsz {
                let row = pre.row_mut(i);
                let zrr = zr.row(i);
                for j in 0..2 * hdim {
                    row[j] = sigmoid(row[j] + zrr[j]);
                }
                let hp = h_prev.row(i);
                let rr = rh.row_mut(i);
                for j in 0..hdim {
                    rr[j] = row[hdim + j] * hp[j];
                }
            }
            let mut cand = Tensor::zeros(&[bsz, hdim]);
            gemm_nn(rh.data(), whn.value.data(), cand.data_mut(), bsz, hdim, hdim);
            let mut h = Tensor::zeros(&[bsz, hdim]);
            for i in 0..bsz {
                let row = pre.row_mut(i);
                let cr = cand.row(i);
                let hp = h_prev.row(i);
                let hr = h.row_mut(i);
                for j in 0..hdim {
                    let n = (row[2 * hdim + j] + cr[j]).tanh();
                    row[2 * hdim + j] = n;
                    let z = row[j];
                    hr[j] = (F::one() - z) * hp[j] + z * n;
                }
            }
            Ok((
                CellState { h: h.clone(), c: None },
                StepCache {
                    x: x.clone(),
                    h_prev: h_prev.clone(),
                    c_prev: None,
                    gates: pre,
                    tanh_c: None,
                    rh: Some(rh),
                    h,
                    c: None,
                },
            ))
        }
    }
}

fn expect_kind<F: Scalar>(p: &CellParams<F>, kind: CellKind) -> NnResult<()> {
    if p.kind != kind {
        return Err(NnError::Invalid(format!(
            "{} parameters passed to a {} step",
            p.kind.name(),
            kind.name()
        )));
    }
    Ok(())
}

/// One simple-RNN step: `h' = tanh(x·Wx + h·Wh + b)`.
pub fn rnn_step<F: Scalar>(x: &Tensor<F>, h: &Tensor<F>, p: &CellParams<F>) -> NnResult<(Tensor<F>, StepCache<F>)> {
    expect_kind(p, CellKind::Simple)?;
    let (s, cache) = cell_step(p, x, &CellState { h: h.clone(), c: None })?;
    Ok((s.h, cache))
}

/// One LSTM step; returns the new `(h, c)`.
pub fn lstm_step<F: Scalar>(
    x: &Tensor<F>,
    h: &Tensor<F>,
    c: &Tensor<F>,
    p: &CellParams<F>,
) -> NnResult<((Tensor<F>, Tensor<F>), StepCache<F>)> {
    expect_kind(p, CellKind::Lstm)?;
    let (s, cache) = cell_step(
        p,
        x,
        &CellState {
            h: h.clone(),
            c: Some(c.clone()),
        },
    )?;
    Ok(((s.h, s.c.expect("lstm state")), cache))
}

/// One GRU step: `z, r = σ(·)`, `h̃ = tanh(x·W + (r∘h)·U + b)`,
/// `h' = (1−z)∘h + z∘h̃`.
pub fn gru_step<F: Scalar>(x: &Tensor<F>, h: &Tensor<F>, p: &CellParams<F>) -> NnResult<(Tensor<F>, StepCache<F>)> {
    expect_kind(p, CellKind::Gru)?;
    let (s, cache) = cell_step(p, x, &CellState { h: h.clone(), c: None })?;
    Ok((s.h, cache))
}

/// Backpropagates one step. `dh` (and `dc` for LSTM) are gradients with
/// respect to the step's outputs; parameter gradients are accumulated into
/// `p`. Returns `(dx, dh_prev, dc_prev)`; `dx` only when `need_dx`.
pub fn step_backward<F: Scalar>(
    p: &mut CellParams<F>,
    cache: &StepCache<F>,
    dh: &Tensor<F>,
    dc: Option<&Tensor<F>>,
    need_dx: bool,
) -> NnResult<(Option<Tensor<F>>, Tensor<F>, Option<Tensor<F>>)> {
    let bsz = cache.h.rows();
    let hdim = p.units();
    let d = p.input_dim();
    let gh = p.kind.gates() * hdim;
    if dh.shape() != [bsz, hdim] {
        return Err(NnError::Shape("recurrent step backward".into()));
    }
    let mut dpre = Tensor::zeros(&[bsz, gh]);
    let mut dh_prev = Tensor::zeros(&[bsz, hdim]);
    let mut dc_prev = None;
    match p.kind {
        CellKind::Simple => {
            for ((o, &g), &y) in dpre.data_mut().iter_mut().zip(dh.data()).zip(cache.h.data()) {
                *o = g * (F::one() - y * y);
            }
            gemm_tn(cache.h_prev.data(), dpre.data(), p.wh.grad.data_mut(), bsz, hdim, hdim);
            gemm_nt(dpre.data(), p.wh.value.data(), dh_prev.data_mut(), bsz, hdim, hdim);
        }
        CellKind::Lstm => {
            let c_prev = cache.c_prev.as_ref().expect("lstm cache");
            let tanh_c = cache.tanh_c.as_ref().expect("lstm cache");
            let mut dcp = Tensor::zeros(&[bsz, hdim]);
            for i in 0..bsz {
                let gt = cache.gates.row(i);
                let (dhr, tc, cp) = (dh.row(i), tanh_c.row(i), c_prev.row(i));
                let dcr = dc.map(|t| t.row(i));
                let dp = dpre.row_mut(i);
                let dcpr = dcp.row_mut(i);
                for j in 0..hdim {
                    let (ig, fg, gg, og) = (gt[j], gt[hdim + j], gt[2 * hdim + j], gt[3 * hdim + j]);
                    let d_o = dhr[j] * tc[j];
                    let mut dct = dhr[j] * og * (F::one() - tc[j] * tc[j]);
                    if let Some(dcr) = dcr {
                        dct += dcr[j];
                    }
                    dp[j] = dct * gg * ig * (F::one() - ig);
                    dp[hdim + j] = dct * cp[j] * fg * (F::one() - fg);
                    dp[2 * hdim + j] = dct * ig * (F::one() - gg * gg);
                    dp[3 * hdim + j] = d_o * og * (F::one() - og);
                    dcpr[j] = dct * fg;
                }
            }
            gemm_tn(cache.h_prev.data(), dpre.data(), p.wh.grad.data_mut(), bsz, hdim, gh);
            gemm_nt(dpre.data(), p.wh.value.data(), dh_prev.data_mut(), bsz, gh, hdim);
            dc_prev = Some(dcp);
        }
        CellKind::Gru => {
            let rh = cache.rh.as_ref().expect("gru cache");
            let mut dpre_n = Tensor::zeros(&[bsz, hdim]);
            for i in 0..bsz {
                let gt = cache.gates.row(i);
                let (dhr, hp) = (dh.row(i), cache.h_prev.row(i));
                let dpn = dpre_n.row_mut(i);
                for j in 0..hdim {
                    let (z, n) = (gt[j], gt[2 * hdim + j]);
                    dpn[j] = dhr[j] * z * (F::one() - n * n);
                }
                let dp = dpre.row_mut(i);
                let dhp = dh_prev.row_mut(i);
                for j in 0..hdim {
                    let (z, n) = (gt[j], gt[2 * hdim + j]);
                    dp[j] = dhr[j] * (n - hp[j]) * z * (F::one() - z);
                    dp[2 * hdim + j] = dpn[j];
                    dhp[j] = dhr[j] * (F::one() - z);
                }
            }
            let whn = p.wh_candidate.as_mut().expect("gru candidate weights");
            gemm_tn(rh.data(), dpre_n.data(), whn.grad.data_mut(), bsz, hdim, hdim);
            let mut drh = Tensor::zeros(&[bsz, hdim]);
            gemm_nt(dpre_n.data(), whn.value.data(), drh.data_mut(), bsz, hdim, hdim);
            let mut dzr = Tensor::zeros(&[bsz, 2 * hdim]);
            for i in 0..bsz {
                let gt = cache.gates.row(i);
                let (drr, hp) = (drh.row(i), cache.h_prev.row(i));
                let dhp = dh_prev.row_mut(i);
                for j in 0..hdim {
                    let r = gt[hdim + j];
                    dhp[j] += drr[j] * r;
                    dpre.row_mut(i)[hdim + j] = drr[j] * hp[j] * r * (F::one() - r);
                }
                let dp = dpre.row(i);
                dzr.row_mut(i).copy_from_slice(&dp[..2 * hdim]);
            }
            gemm_tn(cache.h_prev.data(), dzr.data(), p.wh.grad.data_mut(), bsz, hdim, 2 * hdim);
            gemm_nt(dzr.data(), p.wh.value.data(), dh_prev.data_mut(), bsz, 2 * hdim, hdim);
        }
    }
    gemm_tn(cache.x.data(), dpre.data(), p.wx.grad.data_mut(), bsz, d, gh);
    add_column_sums(dpre.data(), p.b.grad.data_mut(), bsz, gh);
    let dx = need_dx.then(|| {
        let mut dx = Tensor::zeros(&[bsz, d]);
        gemm_nt(dpre.data(), p.wx.value.data(), dx.data_mut(), bsz, gh, d);
        dx
    });
    Ok((dx, dh_prev, dc_prev))
}

fn sum_rows<F: Scalar>(t: &Tensor<F>) -> Tensor<F> {
    let mut out = Tensor::zeros(&[1, t.row_len()]);
    add_column_sums(t.data(), out.data_mut(), t.rows(), t.row_len());
    out
}

struct DirCache<F> {
    shared: Vec<StepCache<F>>,
    steps: Vec<StepCache<F>>,
}

impl<F: Scalar> DirCache<F> {
    fn last_h(&self, batch: usize) -> Tensor<F> {
        match self.steps.last() {
            Some(c) => c.h.clone(),
            None => broadcast_row(&self.shared.last().expect("non-empty sequence").h, batch),
        }
    }
}

fn run_direction<F: Scalar>(cell: &CellParams<F>, input: &SeqBatch<F>) -> NnResult<DirCache<F>> {
    let units = cell.units();
    let mut shared = Vec::with_capacity(input.shared.len());
    let mut state = CellState::zeros(cell.kind, 1, units);
    for x in &input.shared {
        let (s, c) = cell_step(cell, x, &state)?;
        state = s;
        shared.push(c);
    }
    let mut state = if shared.is_empty() {
        CellState::zeros(cell.kind, input.batch, units)
    } else {
        state.broadcast(input.batch)
    };
    let mut steps = Vec::with_capacity(input.steps.len());
    for x in &input.steps {
        let (s, c) = cell_step(cell, x, &state)?;
        state = s;
        steps.push(c);
    }
    Ok(DirCache { shared, steps })
}

/// Output gradients for one direction: per-step gradients (shared rows are
/// batch sums) and/or a gradient on the final hidden state.
struct DirGrad<'a, F> {
    shared: Option<&'a [Tensor<F>]>,
    steps: Option<&'a [Tensor<F>]>,
    last: Option<&'a Tensor<F>>,
}

fn backprop_direction<F: Scalar>(
    cell: &mut CellParams<F>,
    cache: &DirCache<F>,
    grad: DirGrad<'_, F>,
    batch: usize,
    need_dx: bool,
) -> NnResult<Option<SeqBatch<F>>> {
    let units = cell.units();
    let lstm = cell.kind == CellKind::Lstm;
    let mut dh = Tensor::zeros(&[batch, units]);
    let mut dc = lstm.then(|| Tensor::zeros(&[batch, units]));
    if let (Some(last), false) = (grad.last, cache.steps.is_empty()) {
        dh.add_assign(last);
    }
    let mut dx_steps = Vec::with_capacity(cache.steps.len());
    for t in (0..cache.steps.len()).rev() {
        if let Some(gs) = grad.steps {
            dh.add_assign(&gs[t]);
        }
        let (dx, dhp, dcp) = step_backward(cell, &cache.steps[t], &dh, dc.as_ref(), need_dx)?;
        dh = dhp;
        dc = dcp;
        if let Some(dx) = dx {
            dx_steps.push(dx);
        }
    }
    dx_steps.reverse();
    let mut dx_shared = Vec::with_capacity(cache.shared.len());
    if !cache.shared.is_empty() {
        let mut dh1 = sum_rows(&dh);
        let mut dc1 = dc.as_ref().map(sum_rows);
        if let (Some(last), true) = (grad.last, cache.steps.is_empty()) {
            dh1.add_assign(&sum_rows(last));
        }
        for t in (0..cache.shared.len()).rev() {
            if let Some(gs) = grad.shared {
                dh1.add_assign(&gs[t]);
            }
            let (dx, dhp, dcp) = step_backward(cell, &cache.shared[t], &dh1, dc1.as_ref(), need_dx)?;
            dh1 = dhp;
            dc1 = dcp;
            if let Some(dx) = dx {
                dx_shared.push(dx);
            }
        }
        dx_shared.reverse();
    }
    if !need_dx {
        return Ok(None);
    }
    Ok(Some(SeqBatch {
        batch,
        dim: cell.input_dim(),
        shared: dx_shared,
        steps: dx_steps,
    }))
}

/// Output of a recurrent layer.
#[derive(Debug, Clone)]
pub enum RecurrentOutput<F> {
    Sequence(SeqBatch<F>),
    Last(Tensor<F>),
}

struct LayerCache<F> {
    fwd: DirCache<F>,
    bwd: Option<DirCache<F>>,
    batch: usize,
    shared_len: usize,
}

/// A recurrent layer unrolled over a sequence batch, optionally bidirectional.
pub struct Recurrent<F> {
    pub return_sequences: bool,
    pub forward_cell: CellParams<F>,
    pub backward_cell: Option<CellParams<F>>,
    cache: Option<LayerCache<F>>,
}


impl<F: Scalar> Recurrent<F> {
    pub fn new<R: Rng>(
        rng: &mut R,
        kind: CellKind,
        input_dim: usize,
        units: usize,
        return_sequences: bool,
        bidirectional: bool,
    ) -> Self {
        let forward_cell = CellParams::new(rng, kind, input_dim, units);
        let backward_cell = bidirectional.then(|| CellParams::new(rng, kind, input_dim, units));
        Recurrent {
            return_sequences,
            forward_cell,
            backward_cell,
            cache: None,
        }
    }

    pub fn kind(&self) -> CellKind {
        self.forward_cell.kind
    }

    pub fn units(&self) -> usize {
        self.forward_cell.units()
    }

    pub fn output_dim(&self) -> usize {
        self.units() * if self.backward_cell.is_some() { 2 } else { 1 }
    }

    pub fn forward(&mut self, input: SeqBatch<F>) -> NnResult<RecurrentOutput<F>> {
        if input.is_empty() {
            return Err(NnError::Shape("recurrent layer over an empty sequence".into()));
        }
        if input.dim != self.forward_cell.input_dim() {
            return Err(NnError::Shape(format!(
                "recurrent layer expects dim {}, got {}",
                self.forward_cell.input_dim(),
                input.dim
            )));
        }
        let batch = input.batch;
        let units = self.units();
        let Some(bcell) = self.backward_cell.as_ref() else {
            let fwd = run_direction(&self.forward_cell, &input)?;
            let out = if self.return_sequences {
                RecurrentOutput::Sequence(SeqBatch {
                    batch,
                    dim: units,
                    shared: fwd.shared.iter().map(|c| c.h.clone()).collect(),
                    steps: fwd.steps.iter().map(|c| c.h.clone()).collect(),
                })
            } else {
                RecurrentOutput::Last(fwd.last_h(batch))
            };
            self.cache = Some(LayerCache {
                fwd,
                bwd: None,
                batch,
                shared_len: input.shared.len(),
            });
            return Ok(out);
        };
        // the reverse direction sees trailing padding, so nothing is shared
        let input = input.materialize();
        let reversed = SeqBatch {
            batch,
            dim: input.dim,
            shared: Vec::new(),
            steps: input.steps.iter().rev().cloned().collect(),
        };
        let fwd = run_direction(&self.forward_cell, &input)?;
        let bwd = run_direction(bcell, &reversed)?;
        let t_len = input.len();
        let out = if self.return_sequences {
            let steps = (0..t_len)
                .map(|t| concat_cols(&fwd.steps[t].h, &bwd.steps[t_len - 1 - t].h))
                .collect();
            RecurrentOutput::Sequence(SeqBatch {
                batch,
                dim: 2 * units,
                shared: Vec::new(),
                steps,
            })
        } else {
            RecurrentOutput::Last(concat_cols(&fwd.last_h(batch), &bwd.last_h(batch)))
        };
        self.cache = Some(LayerCache {
            fwd,
            bwd: Some(bwd),
            batch,
            shared_len: 0,
        });
        Ok(out)
    }

    pub fn backward(&mut self, grad: RecurrentOutput<F>, need_dx: bool) -> NnResult<Option<SeqBatch<F>>> {
        let cache = self.cache.take().ok_or(NnError::NoCache("recurrent"))?;
        let batch = cache.batch;
        let units = self.units();
        let result = match (cache.bwd.as_ref(), grad) {
            (None, RecurrentOutput::Sequence(g)) => {
                let g = g.fold_prefix(cache.shared_len)?;
                backprop_direction(
                    &mut self.forward_cell,
                    &cache.fwd,
                    DirGrad {
                        shared: Some(&g.shared),
                        steps: Some(&g.steps),
                        last: None,
                    },
                    batch,
                    need_dx,
                )
            }
            (None, RecurrentOutput::Last(g)) => backprop_direction(
                &mut self.forward_cell,
                &cache.fwd,
                DirGrad {
                    shared: None,
                    steps: None,
                    last: Some(&g),
                },
                batch,
                need_dx,
            ),
            (Some(bwd_cache), grad) => {
                let bcell = self.backward_cell.as_mut().expect("bidirectional");
                let (dfx, dbx) = match grad {
                    RecurrentOutput::Sequence(g) => {
                        let g = g.materialize();
                        let t_len = g.steps.len();
                        let mut left = Vec::with_capacity(t_len);
                        let mut right = vec![Tensor::zeros(&[batch, units]); t_len];
                        for (t, gt) in g.steps.iter().enumerate() {
                            let (l, r) = split_cols(gt, units);
                            left.push(l);
                            right[t_len - 1 - t] = r;
                        }
                        let dfx = backprop_direction(
                            &mut self.forward_cell,
                            &cache.fwd,
                            DirGrad {
                                shared: None,
                                steps: Some(&left),
                                last: None,
                            },
                            batch,
                            need_dx,
                        )?;
                        let dbx = backprop_direction(
                            bcell,
                            bwd_cache,
                            DirGrad {
                                shared: None,
                                steps: Some(&right),
                                last: None,
                            },
                            batch,
                            need_dx,
                        )?;
                        (dfx, dbx)
                    }
                    RecurrentOutput::Last(g) => {
                        let (l, r) = split_cols(&g, units);
                        let dfx = backprop_direction(
                            &mut self.forward_cell,
                            &cache.fwd,
                            DirGrad {
                                shared: None,
                                steps: None,
                                last: Some(&l),
                            },
                            batch,
                            need_dx,
                        )?;
                        let dbx = backprop_direction(
                            bcell,
                            bwd_cache,
                            DirGrad {
                                shared: None,
                                steps: None,
                                last: Some(&r),
                            },
                            batch,
                            need_dx,
                        )?;
                        (dfx, dbx)
                    }
                };
                Ok(match (dfx, dbx) {
                    (Some(mut f), Some(b)) => {
                        let t_len = f.steps.len();
                        for (t, s) in b.steps.iter().enumerate() {
                            f.steps[t_len - 1 - t].add_assign(s);
                        }
                        Some(f)
                    }
                    _ => None,
                })
            }
        };
        result
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        let mut v = self.forward_cell.params_mut();
        if let Some(b) = self.backward_cell.as_mut() {
            v.extend(b.params_mut());
        }
        v
    }

    pub fn params(&self) -> Vec<&Param<F>> {
        let mut v = self.forward_cell.params();
        if let Some(b) = self.backward_cell.as_ref() {
            v.extend(b.params());
        }
        v
    }
}

fn concat_cols<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    let (m, p, q) = (a.rows(), a.row_len(), b.row_len());
    let mut out = Tensor::zeros(&[m, p + q]);
    for i in 0..m {
        let r = out.row_mut(i);
        r[..p].copy_from_slice(a.row(i));
        r[p..].copy_from_slice(b.row(i));
    }
    out
}

fn split_cols<F: Scalar>(t: &Tensor<F>, left: usize) -> (Tensor<F>, Tensor<F>) {
    let (m, w) = (t.rows(), t.row_len());
    let mut a = Tensor::zeros(&[m, left]);
    let mut b = Tensor::zeros(&[m, w - left]);
    for i in 0..m {
        a.row_mut(i).copy_from_slice(&t.row(i)[..left]);
        b.row_mut(i).copy_from_slice(&t.row(i)[left..]);
    }
    (a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_cell(kind: CellKind, d: usize, h: usize) -> CellParams<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = CellParams::new(&mut rng, kind, d, h);
        for prm in p.params_mut() {
            prm.value.fill(0.0);
        }
        p
    }

    #[test]
    fn gru_zero_weights_halves_state() {
        let p = zero_cell(CellKind::Gru, 2, 3);
        let x = Tensor::from_f64(&[1, 2], &[0.7, -1.1]).unwrap();
        let h = Tensor::from_f64(&[1, 3], &[1.0, -2.0, 0.5]).unwrap();
        let (h1, _) = gru_step(&x, &h, &p).unwrap();
        assert_eq!(h1.data(), &[0.5, -1.0, 0.25]);
    }

    #[test]
    fn lstm_zero_weights() {
        let p = zero_cell(CellKind::Lstm, 2, 2);
        let x = Tensor::from_f64(&[1, 2], &[0.3, 0.4]).unwrap();
        let h = Tensor::from_f64(&[1, 2], &[0.9, -0.9]).unwrap();
        let c = Tensor::from_f64(&[1, 2], &[2.0, -1.0]).unwrap();
        let ((h1, c1), _) = lstm_step(&x, &h, &c, &p).unwrap();
        assert_eq!(c1.data(), &[1.0, -0.5]);
        for (hv, cv) in h1.data().iter().zip(c.data()) {
            assert!((hv - 0.5 * (0.5 * cv).tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn wrong_kind_rejected() {
        let p = zero_cell(CellKind::Lstm, 2, 2);
        let x = Tensor::zeros(&[1, 2]);
        assert!(gru_step(&x, &Tensor::zeros(&[1, 2]), &p).is_err());
    }

    #[test]
    fn lstm_starts_with_unit_forget_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = CellParams::<f64>::new(&mut rng, CellKind::Lstm, 3, 4);
        let b = p.b.value.data();
        assert!(b[..4].iter().all(|&v| v == 0.0));
        assert!(b[4..8].iter().all(|&v| v == 1.0));
        assert!(b[8..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn parameter_count_independent_of_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layer = Recurrent::<f64>::new(&mut rng, CellKind::Gru, 4, 5, false, false);
        let count: usize = layer.params().iter().map(|p| p.len()).sum();
        assert_eq!(count, 4 * 15 + 5 * 10 + 25 + 15);
        let bi = Recurrent::<f64>::new(&mut rng, CellKind::Gru, 4, 5, false, true);
        let count_bi: usize = bi.params().iter().map(|p| p.len()).sum();
        assert_eq!(count_bi, 2 * count);
        assert_eq!(bi.output_dim(), 10);
    }

    #[test]
    fn shared_prefix_matches_materialized() {
        for kind in [CellKind::Simple, CellKind::Lstm, CellKind::Gru] {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let mut a = Recurrent::<f64>::new(&mut rng, kind, 3, 4, true, false);
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let mut b = Recurrent::<f64>::new(&mut rng, kind, 3, 4, true, false);
            let shared = vec![Tensor::from_f64(&[1, 3], &[0.1, -0.2, 0.3]).unwrap(); 3];
            let steps = vec![Tensor::from_f64(&[2, 3], &[0.5, 0.1, -0.4, -0.3, 0.2, 0.9]).unwrap(); 2];
            let input = SeqBatch::new(2, 3, shared, steps).unwrap();
            let ya = match a.forward(input.clone()).unwrap() {
                RecurrentOutput::Sequence(s) => s,
                _ => unreachable!(),
            };
            let yb = match b.forward(input.materialize()).unwrap() {
                RecurrentOutput::Sequence(s) => s,
                _ => unreachable!(),
            };
            let (ta, tb) = (ya.to_btd(), yb.to_btd());
            for (x, y) in ta.data().iter().zip(tb.data()) {
                assert!((x - y).abs() < 1e-12);
            }
            let g = SeqBatch::from_btd(&ta.map(|v| v + 0.5)).unwrap();
            let dxa = a.backward(RecurrentOutput::Sequence(g.clone()), true).unwrap().unwrap();
            let dxb = b.backward(RecurrentOutput::Sequence(g), true).unwrap().unwrap();
            let dxb = dxb.fold_prefix(3).unwrap();
            for (x, y) in dxa.shared.iter().chain(&dxa.steps).zip(dxb.shared.iter().chain(&dxb.steps)) {
                for (u, v) in x.data().iter().zip(y.data()) {
                    assert!((u - v).abs() < 1e-12);
                }
            }
            for (pa, pb) in a.params().iter().zip(b.params()) {
                for (u, v) in pa.grad.data().iter().zip(pb.grad.data()) {
                    assert!((u - v).abs() < 1e-12);
                }
            }
        }
    }
}
