//! Gradient engines for the many-to-one loss `L(ŷ(τ))`.
//!
//! All three engines compute the same `∇_θ L`, `∇_φ L` (in the flat layout of
//! [`crate::model`]) and differ only in the order the Jacobian products are
//! evaluated:
//!
//! - **RTRL** carries `dŷ(t)/dθ` and `dŷ(t)/dφ` forward in time. Cost per step
//!   is dominated by `p·y²·w`; it stores one `y × w` Jacobian per step of the
//!   largest lag.
//! - **BPTT** walks the unrolled computation tree depth-first. Every visited
//!   macronode `(a(t), ŷ(t))` costs `O(w)`, and the tree has a p-bonacci
//!   number of macronodes, so the cost is exponential in `τ`.
//! - **TRRL** merges identical subtrees by accumulating the total gradient
//!   `g_i = ∇_{ŷ(τ−i)} L` before expanding a node, so every step is visited
//!   once and the cost is `O(τ·w)`.
//!
//! The sparsity of `∂a(t)/∂θ` and `∂ŷ(t)/∂φ` (one non-zero per column) is
//! exploited by indexed scatter/gather everywhere; neither matrix is ever
//! materialized.

use serde::{Deserialize, Serialize};

use crate::model::{check_inputs, forward_sequence_counted, ForwardTrace, ModelParams, RnnSpec};
use crate::numerics::{all_finite, OpCounter, Rng};
use crate::{Error, Result};

/// Default cap on `τ` for BPTT: the tree for `L = {1,2}` and `τ = 25` already
/// has `F_27 − 1 ≈ 2·10⁵` macronodes.
pub const DEFAULT_BPTT_GUARD: usize = 25;

/// Default finite-difference step.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Scalar loss of the final network output.
pub trait OutputLoss: Sync {
    /// Returns `(L(ŷ), ∇_ŷ L)`.
    fn loss_and_grad(&self, y_hat: &[f64]) -> (f64, Vec<f64>);

    fn loss(&self, y_hat: &[f64]) -> f64 {
        self.loss_and_grad(y_hat).0
    }
}

impl<F> OutputLoss for F
where
    F: Fn(&[f64]) -> (f64, Vec<f64>) + Sync,
{
    fn loss_and_grad(&self, y_hat: &[f64]) -> (f64, Vec<f64>) {
        self(y_hat)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientPair {
    pub d_theta: Vec<f64>,
    pub d_phi: Vec<f64>,
}

impl GradientPair {
    pub fn zeros(spec: &RnnSpec) -> Self {
        Self {
            d_theta: vec![0.0; spec.theta_len()],
            d_phi: vec![0.0; spec.phi_len()],
        }
    }

    /// θ followed by φ.
    pub fn concat(&self) -> Vec<f64> {
        let mut v = self.d_theta.clone();
        v.extend_from_slice(&self.d_phi);
        v
    }

    pub fn add_assign(&mut self, other: &GradientPair) {
        for (a, b) in self.d_theta.iter_mut().zip(&other.d_theta) {
            *a += b;
        }
        for (a, b) in self.d_phi.iter_mut().zip(&other.d_phi) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.d_theta
            .iter_mut()
            .chain(self.d_phi.iter_mut())
            .for_each(|v| *v *= s);
    }

    pub fn max_abs(&self) -> f64 {
        self.d_theta
            .iter()
            .chain(&self.d_phi)
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        all_finite(&self.d_theta) && all_finite(&self.d_phi)
    }
}

/// Result of one engine call.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineOutput {
    pub grads: GradientPair,
    pub loss: f64,
    pub counter: OpCounter,
    /// Visited macronodes (BPTT only).
    pub macronodes: Option<u128>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Rtrl,
    Bptt,
    Trrl,
}

impl Engine {
    pub const ALL: [Engine; 3] = [Engine::Rtrl, Engine::Bptt, Engine::Trrl];

    pub fn name(&self) -> &'static str {
        match self {
            Engine::Rtrl => "rtrl",
            Engine::Bptt => "bptt",
            Engine::Trrl => "trrl",
        }
    }

    pub fn run(
        &self,
        params: &ModelParams,
        xs: &[Vec<f64>],
        loss: &dyn OutputLoss,
        bptt_guard: usize,
    ) -> Result<EngineOutput> {
        match self {
            Engine::Rtrl => rtrl_gradients(params, xs, loss),
            Engine::Bptt => bptt_gradients(params, xs, loss, bptt_guard),
            Engine::Trrl => trrl_gradients(params, xs, loss),
        }
    }
}

impl std::fmt::Display for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Engine {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rtrl" => Ok(Engine::Rtrl),
            "bptt" => Ok(Engine::Bptt),
            "trrl" => Ok(Engine::Trrl),
            other => Err(Error::InvalidArgument(format!("unknown engine {other:?}"))),
        }
    }
}

fn loss_at_end(loss: &dyn OutputLoss, y_tau: &[f64], tau: usize) -> Result<(f64, Vec<f64>)> {
    let (l, g) = loss.loss_and_grad(y_tau);
    if g.len() != y_tau.len() {
        return Err(Error::Dimension(format!(
            "loss gradient of length {} for output of length {}",
            g.len(),
            y_tau.len()
        )));
    }
    if !l.is_finite() || !all_finite(&g) {
        return Err(Error::NonFinite {
            step: tau,
            what: "loss or loss gradient",
        });
    }
    Ok((l, g))
}

/// Shared per-macronode work of BPTT and TRRL for the node at step `t` with
/// incoming total gradient `g = ∇_{ŷ(t)} L` (partial, for BPTT):
///
/// 1. `∇_φ L += (∂ŷ(t)/∂φ)ᵀ g`
/// 2. `δ = (V · dh/da)ᵀ g`
/// 3. `∇_θ L += (∂a(t)/∂θ)ᵀ δ`
///
/// Returns `δ` in `delta`.
#[inline]
fn accumulate_node(
    params: &ModelParams,
    trace: &ForwardTrace,
    xs: &[Vec<f64>],
    t: usize,
    g: &[f64],
    delta: &mut [f64],
    grads: &mut GradientPair,
    counter: &mut OpCounter,
) -> Result<()> {
    let spec = params.spec();
    let (x, h, y) = (spec.x_dim, spec.hidden_dim, spec.y_dim);
    let hidden = trace.hidden(t);

    // ∂ŷ_k/∂V[k][j] = h_j, ∂ŷ_k/∂c[k] = 1
    for k in 0..y {
        let gk = g[k];
        let row = &mut grads.d_phi[k * h..(k + 1) * h];
        for (d, hv) in row.iter_mut().zip(hidden) {
            *d += gk * hv;
        }
        grads.d_phi[y * h + k] += gk;
    }
    counter.add_macs(spec.phi_len());

    // δ_j = h_j(1 − h_j) Σ_k V[k][j] g_k
    delta.iter_mut().for_each(|d| *d = 0.0);
    params.v.mul_transpose_acc(g, delta);
    for (d, hv) in delta.iter_mut().zip(hidden) {
        *d *= hv * (1.0 - hv);
    }
    counter.add_macs(y * h + h);
    if !all_finite(delta) {
        return Err(Error::NonFinite {
            step: t,
            what: "backpropagated hidden gradient",
        });
    }

    // ∂a_j/∂U[j][m] = x_m, ∂a_j/∂W_i[j][k] = ŷ_k(t − l_i), ∂a_j/∂b[j] = 1
    let xt = &xs[t - 1];
    for j in 0..h {
        let dj = delta[j];
        let row = &mut grads.d_theta[j * x..(j + 1) * x];
        for (d, xv) in row.iter_mut().zip(xt) {
            *d += dj * xv;
        }
    }
    for (i, &l) in spec.lag_set.lags().iter().enumerate() {
        let fb = trace.output(t as isize - l as isize);
        let base = spec.theta_index_w(i, 0, 0);
        for j in 0..h {
            let dj = delta[j];
            let row = &mut grads.d_theta[base + j * y..base + (j + 1) * y];
            for (d, f) in row.iter_mut().zip(fb) {
                *d += dj * f;
            }
        }
    }
    let bbase = spec.theta_index_b(0);
    for j in 0..h {
        grads.d_theta[bbase + j] += delta[j];
    }
    counter.add_macs(spec.theta_len());
    Ok(())
}

/// Tree Recombined Recurrent Learning.
///
/// ```text
/// g_0 ← ∇_{ŷ(τ)} L
/// for i = 0 .. τ−1:
///     ∇_φ L += (∂ŷ(τ−i)/∂φ)ᵀ g_i
///     g_i   ← (V · dh(τ−i)/da(τ−i))ᵀ g_i
///     ∇_θ L += (∂a(τ−i)/∂θ)ᵀ g_i
///     for each lag l with i + l < τ:  g_{i+l} += W_lᵀ g_i
///     delete g_i
/// ```
///
/// Only `g_i … g_{i+max(L)}` are alive at iteration `i`; they live in a ring of
/// `max(L) + 1` slots.
pub fn trrl_gradients(
    params: &ModelParams,
    xs: &[Vec<f64>],
    loss: &dyn OutputLoss,
) -> Result<EngineOutput> {
    let spec = params.spec();
    check_inputs(spec, xs)?;
    let (h, y) = (spec.hidden_dim, spec.y_dim);
    let tau = xs.len();
    let mut counter = OpCounter::new();
    let trace = forward_sequence_counted(params, xs, &mut counter)?;
    let (loss_value, g0) = loss_at_end(loss, trace.final_output(), tau)?;

    let slots = spec.lag_set.max_lag() + 1;
    let mut ring = vec![vec![0.0; y]; slots];
    let mut live = vec![false; slots];
    ring[0].copy_from_slice(&g0);
    live[0] = true;
    counter.alloc(y);

    let mut grads = GradientPair::zeros(spec);
    let mut delta = vec![0.0; h];
    for i in 0..tau {
        let slot = i % slots;
        if !live[slot] {
            // no path from ŷ(τ) reaches ŷ(τ−i)
            continue;
        }
        let t = tau - i;
        let g = std::mem::take(&mut ring[slot]);
        counter.alloc(h);
        accumulate_node(
            params,
            &trace,
            xs,
            t,
            &g,
            &mut delta,
            &mut grads,
            &mut counter,
        )?;
        for (li, &l) in spec.lag_set.lags().iter().enumerate() {
            if i + l < tau {
                let target = (i + l) % slots;
                if !live[target] {
                    live[target] = true;
                    counter.alloc(y);
                }
                params.w[li].mul_transpose_acc(&delta, &mut ring[target]);
                counter.add_macs(h * y);
                if !all_finite(&ring[target]) {
                    return Err(Error::NonFinite {
                        step: t - l,
                        what: "total output gradient",
                    });
                }
            }
        }
        ring[slot] = g;
        ring[slot].iter_mut().for_each(|v| *v = 0.0);
        live[slot] = false;
        counter.release(y + h);
    }
    Ok(EngineOutput {
        grads,
        loss: loss_value,
        counter,
        macronodes: None,
    })
}

/// Backpropagation through time on the literal unrolled tree.
///
/// Each call recurses from macronode `t` into its children `t − l` for every
/// lag with `t − l ≥ 1`, carrying only the gradient that flows along the
/// current path. Subtrees reached by several paths are re-expanded every time.
/// Fails with [`Error::TauGuard`] when `τ > guard`.
pub fn bptt_gradients(
    params: &ModelParams,
    xs: &[Vec<f64>],
    loss: &dyn OutputLoss,
    guard: usize,
) -> Result<EngineOutput> {
    let spec = params.spec();
    check_inputs(spec, xs)?;
    let tau = xs.len();
    if tau > guard {
        return Err(Error::TauGuard { tau, guard });
    }
    let mut counter = OpCounter::new();
    let trace = forward_sequence_counted(params, xs, &mut counter)?;
    let (loss_value, g0) = loss_at_end(loss, trace.final_output(), tau)?;

    let mut walk = TreeWalk {
        params,
        trace: &trace,
        xs,
        grads: GradientPair::zeros(spec),
        counter,
        visited: 0,
    };
    walk.counter.alloc(g0.len());
    walk.visit(tau, &g0)?;
    walk.counter.release(g0.len());
    Ok(EngineOutput {
        grads: walk.grads,
        loss: loss_value,
        counter: walk.counter,
        macronodes: Some(walk.visited),
    })
}

struct TreeWalk<'a> {
    params: &'a ModelParams,
    trace: &'a ForwardTrace,
    xs: &'a [Vec<f64>],
    grads: GradientPair,
    counter: OpCounter,
    visited: u128,
}

impl TreeWalk<'_> {
    fn visit(&mut self, t: usize, g: &[f64]) -> Result<()> {
        let spec = self.params.spec();
        let (h, y) = (spec.hidden_dim, spec.y_dim);
        self.visited += 1;
        let mut delta = vec![0.0; h];
        self.counter.alloc(h);
        accumulate_node(
            self.params,
            self.trace,
            self.xs,
            t,
            g,
            &mut delta,
            &mut self.grads,
            &mut self.counter,
        )?;
        for (li, &l) in spec.lag_set.lags().iter().enumerate() {
            if t > l {
                let mut child = vec![0.0; y];
                self.counter.alloc(y);
                self.params.w[li].mul_transpose_acc(&delta, &mut child);
                self.counter.add_macs(h * y);
                self.visit(t - l, &child)?;
                self.counter.release(y);
            }
        }
        self.counter.release(h);
        Ok(())
    }
}

/// Real-time recurrent learning.
///
/// At step `t` the Jacobians follow
///
/// ```text
/// dŷ(t)/dθ = V·D(t)·(∂a(t)/∂θ + Σ_i W_i · dŷ(t−l_i)/dθ)
/// dŷ(t)/dφ = ∂ŷ(t)/∂φ + V·D(t)·Σ_i W_i · dŷ(t−l_i)/dφ
/// ```
///
/// evaluated left to right: the `y × y` products `V·D·W_i` are formed first and
/// the sparse `∂a/∂θ` term costs `y` per column. Jacobians are stored
/// column-major in a ring of `max(L)` slots; the new Jacobian overwrites the
/// slot of step `t − max(L)` column by column after that column has been read.
pub fn rtrl_gradients(
    params: &ModelParams,
    xs: &[Vec<f64>],
    loss: &dyn OutputLoss,
) -> Result<EngineOutput> {
    let spec = params.spec();
    check_inputs(spec, xs)?;
    let (x, h, y) = (spec.x_dim, spec.hidden_dim, spec.y_dim);
    let (n_theta, n_phi) = (spec.theta_len(), spec.phi_len());
    let lags = spec.lag_set.lags();
    let p = lags.len();
    let slots = spec.lag_set.max_lag();
    let tau = xs.len();

    let mut counter = OpCounter::new();
    let mut jac_theta = vec![vec![0.0; n_theta * y]; slots];
    let mut jac_phi = vec![vec![0.0; n_phi * y]; slots];
    counter.alloc(slots * y * (n_theta + n_phi));

    let zeros = vec![0.0; y];
    let mut outputs = vec![vec![0.0; y]; slots];
    let mut a = vec![0.0; h];
    let mut hidden = vec![0.0; h];
    let mut y_t = vec![0.0; y];
    let mut vd = vec![0.0; y * h];
    let mut vdw = vec![0.0; p * y * y];
    let mut col = vec![0.0; y];

    let slot_of = |s: isize| -> usize { s.rem_euclid(slots as isize) as usize };

    for t in 1..=tau {
        let ti = t as isize;
        {
            let feedbacks: Vec<&[f64]> = lags
                .iter()
                .map(|&l| {
                    if t > l {
                        &outputs[slot_of(ti - l as isize)][..]
                    } else {
                        &zeros[..]
                    }
                })
                .collect();
            crate::model::forward_step_into(
                params,
                &xs[t - 1],
                &feedbacks,
                &mut a,
                &mut hidden,
                &mut y_t,
                &mut counter,
            );
        }
        if !all_finite(&y_t) {
            return Err(Error::NonFinite {
                step: t,
                what: "network output",
            });
        }

        // V·D (y × h)
        for k in 0..y {
            for j in 0..h {
                vd[k * h + j] = params.v[(k, j)] * hidden[j] * (1.0 - hidden[j]);
            }
        }
        counter.add_macs(y * h);
        // V·D·W_i (y × y) per lag
        for (li, w) in params.w.iter().enumerate() {
            for k in 0..y {
                for kk in 0..y {
                    let mut acc = 0.0;
                    for j in 0..h {
                        acc += vd[k * h + j] * w[(j, kk)];
                    }
                    vdw[li * y * y + k * y + kk] = acc;
                }
            }
        }
        counter.add_macs(p * y * y * h);

        let lag_slots: Vec<usize> = lags.iter().map(|&l| slot_of(ti - l as isize)).collect();
        let out_slot = slot_of(ti);

        // recurrent part for one column: col[k] = Σ_i Σ_kk VDW_i[k][kk] J_{t−l_i}[c][kk]
        macro_rules! recurrent_column {
            ($jac:expr, $c:expr) => {{
                col.iter_mut().for_each(|v| *v = 0.0);
                for (li, &s) in lag_slots.iter().enumerate() {
                    let prev = &$jac[s][$c * y..($c + 1) * y];
                    let m = &vdw[li * y * y..(li + 1) * y * y];
                    for k in 0..y {
                        let mut acc = 0.0;
                        for kk in 0..y {
                            acc += m[k * y + kk] * prev[kk];
                        }
                        col[k] += acc;
                    }
                }
            }};
        }

        // θ columns, grouped by hidden unit j: U[j][·], W_i[j][·], b[j]
        for j in 0..h {
            let x_t = &xs[t - 1];
            for m in 0..x {
                let c = spec.theta_index_u(j, m);
                recurrent_column!(jac_theta, c);
                for k in 0..y {
                    col[k] += vd[k * h + j] * x_t[m];
                }
                jac_theta[out_slot][c * y..(c + 1) * y].copy_from_slice(&col);
            }
            for (li, &l) in lags.iter().enumerate() {
                let fb: &[f64] = if t > l {
                    &outputs[slot_of(ti - l as isize)]
                } else {
                    &zeros
                };
                for kk in 0..y {
                    let c = spec.theta_index_w(li, j, kk);
                    let val = fb[kk];
                    recurrent_column!(jac_theta, c);
                    for k in 0..y {
                        col[k] += vd[k * h + j] * val;
                    }
                    jac_theta[out_slot][c * y..(c + 1) * y].copy_from_slice(&col);
                }
            }
            let c = spec.theta_index_b(j);
            recurrent_column!(jac_theta, c);
            for k in 0..y {
                col[k] += vd[k * h + j];
            }
            jac_theta[out_slot][c * y..(c + 1) * y].copy_from_slice(&col);
        }
        counter.add_macs(n_theta * (y + p * y * y));

        // φ columns: V[k0][j] (∂ŷ_k0 = h_j), c[k0] (∂ŷ_k0 = 1)
        for k0 in 0..y {
            for j in 0..h {
                let c = spec.phi_index_v(k0, j);
                recurrent_column!(jac_phi, c);
                col[k0] += hidden[j];
                jac_phi[out_slot][c * y..(c + 1) * y].copy_from_slice(&col);
            }
            let c = spec.phi_index_c(k0);
            recurrent_column!(jac_phi, c);
            col[k0] += 1.0;
            jac_phi[out_slot][c * y..(c + 1) * y].copy_from_slice(&col);
        }
        counter.add_macs(n_phi * (1 + p * y * y));

        if !all_finite(&jac_theta[out_slot]) || !all_finite(&jac_phi[out_slot]) {
            return Err(Error::NonFinite {
                step: t,
                what: "output Jacobian",
            });
        }
        outputs[out_slot].copy_from_slice(&y_t);
    }

    let last = slot_of(tau as isize);
    let (loss_value, gy) = loss_at_end(loss, &outputs[last], tau)?;
    let mut grads = GradientPair::zeros(spec);
    for (c, d) in grads.d_theta.iter_mut().enumerate() {
        let col = &jac_theta[last][c * y..(c + 1) * y];
        *d = col.iter().zip(&gy).map(|(a, b)| a * b).sum();
    }
    for (c, d) in grads.d_phi.iter_mut().enumerate() {
        let col = &jac_phi[last][c * y..(c + 1) * y];
        *d = col.iter().zip(&gy).map(|(a, b)| a * b).sum();
    }
    counter.add_macs(y * (n_theta + n_phi));
    Ok(EngineOutput {
        grads,
        loss: loss_value,
        counter,
        macronodes: None,
    })
}

/// Central differences `(L(p+δ) − L(p−δ)) / 2δ` on every flat parameter.
pub fn finite_difference_gradients(
    params: &ModelParams,
    xs: &[Vec<f64>],
    loss: &dyn OutputLoss,
    step: f64,
) -> Result<GradientPair> {
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step {step}"
        )));
    }
    let spec = params.spec();
    check_inputs(spec, xs)?;
    let base = params.pack().concat();
    let n_theta = spec.theta_len();
    let mut probe = params.clone();
    let mut eval = |v: &[f64]| -> Result<f64> {
        probe.set_from_concat(v)?;
        let y = crate::model::predict(&probe, xs)?;
        let l = loss.loss(&y);
        if !l.is_finite() {
            return Err(Error::NonFinite {
                step: xs.len(),
                what: "loss in finite differences",
            });
        }
        Ok(l)
    };
    let mut out = vec![0.0; base.len()];
    let mut v = base.clone();
    for i in 0..base.len() {
        v[i] = base[i] + step;
        let plus = eval(&v)?;
        v[i] = base[i] - step;
        let minus = eval(&v)?;
        v[i] = base[i];
        out[i] = (plus - minus) / (2.0 * step);
    }
    Ok(GradientPair {
        d_phi: out.split_off(n_theta),
        d_theta: out,
    })
}

/// Number of macronodes in the unrolled tree,
/// `N(t) = 1 + Σ_{l ∈ L, t−l ≥ 1} N(t − l)`, evaluated at `τ`.
pub fn macronode_count(tau: usize, lags: &crate::model::LagSet) -> Result<u128> {
    if tau == 0 {
        return Err(Error::InvalidArgument("tau must be >= 1".into()));
    }
    let mut n: Vec<u128> = Vec::with_capacity(tau + 1);
    n.push(0);
    for t in 1..=tau {
        let mut acc: u128 = 1;
        for &l in lags.lags() {
            if t > l {
                acc = acc
                    .checked_add(n[t - l])
                    .ok_or_else(|| Error::Overflow(format!("macronode count at tau={t}")))?;
            }
        }
        n.push(acc);
    }
    Ok(n[tau])
}

/// Floats held by the RTRL Jacobian ring: `max(L)·y·w`. For a consecutive
/// lag set `{1..p}` this is exactly `p·y·w`.
pub fn rtrl_space_floats(spec: &RnnSpec) -> u64 {
    (spec.lag_set.max_lag() * spec.y_dim * spec.param_count()) as u64
}

/// The `p·y·w` storage estimate, which counts one Jacobian per feedback
/// connection and therefore assumes consecutive lags.
pub fn rtrl_space_estimate(spec: &RnnSpec) -> u64 {
    (spec.p() * spec.y_dim * spec.param_count()) as u64
}

/// Per-coordinate comparison of two gradient vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientDiff {
    /// Largest `|a − b| / max(|a|, |b|, 1e-12)`.
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Largest relative error among coordinates whose absolute error exceeds
    /// the absolute tolerance passed to [`compare_gradients`].
    pub max_rel_err_beyond_abs: f64,
}

pub fn compare_gradients(a: &GradientPair, b: &GradientPair, abs_tol: f64) -> GradientDiff {
    let mut d = GradientDiff {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        max_rel_err_beyond_abs: 0.0,
    };
    for (x, y) in a.concat().iter().zip(b.concat()) {
        let abs = (x - y).abs();
        let rel = abs / x.abs().max(y.abs()).max(1e-12);
        d.max_abs_err = d.max_abs_err.max(abs);
        d.max_rel_err = d.max_rel_err.max(rel);
        if abs > abs_tol {
            d.max_rel_err_beyond_abs = d.max_rel_err_beyond_abs.max(rel);
        }
    }
    d
}

/// `‖a − b‖∞ / (1 + ‖b‖∞)`.
pub fn scaled_inf_distance(a: &GradientPair, b: &GradientPair) -> f64 {
    let diff = a
        .concat()
        .iter()
        .zip(b.concat())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    diff / (1.0 + b.max_abs())
}

/// Tolerances of the equivalence suite.
pub const PAIRWISE_TOL: f64 = 1e-10;
pub const FD_REL_TOL: f64 = 1e-5;
pub const FD_ABS_TOL: f64 = 1e-7;

/// Lag sets exercised by [`gradcheck_instance`].
pub fn gradcheck_lag_sets() -> Vec<crate::model::LagSet> {
    [&[1][..], &[1, 2], &[1, 3], &[1, 2, 5]]
        .iter()
        .map(|l| crate::model::LagSet::new(l.to_vec()).expect("valid"))
        .collect()
}

/// A seeded random problem: spec, parameters, inputs and a scalar target
/// scored by either a squared-error (`y = 1`) or Gaussian NLL (`y = 2`) head.
#[derive(Debug, Clone)]
pub struct GradcheckCase {
    pub seed: u64,
    pub params: ModelParams,
    pub xs: Vec<Vec<f64>>,
    pub target: f64,
    pub gaussian: bool,
}

impl GradcheckCase {
    /// `h ≤ 8`, `x ≤ 5`, `τ ≤ max_tau`, lag set and head drawn from the seed.
    pub fn random(seed: u64, max_tau: usize) -> Result<Self> {
        if max_tau == 0 {
            return Err(Error::InvalidArgument("max_tau must be >= 1".into()));
        }
        let mut rng = Rng::new(seed);
        let sets = gradcheck_lag_sets();
        let lags = sets[rng.below(sets.len())].clone();
        let gaussian = rng.below(2) == 1;
        let spec = RnnSpec::new(
            lags,
            1 + rng.below(5),
            1 + rng.below(8),
            if gaussian { 2 } else { 1 },
        )?;
        let tau = 1 + rng.below(max_tau);
        let mut params = ModelParams::init(&spec, &mut rng);
        params.b = crate::numerics::rand_uniform(&mut rng, -0.5, 0.5, spec.hidden_dim)?;
        params.c = crate::numerics::rand_uniform(&mut rng, -0.5, 0.5, spec.y_dim)?;
        let xs = (0..tau)
            .map(|_| crate::numerics::rand_uniform(&mut rng, -1.0, 1.0, spec.x_dim))
            .collect::<Result<_>>()?;
        let target = rng.standard_normal();
        Ok(Self {
            seed,
            params,
            xs,
            target,
            gaussian,
        })
    }

    pub fn loss(&self, y: &[f64]) -> (f64, Vec<f64>) {
        if self.gaussian {
            crate::training::gaussian_nll_loss(y, self.target, crate::training::DEFAULT_SIGMA_FLOOR)
        } else {
            crate::training::mse_loss(y, self.target)
        }
    }
}

/// One line of the gradcheck report. `engine` is an engine name for the
/// finite-difference comparison or `a~b` for a pairwise one. For the former
/// `max_rel_err` only counts coordinates whose absolute error exceeds
/// [`FD_ABS_TOL`]; for the latter it is the scaled sup-norm distance.
#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckRow {
    pub engine: String,
    pub seed: u64,
    pub tau: usize,
    pub lag_set: crate::model::LagSet,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub passed: bool,
}

pub const GRADCHECK_HEADER: [&str; 6] = [
    "engine",
    "seed",
    "tau",
    "lagset",
    "max_rel_err",
    "max_abs_err",
];

/// Runs all engines on one case against central differences and each other.
pub fn gradcheck_instance(case: &GradcheckCase, fd_step: f64) -> Result<Vec<GradcheckRow>> {
    let loss = |y: &[f64]| case.loss(y);
    let spec = case.params.spec();
    let fd = finite_difference_gradients(&case.params, &case.xs, &loss, fd_step)?;
    let mut grads = Vec::new();
    let mut rows = Vec::new();
    let row = |engine: String, rel: f64, abs: f64, passed: bool| GradcheckRow {
        engine,
        seed: case.seed,
        tau: case.xs.len(),
        lag_set: spec.lag_set.clone(),
        max_rel_err: rel,
        max_abs_err: abs,
        passed,
    };
    for e in Engine::ALL {
        let g = e
            .run(&case.params, &case.xs, &loss, DEFAULT_BPTT_GUARD)?
            .grads;
        let d = compare_gradients(&g, &fd, FD_ABS_TOL);
        rows.push(row(
            e.name().into(),
            d.max_rel_err_beyond_abs,
            d.max_abs_err,
            d.max_rel_err_beyond_abs <= FD_REL_TOL,
        ));
        grads.push((e, g));
    }
    for (i, j) in [(2, 0), (2, 1), (0, 1)] {
        let (a, ga) = &grads[i];
        let (b, gb) = &grads[j];
        let dist = scaled_inf_distance(ga, gb);
        let d = compare_gradients(ga, gb, 0.0);
        rows.push(row(
            format!("{a}~{b}"),
            dist,
            d.max_abs_err,
            dist <= PAIRWISE_TOL,
        ));
    }
    Ok(rows)
}

/// Seeds `0..seeds`.
pub fn gradcheck_suite(seeds: u64, max_tau: usize, fd_step: f64) -> Result<Vec<GradcheckRow>> {
    let per_seed =
        crate::parallel::map_indexed(seeds as usize, crate::parallel::Execution::default(), |s| {
            gradcheck_instance(&GradcheckCase::random(s as u64, max_tau)?, fd_step)
        });
    let mut out = Vec::new();
    for rows in per_seed {
        out.extend(rows?);
    }
    Ok(out)
}

pub fn write_gradcheck_csv<W: std::io::Write>(rows: &[GradcheckRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(GRADCHECK_HEADER)?;
    for r in rows {
        w.write_record([
            r.engine.clone(),
            r.seed.to_string(),
            r.tau.to_string(),
            r.lag_set.to_string(),
            format!("{:e}", r.max_rel_err),
            format!("{:e}", r.max_abs_err),
        ])?;
    }
    w.flush()?;
    Ok(())
}
