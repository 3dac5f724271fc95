//! RNN(p) architecture: a shallow network whose hidden pre-activation receives
//! the model's own past outputs at an arbitrary set of lags,
//!
//! ```text
//! a(t) = b + U·x(t) + Σ_i W_i·ŷ(t − l_i)
//! h(t) = sigmoid(a(t))
//! ŷ(t) = c + V·h(t)
//! ```
//!
//! with `ŷ(t) = 0` for `t ≤ 0`.
//!
//! # Flat parameter layout
//!
//! Gradients from every engine are reported in the same flat layout:
//!
//! | vector | block            | flat index                     |
//! |--------|------------------|--------------------------------|
//! | θ      | `U[j][m]`        | `j·x + m`                      |
//! | θ      | `W_i[j][k]`      | `h·x + i·h·y + j·y + k`        |
//! | θ      | `b[j]`           | `h·x + p·h·y + j`              |
//! | φ      | `V[k][j]`        | `k·h + j`                      |
//! | φ      | `c[k]`           | `y·h + k`                      |
//!
//! where `i` is the position of the lag inside the lag set.
//!
//! # Checkpoint format
//!
//! A checkpoint is UTF-8 text: the line `RNNP1`, then one JSON object with the
//! keys `spec`, `theta`, `phi` and `state`. `theta`/`phi` follow the layout
//! above; `state` carries whatever normalization data the caller attaches.
//! Floats are written in shortest round-trip form, so reading a checkpoint
//! back reproduces the parameters bit for bit.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::numerics::{sigmoid, Matrix, OpCounter, Rng};
use crate::{Error, Result};

/// Strictly increasing, non-empty set of positive feedback lags.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct LagSet(Vec<usize>);

impl LagSet {
    pub fn new(lags: Vec<usize>) -> Result<Self> {
        if lags.is_empty() {
            return Err(Error::InvalidArgument("lag set must be non-empty".into()));
        }
        if lags[0] == 0 {
            return Err(Error::InvalidArgument("lags must be >= 1".into()));
        }
        if lags.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(format!(
                "lags must be strictly increasing, got {lags:?}"
            )));
        }
        Ok(Self(lags))
    }

    /// `{1, 2, …, p}`.
    pub fn consecutive(p: usize) -> Result<Self> {
        Self::new((1..=p).collect())
    }

    pub fn lags(&self) -> &[usize] {
        &self.0
    }

    /// Number of feedback connections `p`.
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn max_lag(&self) -> usize {
        *self.0.last().expect("non-empty by construction")
    }
}

impl TryFrom<Vec<usize>> for LagSet {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        LagSet::new(v)
    }
}

impl From<LagSet> for Vec<usize> {
    fn from(l: LagSet) -> Self {
        l.0
    }
}

impl std::fmt::Display for LagSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|l| l.to_string()).collect();
        write!(f, "{{{}}}", parts.join(","))
    }
}

impl std::str::FromStr for LagSet {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let inner = s.trim().trim_start_matches('{').trim_end_matches('}');
        let lags = inner
            .split([',', ' ', ';'])
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|_| Error::InvalidArgument(format!("bad lag {t:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        LagSet::new(lags)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RnnSpec {
    pub lag_set: LagSet,
    pub x_dim: usize,
    pub hidden_dim: usize,
    pub y_dim: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl RnnSpec {
    pub fn new(lag_set: LagSet, x_dim: usize, hidden_dim: usize, y_dim: usize) -> Result<Self> {
        if x_dim == 0 || hidden_dim == 0 || y_dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "dimensions must be >= 1 (x={x_dim}, h={hidden_dim}, y={y_dim})"
            )));
        }
        Ok(Self {
            lag_set,
            x_dim,
            hidden_dim,
            y_dim,
            activation: Activation::Sigmoid,
        })
    }

    pub fn validate(&self) -> Result<()> {
        Self::new(
            self.lag_set.clone(),
            self.x_dim,
            self.hidden_dim,
            self.y_dim,
        )
        .map(|_| ())
    }

    pub fn p(&self) -> usize {
        self.lag_set.len()
    }

    /// `|θ| = (x + p·y + 1)·h`
    pub fn theta_len(&self) -> usize {
        (self.x_dim + self.p() * self.y_dim + 1) * self.hidden_dim
    }

    /// `|φ| = (h + 1)·y`
    pub fn phi_len(&self) -> usize {
        (self.hidden_dim + 1) * self.y_dim
    }

    /// Total trainable parameters `w = |θ| + |φ|`.
    pub fn param_count(&self) -> usize {
        self.theta_len() + self.phi_len()
    }

    pub fn theta_index_u(&self, j: usize, m: usize) -> usize {
        j * self.x_dim + m
    }

    pub fn theta_index_w(&self, lag_pos: usize, j: usize, k: usize) -> usize {
        let (h, x, y) = (self.hidden_dim, self.x_dim, self.y_dim);
        h * x + lag_pos * h * y + j * y + k
    }

    pub fn theta_index_b(&self, j: usize) -> usize {
        let (h, x, y) = (self.hidden_dim, self.x_dim, self.y_dim);
        h * x + self.p() * h * y + j
    }

    pub fn phi_index_v(&self, k: usize, j: usize) -> usize {
        k * self.hidden_dim + j
    }

    pub fn phi_index_c(&self, k: usize) -> usize {
        self.y_dim * self.hidden_dim + k
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    spec: RnnSpec,
    /// h × x
    pub u: Matrix,
    /// One h × y matrix per lag, in lag-set order.
    pub w: Vec<Matrix>,
    pub b: Vec<f64>,
    /// y × h
    pub v: Matrix,
    pub c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatParams {
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
}

impl FlatParams {
    /// θ followed by φ.
    pub fn concat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.theta.len() + self.phi.len());
        v.extend_from_slice(&self.theta);
        v.extend_from_slice(&self.phi);
        v
    }

    pub fn split(all: &[f64], theta_len: usize) -> Self {
        Self {
            theta: all[..theta_len].to_vec(),
            phi: all[theta_len..].to_vec(),
        }
    }
}

impl ModelParams {
    pub fn zeros(spec: &RnnSpec) -> Self {
        let (x, h, y) = (spec.x_dim, spec.hidden_dim, spec.y_dim);
        Self {
            spec: spec.clone(),
            u: Matrix::zeros(h, x),
            w: (0..spec.p()).map(|_| Matrix::zeros(h, y)).collect(),
            b: vec![0.0; h],
            v: Matrix::zeros(y, h),
            c: vec![0.0; y],
        }
    }

    /// Glorot-uniform weights, `U[−r, r]` with `r = sqrt(6 / (fan_in + fan_out))`
    /// per matrix; biases start at zero.
    pub fn init(spec: &RnnSpec, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(spec);
        fill_glorot(&mut p.u, rng);
        for w in &mut p.w {
            fill_glorot(w, rng);
        }
        fill_glorot(&mut p.v, rng);
        p
    }

    pub fn spec(&self) -> &RnnSpec {
        &self.spec
    }

    pub fn pack(&self) -> FlatParams {
        let mut theta = Vec::with_capacity(self.spec.theta_len());
        theta.extend_from_slice(self.u.as_slice());
        for w in &self.w {
            theta.extend_from_slice(w.as_slice());
        }
        theta.extend_from_slice(&self.b);
        let mut phi = Vec::with_capacity(self.spec.phi_len());
        phi.extend_from_slice(self.v.as_slice());
        phi.extend_from_slice(&self.c);
        FlatParams { theta, phi }
    }

    pub fn unpack(spec: &RnnSpec, flat: &FlatParams) -> Result<Self> {
        if flat.theta.len() != spec.theta_len() || flat.phi.len() != spec.phi_len() {
            return Err(Error::Dimension(format!(
                "flat params of length ({}, {}) for a spec needing ({}, {})",
                flat.theta.len(),
                flat.phi.len(),
                spec.theta_len(),
                spec.phi_len()
            )));
        }
        let (x, h, y) = (spec.x_dim, spec.hidden_dim, spec.y_dim);
        let mut off = 0;
        let mut take = |n: usize| {
            let s = &flat.theta[off..off + n];
            off += n;
            s.to_vec()
        };
        let u = Matrix::from_vec(h, x, take(h * x))?;
        let w = (0..spec.p())
            .map(|_| Matrix::from_vec(h, y, take(h * y)))
            .collect::<Result<Vec<_>>>()?;
        let b = take(h);
        let v = Matrix::from_vec(y, h, flat.phi[..y * h].to_vec())?;
        let c = flat.phi[y * h..].to_vec();
        Ok(Self {
            spec: spec.clone(),
            u,
            w,
            b,
            v,
            c,
        })
    }

    /// Overwrites the parameters from a θ‖φ vector.
    pub fn set_from_concat(&mut self, all: &[f64]) -> Result<()> {
        let flat = FlatParams::split(all, self.spec.theta_len());
        *self = Self::unpack(&self.spec, &flat)?;
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        let f = self.pack();
        crate::numerics::all_finite(&f.theta) && crate::numerics::all_finite(&f.phi)
    }
}

fn fill_glorot(m: &mut Matrix, rng: &mut Rng) {
    let r = (6.0 / (m.rows() + m.cols()) as f64).sqrt();
    for v in m.as_mut_slice() {
        *v = rng.uniform(-r, r);
    }
}

/// Per-step record of one processed sequence. Steps are 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    tau: usize,
    h_dim: usize,
    y_dim: usize,
    pre_activations: Vec<f64>,
    hidden: Vec<f64>,
    outputs: Vec<f64>,
    zeros: Vec<f64>,
}

impl ForwardTrace {
    pub fn tau(&self) -> usize {
        self.tau
    }

    /// `a(t)` for `1 ≤ t ≤ τ`.
    pub fn pre_activation(&self, t: usize) -> &[f64] {
        &self.pre_activations[(t - 1) * self.h_dim..t * self.h_dim]
    }

    pub fn hidden(&self, t: usize) -> &[f64] {
        &self.hidden[(t - 1) * self.h_dim..t * self.h_dim]
    }

    /// `ŷ(t)`, the zero vector for `t ≤ 0`.
    pub fn output(&self, t: isize) -> &[f64] {
        if t <= 0 {
            &self.zeros
        } else {
            let t = t as usize;
            &self.outputs[(t - 1) * self.y_dim..t * self.y_dim]
        }
    }

    pub fn final_output(&self) -> &[f64] {
        self.output(self.tau as isize)
    }
}

/// One application of the recurrence. `feedbacks[i]` is `ŷ(t − l_i)` in
/// lag-set order (zero vectors for steps before the sequence start).
/// Writes `a`, `h`, `ŷ` into the given buffers.
pub fn forward_step_into(
    params: &ModelParams,
    x_t: &[f64],
    feedbacks: &[&[f64]],
    a: &mut [f64],
    h: &mut [f64],
    y_hat: &mut [f64],
    counter: &mut OpCounter,
) {
    let spec = &params.spec;
    let (hd, yd) = (spec.hidden_dim, spec.y_dim);
    for j in 0..hd {
        let mut acc = params.b[j];
        for (u, xv) in params.u.row(j).iter().zip(x_t) {
            acc += u * xv;
        }
        for (w, fb) in params.w.iter().zip(feedbacks) {
            for (wv, fv) in w.row(j).iter().zip(fb.iter()) {
                acc += wv * fv;
            }
        }
        a[j] = acc;
        h[j] = sigmoid(acc);
    }
    for k in 0..yd {
        let mut acc = params.c[k];
        for (vv, hv) in params.v.row(k).iter().zip(h.iter()) {
            acc += vv * hv;
        }
        y_hat[k] = acc;
    }
    counter.add_forward_macs(hd * (spec.x_dim + spec.p() * yd) + yd * hd);
}

/// Checked single step returning `(a, h, ŷ)`.
pub fn forward_step(
    params: &ModelParams,
    x_t: &[f64],
    feedbacks: &[&[f64]],
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let spec = &params.spec;
    if x_t.len() != spec.x_dim {
        return Err(Error::Dimension(format!(
            "input of length {} for x_dim {}",
            x_t.len(),
            spec.x_dim
        )));
    }
    if feedbacks.len() != spec.p() || feedbacks.iter().any(|f| f.len() != spec.y_dim) {
        return Err(Error::Dimension(format!(
            "expected {} feedback vectors of length {}",
            spec.p(),
            spec.y_dim
        )));
    }
    let mut a = vec![0.0; spec.hidden_dim];
    let mut h = vec![0.0; spec.hidden_dim];
    let mut y = vec![0.0; spec.y_dim];
    forward_step_into(
        params,
        x_t,
        feedbacks,
        &mut a,
        &mut h,
        &mut y,
        &mut OpCounter::new(),
    );
    Ok((a, h, y))
}

pub(crate) fn check_inputs(spec: &RnnSpec, xs: &[Vec<f64>]) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::InvalidArgument("empty input sequence".into()));
    }
    if let Some((t, x)) = xs.iter().enumerate().find(|(_, x)| x.len() != spec.x_dim) {
        return Err(Error::Dimension(format!(
            "input at step {} has length {} (x_dim {})",
            t + 1,
            x.len(),
            spec.x_dim
        )));
    }
    Ok(())
}

/// Runs the closed-loop recurrence over `xs` and records every step.
pub fn forward_sequence(params: &ModelParams, xs: &[Vec<f64>]) -> Result<ForwardTrace> {
    forward_sequence_counted(params, xs, &mut OpCounter::new())
}

pub fn forward_sequence_counted(
    params: &ModelParams,
    xs: &[Vec<f64>],
    counter: &mut OpCounter,
) -> Result<ForwardTrace> {
    let spec = &params.spec;
    check_inputs(spec, xs)?;
    let (hd, yd) = (spec.hidden_dim, spec.y_dim);
    let tau = xs.len();
    let mut trace = ForwardTrace {
        tau,
        h_dim: hd,
        y_dim: yd,
        pre_activations: vec![0.0; tau * hd],
        hidden: vec![0.0; tau * hd],
        outputs: vec![0.0; tau * yd],
        zeros: vec![0.0; yd],
    };
    let zeros = vec![0.0; yd];
    let mut y_t = vec![0.0; yd];
    for t in 1..=tau {
        {
            let feedbacks: Vec<&[f64]> = spec
                .lag_set
                .lags()
                .iter()
                .map(|&l| {
                    if t > l {
                        &trace.outputs[(t - l - 1) * yd..(t - l) * yd]
                    } else {
                        &zeros[..]
                    }
                })
                .collect();
            let (a, h) = (
                &mut trace.pre_activations[(t - 1) * hd..t * hd],
                &mut trace.hidden[(t - 1) * hd..t * hd],
            );
            forward_step_into(params, &xs[t - 1], &feedbacks, a, h, &mut y_t, counter);
        }
        if !crate::numerics::all_finite(&y_t) {
            return Err(Error::NonFinite {
                step: t,
                what: "network output",
            });
        }
        trace.outputs[(t - 1) * yd..t * yd].copy_from_slice(&y_t);
    }
    Ok(trace)
}

/// Final output `ŷ(τ)` only.
pub fn predict(params: &ModelParams, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
    Ok(forward_sequence(params, xs)?.final_output().to_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint<S> {
    pub spec: RnnSpec,
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
    pub state: S,
}

pub const CHECKPOINT_MAGIC: &str = "RNNP1";

impl<S: Serialize + DeserializeOwned> Checkpoint<S> {
    pub fn new(params: &ModelParams, state: S) -> Self {
        let flat = params.pack();
        Self {
            spec: params.spec.clone(),
            theta: flat.theta,
            phi: flat.phi,
            state,
        }
    }

    pub fn params(&self) -> Result<ModelParams> {
        self.spec.validate()?;
        ModelParams::unpack(
            &self.spec,
            &FlatParams {
                theta: self.theta.clone(),
                phi: self.phi.clone(),
            },
        )
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{CHECKPOINT_MAGIC}")?;
        serde_json::to_writer_pretty(&mut w, self)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(mut r: R) -> Result<Self> {
        let mut magic = String::new();
        r.read_line(&mut magic)?;
        if magic.trim_end() != CHECKPOINT_MAGIC {
            return Err(Error::Data(format!(
                "not an {CHECKPOINT_MAGIC} checkpoint (header {:?})",
                magic.trim_end()
            )));
        }
        let ck: Self = serde_json::from_reader(r)?;
        ck.params()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(lags: &[usize], x: usize, h: usize, y: usize) -> RnnSpec {
        RnnSpec::new(LagSet::new(lags.to_vec()).unwrap(), x, h, y).unwrap()
    }

    #[test]
    fn lag_set_validation() {
        assert!(LagSet::new(vec![]).is_err());
        assert!(LagSet::new(vec![0, 1]).is_err());
        assert!(LagSet::new(vec![2, 1]).is_err());
        assert!(LagSet::new(vec![1, 1]).is_err());
        let l: LagSet = "{1,2,24}".parse().unwrap();
        assert_eq!(l.lags(), &[1, 2, 24]);
        assert_eq!(l.to_string(), "{1,2,24}");
        assert_eq!(l.max_lag(), 24);
    }

    #[test]
    fn parameter_counts() {
        let s = spec(&[1, 2, 24], 13, 15, 2);
        assert_eq!(s.theta_len(), 300);
        assert_eq!(s.phi_len(), 32);
        assert_eq!(s.param_count(), 332);
        assert!(RnnSpec::new(LagSet::consecutive(1).unwrap(), 0, 1, 1).is_err());
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let s = spec(&[1, 2], 3, 4, 2);
        let a = ModelParams::init(&s, &mut Rng::new(5));
        let b = ModelParams::init(&s, &mut Rng::new(5));
        assert_eq!(a, b);
        assert!(a.b.iter().all(|&v| v == 0.0));
        assert!(a.c.iter().all(|&v| v == 0.0));
        let r = (6.0f64 / 7.0).sqrt();
        assert!(a.u.as_slice().iter().all(|v| v.abs() <= r));
    }

    #[test]
    fn zero_params_give_zero_output() {
        let s = spec(&[1], 2, 3, 1);
        let p = ModelParams::zeros(&s);
        let (_, h, y) = forward_step(&p, &[1.0, -1.0], &[&[0.4]]).unwrap();
        assert_eq!(y, vec![0.0]);
        assert!(h.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn constant_output_bias() {
        let s = spec(&[1, 3], 2, 3, 1);
        let mut p = ModelParams::zeros(&s);
        p.c[0] = 0.7;
        let xs: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, 1.0]).collect();
        let tr = forward_sequence(&p, &xs).unwrap();
        for t in 1..=6 {
            assert_eq!(tr.output(t), &[0.7]);
        }
    }

    #[test]
    fn sigmoid_of_zero_step() {
        let s = spec(&[1], 1, 1, 1);
        let mut p = ModelParams::zeros(&s);
        p.u[(0, 0)] = 2.0;
        p.v[(0, 0)] = 1.0;
        let (a, h, y) = forward_step(&p, &[0.0], &[&[0.0]]).unwrap();
        assert_eq!((a[0], h[0], y[0]), (0.0, 0.5, 0.5));
    }

    #[test]
    fn single_step_sequence_matches_forward_step() {
        let s = spec(&[1, 2], 3, 4, 2);
        let p = ModelParams::init(&s, &mut Rng::new(1));
        let x = vec![0.3, -0.2, 0.9];
        let tr = forward_sequence(&p, std::slice::from_ref(&x)).unwrap();
        let (_, _, y) = forward_step(&p, &x, &[&[0.0, 0.0], &[0.0, 0.0]]).unwrap();
        assert_eq!(tr.final_output(), &y[..]);
    }

    #[test]
    fn forward_errors() {
        let s = spec(&[1], 2, 3, 1);
        let p = ModelParams::zeros(&s);
        assert!(forward_sequence(&p, &[]).is_err());
        assert!(matches!(
            forward_sequence(&p, &[vec![1.0]]),
            Err(Error::Dimension(_))
        ));
        assert!(forward_step(&p, &[1.0, 2.0], &[]).is_err());
    }

    /// Independent step-by-step interpreter with explicit history vectors.
    fn reference_final(p: &ModelParams, xs: &[Vec<f64>]) -> Vec<f64> {
        let s = p.spec();
        let mut hist: Vec<Vec<f64>> = Vec::new();
        for (t, x) in xs.iter().enumerate() {
            let mut a = p.b.clone();
            for j in 0..s.hidden_dim {
                for m in 0..s.x_dim {
                    a[j] += p.u[(j, m)] * x[m];
                }
                for (i, &l) in s.lag_set.lags().iter().enumerate() {
                    if t >= l {
                        for k in 0..s.y_dim {
                            a[j] += p.w[i][(j, k)] * hist[t - l][k];
                        }
                    }
                }
            }
            let h: Vec<f64> = a.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();
            let y: Vec<f64> = (0..s.y_dim)
                .map(|k| p.c[k] + (0..s.hidden_dim).map(|j| p.v[(k, j)] * h[j]).sum::<f64>())
                .collect();
            hist.push(y);
        }
        hist.pop().unwrap()
    }

    #[test]
    fn matches_reference_interpreter() {
        for seed in 0..20 {
            let mut rng = Rng::new(seed);
            let s = spec(&[1, 2, 5], 3, 6, 2);
            let p = ModelParams::init(&s, &mut rng);
            let xs: Vec<Vec<f64>> = (0..11)
                .map(|_| crate::numerics::rand_uniform(&mut rng, -1.0, 1.0, 3).unwrap())
                .collect();
            let got = predict(&p, &xs).unwrap();
            let want = reference_final(&p, &xs);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12);
            }
            assert_eq!(
                forward_sequence(&p, &xs).unwrap(),
                forward_sequence(&p, &xs).unwrap()
            );
        }
    }

    #[test]
    fn single_lag_orbit() {
        // U = 0: ŷ(t) is the orbit of ŷ ↦ c + V·sigmoid(b + W ŷ) from 0
        let s = spec(&[1], 2, 3, 1);
        let mut p = ModelParams::init(&s, &mut Rng::new(9));
        p.u = Matrix::zeros(3, 2);
        p.b = vec![0.1, -0.2, 0.3];
        p.c = vec![0.05];
        let xs = vec![vec![0.5, 0.5]; 8];
        let tr = forward_sequence(&p, &xs).unwrap();
        let mut y = 0.0;
        for t in 1..=8 {
            let mut next = p.c[0];
            for j in 0..3 {
                next += p.v[(0, j)] * sigmoid(p.b[j] + p.w[0][(j, 0)] * y);
            }
            y = next;
            assert!((tr.output(t)[0] - y).abs() < 1e-15);
            assert!(tr.hidden(t as usize).iter().all(|&h| h > 0.0 && h < 1.0));
        }
    }

    #[test]
    fn packing_index_map() {
        let s = spec(&[1, 2], 2, 3, 2);
        let mut p = ModelParams::zeros(&s);
        p.u[(1, 1)] = 1.0;
        p.w[1][(2, 0)] = 2.0;
        p.b[2] = 3.0;
        p.v[(1, 2)] = 4.0;
        p.c[1] = 5.0;
        let f = p.pack();
        assert_eq!(s.theta_index_u(0, 0), 0);
        assert_eq!(f.theta[s.theta_index_u(1, 1)], 1.0);
        assert_eq!(f.theta[s.theta_index_w(1, 2, 0)], 2.0);
        assert_eq!(f.theta[s.theta_index_b(2)], 3.0);
        assert_eq!(f.phi[s.phi_index_v(1, 2)], 4.0);
        assert_eq!(f.phi[s.phi_index_c(1)], 5.0);
        assert_eq!(f.theta.iter().filter(|&&v| v != 0.0).count(), 3);
        assert!(ModelParams::unpack(
            &s,
            &FlatParams {
                theta: vec![0.0],
                phi: f.phi.clone()
            }
        )
        .is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let s = spec(&[1, 24], 13, 5, 2);
        let p = ModelParams::init(&s, &mut Rng::new(4));
        let ck = Checkpoint::new(&p, vec![0.1f64, 1.0 / 3.0]);
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        assert!(buf.starts_with(b"RNNP1\n"));
        let back: Checkpoint<Vec<f64>> = Checkpoint::read_from(&buf[..]).unwrap();
        assert_eq!(back.params().unwrap(), p);
        assert_eq!(back.state, ck.state);
        assert!(Checkpoint::<Vec<f64>>::read_from(&b"RNNP0\n{}"[..]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn pack_unpack_round_trip(seed in any::<u64>(), h in 1usize..6, y in 1usize..3, x in 1usize..5) {
                let s = spec(&[1, 3], x, h, y);
                let p = ModelParams::init(&s, &mut crate::numerics::Rng::new(seed));
                let f = p.pack();
                prop_assert_eq!(f.theta.len(), s.theta_len());
                prop_assert_eq!(f.phi.len(), s.phi_len());
                let back = ModelParams::unpack(&s, &f).unwrap();
                prop_assert_eq!(&back, &p);
                prop_assert_eq!(back.pack(), f);
            }
        }
    }
}
