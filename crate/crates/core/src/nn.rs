//! Fully connected ReLU networks used as ODE vector fields.
//!
//! Parameters live in one flat buffer. Layer `l` maps `widths[l]` inputs to
//! `widths[l + 1]` outputs and stores its weight matrix row-major
//! (`out x in`) followed by its bias. ReLU follows every layer except the
//! last. The ReLU derivative is taken as 0 at exactly 0.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::dynamics::Waveform;
use crate::error::{check_dim, Error, Result};
use crate::odesolve::{TangentField, VectorField};
use crate::rng;

pub const PARAMS_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NetShape(pub Vec<usize>);

impl NetShape {
    pub fn new(widths: impl Into<Vec<usize>>) -> Result<Self> {
        let s = NetShape(widths.into());
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.len() < 2 || self.0.iter().any(|&w| w == 0) {
            return Err(Error::Network(format!("invalid net shape {:?}", self.0)));
        }
        Ok(())
    }

    pub fn widths(&self) -> &[usize] {
        &self.0
    }

    pub fn n_layers(&self) -> usize {
        self.0.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.0[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.0.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.0.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Multiply-accumulates for one forward pass.
    pub fn macs(&self) -> usize {
        self.0.windows(2).map(|w| w[0] * w[1]).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    shape: NetShape,
    offsets: Vec<usize>,
    data: Vec<f64>,
}

fn layer_offsets(shape: &NetShape) -> Vec<usize> {
    let mut offs = Vec::with_capacity(shape.n_layers() + 1);
    let mut acc = 0;
    offs.push(0);
    for w in shape.0.windows(2) {
        acc += w[0] * w[1] + w[1];
        offs.push(acc);
    }
    offs
}

impl MlpParams {
    pub fn zeros(shape: NetShape) -> Result<Self> {
        shape.validate()?;
        let offsets = layer_offsets(&shape);
        let data = vec![0.0; shape.param_count()];
        Ok(Self { shape, offsets, data })
    }

    pub fn from_flat(shape: NetShape, data: Vec<f64>) -> Result<Self> {
        shape.validate()?;
        check_dim(shape.param_count(), data.len())?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Network("non-finite parameter".into()));
        }
        let offsets = layer_offsets(&shape);
        Ok(Self { shape, offsets, data })
    }

    /// Build from per-layer `(weights row-major, bias)` pairs.
    pub fn from_layers(layers: &[(Vec<Vec<f64>>, Vec<f64>)]) -> Result<Self> {
        let mut widths = Vec::new();
        let mut data = Vec::new();
        for (l, (w, b)) in layers.iter().enumerate() {
            let rows = w.len();
            let cols = w.first().map_or(0, Vec::len);
            if w.iter().any(|r| r.len() != cols) {
                return Err(Error::Network(format!("ragged weight matrix in layer {l}")));
            }
            check_dim(rows, b.len())?;
            if l == 0 {
                widths.push(cols);
            } else {
                check_dim(*widths.last().unwrap(), cols)?;
            }
            widths.push(rows);
            data.extend(w.iter().flatten());
            data.extend(b);
        }
        Self::from_flat(NetShape(widths), data)
    }

    pub fn zeros_like(&self) -> Self {
        Self { shape: self.shape.clone(), offsets: self.offsets.clone(), data: vec![0.0; self.data.len()] }
    }

    pub fn shape(&self) -> &NetShape {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn param_count(&self) -> usize {
        self.data.len()
    }

    pub fn n_layers(&self) -> usize {
        self.shape.n_layers()
    }

    /// `(out, in)` of layer `l`.
    pub fn layer_dims(&self, l: usize) -> (usize, usize) {
        (self.shape.0[l + 1], self.shape.0[l])
    }

    pub fn weights(&self, l: usize) -> &[f64] {
        let (o, i) = self.layer_dims(l);
        &self.data[self.offsets[l]..self.offsets[l] + o * i]
    }

    pub fn bias(&self, l: usize) -> &[f64] {
        let (o, i) = self.layer_dims(l);
        &self.data[self.offsets[l] + o * i..self.offsets[l + 1]]
    }

    pub fn weights_mut(&mut self, l: usize) -> &mut [f64] {
        let (o, i) = self.layer_dims(l);
        let start = self.offsets[l];
        &mut self.data[start..start + o * i]
    }

    pub fn bias_mut(&mut self, l: usize) -> &mut [f64] {
        let (o, i) = self.layer_dims(l);
        let (start, end) = (self.offsets[l] + o * i, self.offsets[l + 1]);
        &mut self.data[start..end]
    }

    pub(crate) fn layer_range(&self, l: usize) -> (usize, usize) {
        (self.offsets[l], self.offsets[l + 1])
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        mlp_forward(self, input)
    }

    pub fn to_file(&self) -> ParamsFile {
        ParamsFile {
            format_version: PARAMS_FORMAT_VERSION,
            cell_kind: None,
            shape: self.shape.0.clone(),
            layers: (0..self.n_layers())
                .map(|l| LayerRecord {
                    name: None,
                    rows: self.layer_dims(l).0,
                    cols: self.layer_dims(l).1,
                    weights: self.weights(l).to_vec(),
                    bias: self.bias(l).to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_file(file: &ParamsFile) -> Result<Self> {
        if file.format_version != PARAMS_FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported params format {}", file.format_version)));
        }
        if file.cell_kind.is_some() {
            return Err(Error::Format("file holds recurrent cell parameters, not an MLP".into()));
        }
        let shape = NetShape::new(file.shape.clone())?;
        check_dim(shape.n_layers(), file.layers.len())?;
        let mut data = Vec::with_capacity(shape.param_count());
        for (l, rec) in file.layers.iter().enumerate() {
            let (o, i) = (shape.0[l + 1], shape.0[l]);
            if rec.rows != o || rec.cols != i || rec.weights.len() != o * i || rec.bias.len() != o {
                return Err(Error::Format(format!("layer {l} does not match shape {:?}", shape.0)));
            }
            data.extend(&rec.weights);
            data.extend(&rec.bias);
        }
        Self::from_flat(shape, data)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("params serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_file(&serde_json::from_str(s)?)
    }
}

/// On-disk parameter document shared by MLPs and recurrent cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsFile {
    pub format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell_kind: Option<String>,
    pub shape: Vec<usize>,
    pub layers: Vec<LayerRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub rows: usize,
    pub cols: usize,
    /// Row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(shape: &NetShape, seed: u64) -> Result<MlpParams> {
    let mut p = MlpParams::zeros(shape.clone())?;
    let mut rng = rng::stream(seed, "nn-init");
    for l in 0..p.n_layers() {
        let (o, i) = p.layer_dims(l);
        glorot_fill(p.weights_mut(l), i, o, &mut rng);
    }
    Ok(p)
}

pub(crate) fn glorot_fill<R: Rng>(w: &mut [f64], fan_in: usize, fan_out: usize, rng: &mut R) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite glorot bound");
    for v in w {
        *v = dist.sample(rng);
    }
}

#[inline]
pub(crate) fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        *o = b[r] + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>();
    }
}

pub fn mlp_forward(p: &MlpParams, input: &[f64]) -> Result<Vec<f64>> {
    check_dim(p.shape.input_dim(), input.len())?;
    let mut cache = MlpCache::new(&p.shape);
    Ok(p.forward_cached(input, &mut cache).to_vec())
}

/// Per-evaluation activations kept for the reverse pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// `acts[l]` is the input of layer `l`; the last entry is the output.
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    delta: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn new(shape: &NetShape) -> Self {
        let acts = shape.0.iter().map(|&w| vec![0.0; w]).collect();
        let pre = shape.0[1..].iter().map(|&w| vec![0.0; w]).collect();
        let delta = shape.0.iter().map(|&w| vec![0.0; w]).collect();
        Self { acts, pre, delta }
    }

    pub fn output(&self) -> &[f64] {
        self.acts.last().unwrap()
    }
}

impl MlpParams {
    /// Forward pass recording activations. `input` length is not checked.
    pub fn forward_cached<'c>(&self, input: &[f64], cache: &'c mut MlpCache) -> &'c [f64] {
        cache.acts[0].copy_from_slice(input);
        let last = self.n_layers() - 1;
        for l in 0..self.n_layers() {
            let (head, tail) = cache.acts.split_at_mut(l + 1);
            let pre = &mut cache.pre[l];
            affine(self.weights(l), self.bias(l), &head[l], pre);
            let out = &mut tail[0];
            if l == last {
                out.copy_from_slice(pre);
            } else {
                for (o, z) in out.iter_mut().zip(pre.iter()) {
                    *o = z.max(0.0);
                }
            }
        }
        cache.output()
    }

    /// Reverse pass for the activations in `cache`: accumulates
    /// `cotangent^T d(out)/d(theta)` into `theta_grad` and writes
    /// `cotangent^T d(out)/d(input)` into `input_grad`.
    pub fn backward_cached(
        &self,
        cache: &mut MlpCache,
        cotangent: &[f64],
        theta_grad: &mut [f64],
        input_grad: &mut [f64],
    ) {
        let n = self.n_layers();
        cache.delta[n].copy_from_slice(cotangent);
        for l in (0..n).rev() {
            let (o, i) = self.layer_dims(l);
            {
                // Through the activation of layer l.
                let d = &mut cache.delta[l + 1];
                if l != n - 1 {
                    for (dv, z) in d.iter_mut().zip(&cache.pre[l]) {
                        if *z <= 0.0 {
                            *dv = 0.0;
                        }
                    }
                }
            }
            let (start, _) = self.layer_range(l);
            let (gw, gb) = theta_grad[start..start + o * i + o].split_at_mut(o * i);
            let x = &cache.acts[l];
            let (lower, upper) = cache.delta.split_at_mut(l + 1);
            let d = &upper[0];
            let w = self.weights(l);
            for r in 0..o {
                let dr = d[r];
                gb[r] += dr;
                if dr != 0.0 {
                    for (g, xv) in gw[r * i..(r + 1) * i].iter_mut().zip(x) {
                        *g += dr * xv;
                    }
                }
            }
            let dx = &mut lower[l];
            dx.fill(0.0);
            for r in 0..o {
                let dr = d[r];
                if dr != 0.0 {
                    for (g, wv) in dx.iter_mut().zip(&w[r * i..(r + 1) * i]) {
                        *g += dr * wv;
                    }
                }
            }
        }
        input_grad.copy_from_slice(&cache.delta[0]);
    }

    /// Forward-mode product `(d out / d input) v` at `input`.
    pub fn jvp_into(&self, input: &[f64], v: &[f64], cache: &mut MlpCache, out: &mut [f64]) {
        self.forward_cached(input, cache);
        // Reuse delta buffers for tangents.
        cache.delta[0].copy_from_slice(v);
        let n = self.n_layers();
        for l in 0..n {
            let (o, i) = self.layer_dims(l);
            let w = self.weights(l);
            let (lower, upper) = cache.delta.split_at_mut(l + 1);
            let tin = &lower[l];
            let tout = &mut upper[0];
            for r in 0..o {
                let mut s: f64 = w[r * i..(r + 1) * i].iter().zip(tin.iter()).map(|(a, b)| a * b).sum();
                if l != n - 1 && cache.pre[l][r] <= 0.0 {
                    s = 0.0;
                }
                tout[r] = s;
            }
        }
        out.copy_from_slice(&cache.delta[n]);
    }
}

/// Dense Jacobian `d out / d input`, row-major `out x in`.
pub fn mlp_jacobian_state(p: &MlpParams, input: &[f64]) -> Result<Vec<Vec<f64>>> {
    check_dim(p.shape.input_dim(), input.len())?;
    let (n_in, n_out) = (p.shape.input_dim(), p.shape.output_dim());
    let mut cache = MlpCache::new(&p.shape);
    let mut jac = vec![vec![0.0; n_in]; n_out];
    let mut e = vec![0.0; n_in];
    let mut col = vec![0.0; n_out];
    for j in 0..n_in {
        e.fill(0.0);
        e[j] = 1.0;
        p.jvp_into(input, &e, &mut cache, &mut col);
        for (r, c) in col.iter().enumerate() {
            jac[r][j] = *c;
        }
    }
    Ok(jac)
}

/// Vector-Jacobian product: `(theta gradient, input gradient)` of
/// `cotangent . forward(input)`.
pub fn mlp_vjp(p: &MlpParams, input: &[f64], cotangent: &[f64]) -> Result<(MlpParams, Vec<f64>)> {
    check_dim(p.shape.input_dim(), input.len())?;
    check_dim(p.shape.output_dim(), cotangent.len())?;
    let mut cache = MlpCache::new(&p.shape);
    p.forward_cached(input, &mut cache);
    let mut grad = p.zeros_like();
    let mut gin = vec![0.0; input.len()];
    p.backward_cached(&mut cache, cotangent, &mut grad.data, &mut gin);
    Ok((grad, gin))
}

/// What the network sees besides the state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FieldInput {
    /// Input is the state alone.
    Autonomous,
    /// Input is `[drive(t), state]`.
    Driven(Waveform),
}

/// `dh/dt = net(input(h, t))`.
#[derive(Debug, Clone)]
pub struct NeuralField<'p> {
    pub params: &'p MlpParams,
    pub input: FieldInput,
}

impl<'p> NeuralField<'p> {
    pub fn new(params: &'p MlpParams, input: FieldInput) -> Result<Self> {
        let extra = match input {
            FieldInput::Autonomous => 0,
            FieldInput::Driven(_) => 1,
        };
        let shape = params.shape();
        if shape.input_dim() != shape.output_dim() + extra {
            return Err(Error::Network(format!(
                "net {:?} cannot act as a vector field with {extra} drive input(s)",
                shape.0
            )));
        }
        Ok(Self { params, input })
    }

    pub fn autonomous(params: &'p MlpParams) -> Result<Self> {
        Self::new(params, FieldInput::Autonomous)
    }

    pub(crate) fn drive_count(&self) -> usize {
        match self.input {
            FieldInput::Autonomous => 0,
            FieldInput::Driven(_) => 1,
        }
    }

    pub(crate) fn fill_input(&self, t: f64, h: &[f64], x: &mut [f64]) {
        match self.input {
            FieldInput::Autonomous => x.copy_from_slice(h),
            FieldInput::Driven(w) => {
                x[0] = w.eval(t);
                x[1..].copy_from_slice(h);
            }
        }
    }

    pub fn new_cache(&self) -> NeuralCache {
        NeuralCache {
            mlp: MlpCache::new(self.params.shape()),
            input: vec![0.0; self.params.shape().input_dim()],
            input_grad: vec![0.0; self.params.shape().input_dim()],
            tangent: vec![0.0; self.params.shape().input_dim()],
        }
    }
}

#[derive(Debug, Clone)]
pub struct NeuralCache {
    pub(crate) mlp: MlpCache,
    pub(crate) input: Vec<f64>,
    pub(crate) input_grad: Vec<f64>,
    pub(crate) tangent: Vec<f64>,
}

impl VectorField for NeuralField<'_> {
    fn dim(&self) -> usize {
        self.params.shape().output_dim()
    }

    fn eval(&self, t: f64, h: &[f64], out: &mut [f64]) {
        let mut cache = self.new_cache();
        self.eval_with(t, h, out, &mut cache);
    }
}

impl NeuralField<'_> {
    pub fn eval_with(&self, t: f64, h: &[f64], out: &mut [f64], cache: &mut NeuralCache) {
        self.fill_input(t, h, &mut cache.input);
        let NeuralCache { mlp, input, .. } = cache;
        out.copy_from_slice(self.params.forward_cached(input, mlp));
    }
}

impl TangentField for NeuralField<'_> {
    fn jvp(&self, t: f64, h: &[f64], v: &[f64], out: &mut [f64]) {
        let mut cache = self.new_cache();
        self.fill_input(t, h, &mut cache.input);
        let k = self.drive_count();
        cache.tangent[..k].fill(0.0);
        cache.tangent[k..].copy_from_slice(v);
        let NeuralCache { mlp, input, tangent, .. } = &mut cache;
        self.params.jvp_into(input, tangent, mlp, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_params(widths: &[usize], seed: u64) -> MlpParams {
        let mut p = init_params(&NetShape(widths.to_vec()), seed).unwrap();
        let mut r = rng::stream(seed, "bias");
        for l in 0..p.n_layers() {
            for b in p.bias_mut(l) {
                *b = r.random_range(-0.5..0.5);
            }
        }
        p
    }

    #[test]
    fn forward_examples() {
        let z = MlpParams::zeros(NetShape(vec![3, 4, 2])).unwrap();
        assert_eq!(z.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
        let single = MlpParams::from_layers(&[(vec![vec![2.0]], vec![1.0])]).unwrap();
        assert_eq!(single.forward(&[3.0]).unwrap(), vec![7.0]);
        let two = MlpParams::from_layers(&[
            (vec![vec![1.0], vec![-1.0]], vec![0.0, 0.0]),
            (vec![vec![1.0, 1.0]], vec![0.0]),
        ])
        .unwrap();
        assert_eq!(two.forward(&[-2.0]).unwrap(), vec![2.0]);
        assert!(matches!(two.forward(&[1.0, 2.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn jacobian_examples() {
        let id = MlpParams::from_layers(&[(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0])]).unwrap();
        assert_eq!(mlp_jacobian_state(&id, &[0.3, -4.0]).unwrap(), vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        // Every hidden unit sees a negative pre-activation.
        let dead = MlpParams::from_layers(&[
            (vec![vec![1.0, 1.0], vec![2.0, 0.5]], vec![-100.0, -100.0]),
            (vec![vec![1.0, -1.0]], vec![0.5]),
        ])
        .unwrap();
        assert_eq!(mlp_jacobian_state(&dead, &[1.0, 2.0]).unwrap(), vec![vec![0.0, 0.0]]);
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let p = random_params(&[3, 7, 5, 2], 11);
        let x = [0.4, -0.7, 1.1];
        let jac = mlp_jacobian_state(&p, &x).unwrap();
        let h = 1e-5;
        for j in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            let fp = p.forward(&xp).unwrap();
            let fm = p.forward(&xm).unwrap();
            for r in 0..2 {
                let fd = (fp[r] - fm[r]) / (2.0 * h);
                assert!((jac[r][j] - fd).abs() <= 1e-5 * fd.abs().max(1.0), "{} vs {fd}", jac[r][j]);
            }
        }
    }

    #[test]
    fn vjp_examples() {
        let p = random_params(&[2, 6, 3], 5);
        let (g, gin) = mlp_vjp(&p, &[0.5, -0.2], &[0.0; 3]).unwrap();
        assert!(g.data().iter().all(|v| *v == 0.0));
        assert!(gin.iter().all(|v| *v == 0.0));

        let single = MlpParams::from_layers(&[(vec![vec![1.0, 2.0], vec![3.0, 4.0]], vec![0.1, 0.2])]).unwrap();
        let (g, _) = mlp_vjp(&single, &[5.0, -1.0], &[2.0, -3.0]).unwrap();
        assert_eq!(g.weights(0), &[10.0, -2.0, -15.0, 3.0]);
        assert_eq!(g.bias(0), &[2.0, -3.0]);
        assert!(mlp_vjp(&single, &[5.0, -1.0], &[2.0]).is_err());
    }

    #[test]
    fn vjp_matches_finite_difference_directions() {
        let p = random_params(&[3, 8, 8, 2], 21);
        let x = [0.3, 0.9, -0.4];
        let c = [0.7, -1.3];
        let (g, _) = mlp_vjp(&p, &x, &c).unwrap();
        let mut r = rng::stream(4, "dir");
        for _ in 0..5 {
            let dir: Vec<f64> = (0..p.param_count()).map(|_| r.random_range(-1.0..1.0)).collect();
            let h = 1e-5;
            let shift = |s: f64| {
                let data: Vec<f64> = p.data().iter().zip(&dir).map(|(a, d)| a + s * d).collect();
                let q = MlpParams::from_flat(p.shape().clone(), data).unwrap();
                let y = q.forward(&x).unwrap();
                y.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>()
            };
            let fd = (shift(h) - shift(-h)) / (2.0 * h);
            let an: f64 = g.data().iter().zip(&dir).map(|(a, b)| a * b).sum();
            assert!((an - fd).abs() <= 1e-5 * fd.abs().max(1.0), "{an} vs {fd}");
        }
    }

    #[test]
    fn init_examples() {
        let shape = NetShape::new(vec![2, 14, 14, 1]).unwrap();
        assert_eq!(shape.param_count(), 267);
        let a = init_params(&shape, 9).unwrap();
        assert_eq!(a, init_params(&shape, 9).unwrap());
        assert_ne!(a, init_params(&shape, 10).unwrap());
        for l in 0..a.n_layers() {
            assert!(a.bias(l).iter().all(|b| *b == 0.0));
            let (o, i) = a.layer_dims(l);
            let lim = (6.0 / (o + i) as f64).sqrt();
            assert!(a.weights(l).iter().all(|w| w.abs() <= lim));
        }
        assert!(NetShape::new(vec![3]).is_err());
        assert!(NetShape::new(vec![3, 0, 1]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let p = random_params(&[6, 5, 6], 3);
        let back = MlpParams::from_json(&p.to_json()).unwrap();
        assert_eq!(p, back);
        let mut f = p.to_file();
        f.format_version = 99;
        assert!(MlpParams::from_file(&f).is_err());
    }

    #[test]
    fn neural_field_shapes() {
        let p = init_params(&NetShape(vec![2, 14, 14, 1]), 1).unwrap();
        assert!(NeuralField::new(&p, FieldInput::Driven(Waveform::sine(1.0, 1.0))).is_ok());
        assert!(NeuralField::autonomous(&p).is_err());
    }

    proptest! {
        #[test]
        fn positive_homogeneity_without_biases(x in prop::collection::vec(-3.0f64..3.0, 4), alpha in 0.01f64..10.0) {
            let p = init_params(&NetShape(vec![4, 9, 9, 3]), 77).unwrap();
            let y = p.forward(&x).unwrap();
            let xs: Vec<f64> = x.iter().map(|v| v * alpha).collect();
            let ys = p.forward(&xs).unwrap();
            for (a, b) in ys.iter().zip(&y) {
                prop_assert!((a - alpha * b).abs() <= 1e-12 * (alpha * b.abs()).max(1.0));
            }
        }

        #[test]
        fn vjp_consistent_with_jacobian(x in prop::collection::vec(-2.0f64..2.0, 3), c in prop::collection::vec(-2.0f64..2.0, 2)) {
            let p = random_params(&[3, 6, 2], 13);
            let jac = mlp_jacobian_state(&p, &x).unwrap();
            let (_, gin) = mlp_vjp(&p, &x, &c).unwrap();
            for j in 0..3 {
                let cj: f64 = (0..2).map(|r| c[r] * jac[r][j]).sum();
                prop_assert!((cj - gin[j]).abs() <= 1e-12 * cj.abs().max(1.0));
            }
        }
    }
}
