//! Small tanh multilayer perceptron with exact input derivatives and exact
//! parameter gradients of losses built from them.
//!
//! Input derivatives are computed by pushing, alongside every activation, its
//! first directional derivative along each requested input axis and (where
//! asked for) the second one. Parameter gradients come from one reverse sweep
//! through that extended forward pass, so losses that involve `d2u/dx2` are
//! differentiated exactly. Everything runs in `f64`.

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Points per reduction chunk. Chunks are reduced in index order, so results
/// do not depend on the number of worker threads.
const CHUNK: usize = 32;

/// Shape of the network: `input_dim -> hidden_width x hidden_layers -> 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSpec {
    pub input_dim: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub output_dim: usize,
}

impl NetSpec {
    /// Network for a `dim`-dimensional problem: inputs are the space
    /// coordinates, time, load factor, ambient and top-oil temperatures.
    pub fn for_dim(dim: usize, hidden_layers: usize, hidden_width: usize) -> Self {
        Self {
            input_dim: dim + 4,
            hidden_layers,
            hidden_width,
            output_dim: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.output_dim != 1 {
            return Err(Error::Argument(format!(
                "output_dim must be 1, got {}",
                self.output_dim
            )));
        }
        if self.input_dim == 0 || self.hidden_layers == 0 || self.hidden_width == 0 {
            return Err(Error::Argument(format!("degenerate network shape {self:?}")));
        }
        Ok(())
    }

    /// Layer widths including input and output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim];
        w.extend(std::iter::repeat_n(self.hidden_width, self.hidden_layers));
        w.push(self.output_dim);
        w
    }

    pub fn param_count(&self) -> usize {
        self.widths().windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct LayerShape {
    fan_in: usize,
    fan_out: usize,
    w_off: usize,
    b_off: usize,
}

/// Trainable weights and biases stored in one flat vector.
///
/// Layer `l` owns a row-major `fan_out x fan_in` weight block followed by its
/// bias vector; [`NetworkParams::weights`] and [`NetworkParams::bias`] are
/// views into the flat storage.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    spec: NetSpec,
    layers: Vec<LayerShape>,
    flat: Vec<f64>,
}

fn layout(spec: &NetSpec) -> Vec<LayerShape> {
    let mut off = 0;
    spec.widths()
        .windows(2)
        .map(|w| {
            let s = LayerShape {
                fan_in: w[0],
                fan_out: w[1],
                w_off: off,
                b_off: off + w[0] * w[1],
            };
            off += w[1] * (w[0] + 1);
            s
        })
        .collect()
}

impl NetworkParams {
    pub fn zeros(spec: NetSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            layers: layout(&spec),
            flat: vec![0.0; spec.param_count()],
            spec,
        })
    }

    pub fn from_flat(spec: NetSpec, flat: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if flat.len() != spec.param_count() {
            return Err(Error::Argument(format!(
                "expected {} parameters, got {}",
                spec.param_count(),
                flat.len()
            )));
        }
        Ok(Self {
            layers: layout(&spec),
            flat,
            spec,
        })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.flat
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.flat
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.flat
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    /// Row-major `fan_out x fan_in` weights of layer `l`.
    pub fn weights(&self, l: usize) -> &[f64] {
        let s = self.layers[l];
        &self.flat[s.w_off..s.b_off]
    }

    pub fn weights_mut(&mut self, l: usize) -> &mut [f64] {
        let s = self.layers[l];
        &mut self.flat[s.w_off..s.b_off]
    }

    pub fn bias(&self, l: usize) -> &[f64] {
        let s = self.layers[l];
        &self.flat[s.b_off..s.b_off + s.fan_out]
    }

    pub fn bias_mut(&mut self, l: usize) -> &mut [f64] {
        let s = self.layers[l];
        &mut self.flat[s.b_off..s.b_off + s.fan_out]
    }

    /// Offset of layer `l`'s bias block in the flat vector.
    pub fn bias_offset(&self, l: usize) -> usize {
        self.layers[l].b_off
    }
}

/// Xavier-uniform weights (`+-sqrt(6 / (fan_in + fan_out))`), zero biases.
pub fn init_xavier(spec: NetSpec, seed: u64) -> Result<NetworkParams> {
    let mut p = NetworkParams::zeros(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for l in 0..p.n_layers() {
        let s = p.layers[l];
        let bound = (6.0 / (s.fan_in + s.fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        for w in p.weights_mut(l) {
            *w = dist.sample(&mut rng);
        }
    }
    Ok(p)
}

/// Network output at a (standardized) input vector.
pub fn forward(p: &NetworkParams, z: &[f64]) -> Result<f64> {
    check_input(p, z)?;
    let mut cur = z.to_vec();
    let last = p.n_layers() - 1;
    for l in 0..=last {
        let s = p.layers[l];
        let w = p.weights(l);
        let b = p.bias(l);
        let mut next = vec![0.0; s.fan_out];
        for (o, v) in next.iter_mut().enumerate() {
            let row = &w[o * s.fan_in..(o + 1) * s.fan_in];
            let acc = row.iter().zip(&cur).map(|(a, b)| a * b).sum::<f64>() + b[o];
            *v = if l == last { acc } else { acc.tanh() };
        }
        cur = next;
    }
    Ok(cur[0])
}

fn check_input(p: &NetworkParams, z: &[f64]) -> Result<()> {
    if z.len() != p.spec.input_dim {
        return Err(Error::Argument(format!(
            "input has length {}, network expects {}",
            z.len(),
            p.spec.input_dim
        )));
    }
    Ok(())
}

/// Input axes along which derivatives are propagated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Directions {
    axes: Vec<usize>,
    second: Vec<bool>,
}

impl Directions {
    pub fn none() -> Self {
        Self {
            axes: vec![],
            second: vec![],
        }
    }

    /// `first_only` axes get a first derivative, `with_second` axes a first
    /// and a pure second derivative.
    pub fn new(first_only: &[usize], with_second: &[usize]) -> Self {
        let mut axes = first_only.to_vec();
        let mut second = vec![false; first_only.len()];
        axes.extend_from_slice(with_second);
        second.extend(std::iter::repeat_n(true, with_second.len()));
        Self { axes, second }
    }

    pub fn len(&self) -> usize {
        self.axes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.axes.is_empty()
    }

    pub fn axes(&self) -> &[usize] {
        &self.axes
    }

    fn n_second(&self) -> usize {
        self.second.iter().filter(|&&s| s).count()
    }

    fn validate(&self, input_dim: usize) -> Result<()> {
        for (k, &a) in self.axes.iter().enumerate() {
            if a >= input_dim {
                return Err(Error::Argument(format!(
                    "derivative axis {a} out of range for {input_dim} inputs"
                )));
            }
            if self.axes[..k].contains(&a) {
                return Err(Error::Argument(format!("derivative axis {a} listed twice")));
            }
        }
        Ok(())
    }
}

/// Output value and its directional derivatives, ordered as the axes of the
/// [`Directions`] used to compute them. `d2` has one entry per axis; entries
/// for first-only axes are zero.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawJet {
    pub value: f64,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
}

impl RawJet {
    pub fn zeros(n: usize) -> Self {
        Self {
            value: 0.0,
            d1: vec![0.0; n],
            d2: vec![0.0; n],
        }
    }
}

/// Input slots carrying time and the space coordinates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JetSlots {
    pub t: usize,
    pub space: Vec<usize>,
}

impl JetSlots {
    /// Slot layout `[x, (y), t, K, T_a, T_o]` used by the PINN.
    pub fn standard(dim: usize) -> Self {
        Self {
            t: dim,
            space: (0..dim).collect(),
        }
    }

    pub fn directions(&self) -> Directions {
        Directions::new(&[self.t], &self.space)
    }
}

/// Output with the derivatives needed by the heat-equation residual.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    pub u: f64,
    pub du_dt: f64,
    pub grad_x: Vec<f64>,
    /// Sum of the pure second derivatives over the space slots.
    pub lap_x: f64,
}

impl Jet {
    fn from_raw(raw: &RawJet) -> Self {
        Self {
            u: raw.value,
            du_dt: raw.d1[0],
            grad_x: raw.d1[1..].to_vec(),
            lap_x: raw.d2[1..].iter().sum(),
        }
    }
}

/// Forward-mode tape of one point: per layer the pre-activations and
/// activations of every stream (value, first derivatives, second derivatives).
struct Tape {
    /// Number of streams: 1 + axes + second axes.
    streams: usize,
    /// `acts[l]` are the inputs of layer `l`; `acts[n_layers]` is the output.
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    /// Stream index of the second derivative for each axis, if any.
    second_of: Vec<Option<usize>>,
    // backward scratch
    adj_a: Vec<Vec<f64>>,
    adj_z: Vec<f64>,
}

impl Tape {
    fn new(p: &NetworkParams, dirs: &Directions) -> Self {
        let nd = dirs.len();
        let streams = 1 + nd + dirs.n_second();
        let mut second_of = Vec::with_capacity(nd);
        let mut next = 1 + nd;
        for &s in &dirs.second {
            second_of.push(if s {
                next += 1;
                Some(next - 1)
            } else {
                None
            });
        }
        let widths = p.spec.widths();
        Self {
            streams,
            acts: widths.iter().map(|&w| vec![0.0; streams * w]).collect(),
            pre: widths[1..].iter().map(|&w| vec![0.0; streams * w]).collect(),
            second_of,
            adj_a: widths.iter().map(|&w| vec![0.0; streams * w]).collect(),
            adj_z: vec![0.0; streams * widths.iter().max().copied().unwrap_or(1)],
        }
    }

    fn run(&mut self, p: &NetworkParams, dirs: &Directions, z: &[f64]) -> RawJet {
        let nd = dirs.len();
        let s_count = self.streams;
        let input = &mut self.acts[0];
        let n_in = z.len();
        input.iter_mut().for_each(|v| *v = 0.0);
        input[..n_in].copy_from_slice(z);
        for (d, &axis) in dirs.axes.iter().enumerate() {
            input[(1 + d) * n_in + axis] = 1.0;
        }

        let last = p.n_layers() - 1;
        for l in 0..=last {
            let s = p.layers[l];
            let w = p.weights(l);
            let b = p.bias(l);
            let (head, tail) = self.acts.split_at_mut(l + 1);
            let a_in = &head[l];
            let a_out = &mut tail[0];
            let zs = &mut self.pre[l];
            for st in 0..s_count {
                let src = &a_in[st * s.fan_in..(st + 1) * s.fan_in];
                let dst = &mut zs[st * s.fan_out..(st + 1) * s.fan_out];
                for (o, v) in dst.iter_mut().enumerate() {
                    let row = &w[o * s.fan_in..(o + 1) * s.fan_in];
                    let mut acc = 0.0;
                    for (wi, ai) in row.iter().zip(src) {
                        acc += wi * ai;
                    }
                    *v = acc;
                }
                if st == 0 {
                    for (v, bi) in dst.iter_mut().zip(b) {
                        *v += bi;
                    }
                }
            }
            if l == last {
                a_out.copy_from_slice(zs);
                continue;
            }
            let fo = s.fan_out;
            for o in 0..fo {
                let a = zs[o].tanh();
                let s1 = 1.0 - a * a;
                let s2 = -2.0 * a * s1;
                a_out[o] = a;
                for d in 0..nd {
                    let zd = zs[(1 + d) * fo + o];
                    a_out[(1 + d) * fo + o] = s1 * zd;
                    if let Some(k) = self.second_of[d] {
                        a_out[k * fo + o] = s2 * zd * zd + s1 * zs[k * fo + o];
                    }
                }
            }
        }
        let out = &self.acts[last + 1];
        let mut jet = RawJet::zeros(nd);
        jet.value = out[0];
        for d in 0..nd {
            jet.d1[d] = out[1 + d];
            if let Some(k) = self.second_of[d] {
                jet.d2[d] = out[k];
            }
        }
        jet
    }

    /// Accumulates `seed . d(jet)/d(params)` into `grad`.
    fn backward(&mut self, p: &NetworkParams, dirs: &Directions, seed: &RawJet, grad: &mut [f64]) {
        let nd = dirs.len();
        let s_count = self.streams;
        let last = p.n_layers() - 1;
        // output layer is the identity: adjoint of z equals the seed
        {
            let z = &mut self.adj_z[..s_count];
            z.iter_mut().for_each(|v| *v = 0.0);
            z[0] = seed.value;
            for d in 0..nd {
                z[1 + d] = seed.d1[d];
                if let Some(k) = self.second_of[d] {
                    z[k] = seed.d2[d];
                }
            }
        }
        for l in (0..=last).rev() {
            let s = p.layers[l];
            let (fi, fo) = (s.fan_in, s.fan_out);
            let w = p.weights(l);
            let a_in = &self.acts[l];
            let adj_z = &self.adj_z[..s_count * fo];
            // parameter adjoints
            {
                let gw = &mut grad[s.w_off..s.b_off];
                for st in 0..s_count {
                    let zbar = &adj_z[st * fo..(st + 1) * fo];
                    let a = &a_in[st * fi..(st + 1) * fi];
                    for (o, &zb) in zbar.iter().enumerate() {
                        if zb == 0.0 {
                            continue;
                        }
                        let row = &mut gw[o * fi..(o + 1) * fi];
                        for (g, ai) in row.iter_mut().zip(a) {
                            *g += zb * ai;
                        }
                    }
                }
                let gb = &mut grad[s.b_off..s.b_off + fo];
                for (g, zb) in gb.iter_mut().zip(&adj_z[..fo]) {
                    *g += zb;
                }
            }
            if l == 0 {
                break;
            }
            // adjoint of this layer's inputs: W^T zbar per stream
            let abar = &mut self.adj_a[l];
            abar.iter_mut().for_each(|v| *v = 0.0);
            for st in 0..s_count {
                let zbar = &adj_z[st * fo..(st + 1) * fo];
                let dst = &mut abar[st * fi..(st + 1) * fi];
                for (o, &zb) in zbar.iter().enumerate() {
                    if zb == 0.0 {
                        continue;
                    }
                    let row = &w[o * fi..(o + 1) * fi];
                    for (dv, wi) in dst.iter_mut().zip(row) {
                        *dv += zb * wi;
                    }
                }
            }
            // through tanh of layer l-1
            let zs = &self.pre[l - 1];
            let a_act = &self.acts[l];
            let n = fi;
            let out = &mut self.adj_z[..s_count * n];
            for o in 0..n {
                let a = a_act[o];
                let s1 = 1.0 - a * a;
                let s2 = -2.0 * a * s1;
                let s3 = s1 * (6.0 * a * a - 2.0);
                let mut zbar_val = abar[o] * s1;
                for d in 0..nd {
                    let zd = zs[(1 + d) * n + o];
                    let ad = abar[(1 + d) * n + o];
                    zbar_val += ad * s2 * zd;
                    let mut zbar_d = ad * s1;
                    if let Some(k) = self.second_of[d] {
                        let add = abar[k * n + o];
                        let zdd = zs[k * n + o];
                        zbar_val += add * (s3 * zd * zd + s2 * zdd);
                        zbar_d += add * 2.0 * s2 * zd;
                        out[k * n + o] = add * s1;
                    }
                    out[(1 + d) * n + o] = zbar_d;
                }
                out[o] = zbar_val;
            }
        }
    }
}

/// Output value and directional derivatives along `dirs`.
pub fn raw_jet(p: &NetworkParams, z: &[f64], dirs: &Directions) -> Result<RawJet> {
    check_input(p, z)?;
    dirs.validate(p.spec.input_dim)?;
    let mut tape = Tape::new(p, dirs);
    Ok(tape.run(p, dirs, z))
}

/// Value, time derivative, spatial gradient and Laplacian with respect to the
/// given input slots.
pub fn input_jet(p: &NetworkParams, z: &[f64], slots: &JetSlots) -> Result<Jet> {
    let dirs = slots.directions();
    Ok(Jet::from_raw(&raw_jet(p, z, &dirs)?))
}

/// Loss that is a sum of per-point terms, each a function of the network jet
/// at that point.
pub trait BatchLoss: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Standardized network input of point `i`.
    fn input(&self, i: usize) -> &[f64];

    /// Loss term of point `i` and its partial derivatives with respect to
    /// the jet entries.
    fn term(&self, i: usize, jet: &RawJet) -> (f64, RawJet);
}

/// Loss value of a batch, summed in index order.
pub fn batch_loss(p: &NetworkParams, dirs: &Directions, loss: &dyn BatchLoss) -> Result<f64> {
    dirs.validate(p.spec.input_dim)?;
    let chunks: Vec<Result<f64>> = (0..loss.len().div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut tape = Tape::new(p, dirs);
            let mut acc = 0.0;
            for i in c * CHUNK..((c + 1) * CHUNK).min(loss.len()) {
                let z = loss.input(i);
                check_input(p, z)?;
                let jet = tape.run(p, dirs, z);
                let (v, _) = loss.term(i, &jet);
                if !v.is_finite() {
                    return Err(non_finite(i, v));
                }
                acc += v;
            }
            Ok(acc)
        })
        .collect();
    let mut total = 0.0;
    for c in chunks {
        total += c?;
    }
    Ok(total)
}

fn non_finite(i: usize, v: f64) -> Error {
    Error::Numeric {
        index: i,
        what: format!("loss term is {v}"),
    }
}

/// Loss value and its exact gradient with respect to every parameter.
pub fn param_gradient(
    p: &NetworkParams,
    dirs: &Directions,
    loss: &dyn BatchLoss,
) -> Result<(f64, Vec<f64>)> {
    dirs.validate(p.spec.input_dim)?;
    let n_params = p.len();
    let chunks: Vec<Result<(f64, Vec<f64>)>> = (0..loss.len().div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut tape = Tape::new(p, dirs);
            let mut grad = vec![0.0; n_params];
            let mut acc = 0.0;
            for i in c * CHUNK..((c + 1) * CHUNK).min(loss.len()) {
                let z = loss.input(i);
                check_input(p, z)?;
                let jet = tape.run(p, dirs, z);
                let (v, seed) = loss.term(i, &jet);
                if !v.is_finite() {
                    return Err(non_finite(i, v));
                }
                acc += v;
                tape.backward(p, dirs, &seed, &mut grad);
            }
            Ok((acc, grad))
        })
        .collect();
    let mut total = 0.0;
    let mut grad = vec![0.0; n_params];
    for c in chunks {
        let (v, g) = c?;
        total += v;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok((total, grad))
}
