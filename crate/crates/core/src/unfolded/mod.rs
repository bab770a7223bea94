//! The unfolded projected-gradient network.
//!
//! Each of the K layers repeats one projected update with its own learned
//! coefficient pair `(delta1, delta2)` weighting the `(Psi, Phi)` gradient
//! components:
//!
//! ```text
//! p  <-  proj_[0, p_max] ( p - (delta1 * Psi + delta2 * Phi) )
//! ```
//!
//! `delta1 in [-1, 0]` and `delta2 in [0, 1]` keep the learned combination
//! on the same side as the true gradient `-Psi + Phi`, so initializing
//! every layer at `(-lambda, +lambda)` makes the untrained network replay
//! the fixed-step iteration exactly. An alternative layer variant replaces
//! the affine combination with a small per-layer ReLU MLP mapping
//! `[p, Psi, Phi]` to the next power vector, clamped at the output.
//!
//! Reverse-mode differentiation through the whole unroll (including the
//! projection subgradient and the dependence of `Psi`/`Phi` on `p`) is
//! implemented by hand against cached per-layer intermediates; training is
//! plain Adam on the negative mean sum rate of the forward outputs.

mod adam;
mod train;

pub use adam::{adam_step, AdamState};
pub use train::{
    train_offline, train_online, OnlineSchedule, TrainConfig, TrainHistory, TrainedParamsDoc,
};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelMatrix;
use crate::error::{Error, Result};
use crate::objective::{
    psi_phi, psi_phi_vjp, step_raw, sum_rate, GradDecomposition, PowerVector,
};

/// Layer architecture of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Two learned scalars per layer weighting `(Psi, Phi)`.
    ScalarStep,
    /// A per-layer dense network `3N -> hidden -> hidden -> N` with ReLU
    /// activations and an output clamp.
    MlpLayer,
}

/// Architecture summary used wherever a network has to be built.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnfoldedArch {
    pub n_layers: usize,
    pub variant: Variant,
    /// Hidden width of the MLP variant; ignored for scalar steps.
    pub hidden_width: usize,
}

impl Default for UnfoldedArch {
    fn default() -> Self {
        Self {
            n_layers: 40,
            variant: Variant::ScalarStep,
            hidden_width: 64,
        }
    }
}

impl UnfoldedArch {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 {
            return Err(Error::InvalidConfig("dupgd.n_layers must be >= 1".into()));
        }
        if matches!(self.variant, Variant::MlpLayer) && self.hidden_width == 0 {
            return Err(Error::InvalidConfig(
                "dupgd.hidden_width must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Dense weights of one MLP layer, row-major. Also serves as the gradient
/// container of the same shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpWeights {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub w3: Vec<f64>,
    pub b3: Vec<f64>,
}

impl MlpWeights {
    fn zeros(n_links: usize, hidden: usize) -> Self {
        let input = 3 * n_links;
        Self {
            w1: vec![0.0; hidden * input],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden * hidden],
            b2: vec![0.0; hidden],
            w3: vec![0.0; n_links * hidden],
            b3: vec![0.0; n_links],
        }
    }

    fn hidden(&self) -> usize {
        self.b1.len()
    }

    fn n_links(&self) -> usize {
        self.b3.len()
    }

    fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len() + self.w3.len() + self.b3.len()
    }

    fn for_each_slice<'a>(&'a self, mut f: impl FnMut(&'a [f64])) {
        f(&self.w1);
        f(&self.b1);
        f(&self.w2);
        f(&self.b2);
        f(&self.w3);
        f(&self.b3);
    }

    fn for_each_slice_mut(&mut self, mut f: impl FnMut(&mut [f64])) {
        f(&mut self.w1);
        f(&mut self.b1);
        f(&mut self.w2);
        f(&mut self.b2);
        f(&mut self.w3);
        f(&mut self.b3);
    }
}

/// Learned parameters of the unrolled network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnfoldedParams {
    pub n_layers: usize,
    pub variant: Variant,
    /// Per-layer weight on `Psi`, each in `[-1, 0]`.
    pub delta1: Vec<f64>,
    /// Per-layer weight on `Phi`, each in `[0, 1]`.
    pub delta2: Vec<f64>,
    /// Dense weights, present exactly for the MLP variant.
    pub mlp: Option<Vec<MlpWeights>>,
}

impl UnfoldedParams {
    pub fn trainable_count(&self) -> usize {
        match self.variant {
            Variant::ScalarStep => 2 * self.n_layers,
            Variant::MlpLayer => self
                .mlp
                .as_ref()
                .map(|layers| layers.iter().map(MlpWeights::param_count).sum())
                .unwrap_or(0),
        }
    }

    /// Trainable parameters in a fixed order: `delta1 ++ delta2` for the
    /// scalar variant, per-layer `[w1, b1, w2, b2, w3, b3]` for the MLP.
    pub fn flatten_trainables(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.trainable_count());
        match self.variant {
            Variant::ScalarStep => {
                out.extend_from_slice(&self.delta1);
                out.extend_from_slice(&self.delta2);
            }
            Variant::MlpLayer => {
                if let Some(layers) = &self.mlp {
                    for layer in layers {
                        layer.for_each_slice(|s| out.extend_from_slice(s));
                    }
                }
            }
        }
        out
    }

    /// Writes back a vector produced by [`flatten_trainables`]. Raw setter:
    /// range clamping is the optimizer step's job.
    pub fn write_trainables(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.trainable_count() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} trainables, got {}",
                self.trainable_count(),
                values.len()
            )));
        }
        let mut cursor = 0;
        let mut take = |dst: &mut [f64]| {
            dst.copy_from_slice(&values[cursor..cursor + dst.len()]);
            cursor += dst.len();
        };
        match self.variant {
            Variant::ScalarStep => {
                take(&mut self.delta1);
                take(&mut self.delta2);
            }
            Variant::MlpLayer => {
                if let Some(layers) = &mut self.mlp {
                    for layer in layers {
                        layer.for_each_slice_mut(&mut take);
                    }
                }
            }
        }
        Ok(())
    }

    /// Clamps the step coefficients back into their ranges.
    pub fn clamp_deltas(&mut self) {
        for d in &mut self.delta1 {
            *d = d.clamp(-1.0, 0.0);
        }
        for d in &mut self.delta2 {
            *d = d.clamp(0.0, 1.0);
        }
    }

    pub fn deltas_in_range(&self) -> bool {
        self.delta1.iter().all(|d| (-1.0..=0.0).contains(d))
            && self.delta2.iter().all(|d| (0.0..=1.0).contains(d))
    }
}

/// Builds the initial network: scalar steps start at `(-s, +s)` so the
/// untrained forward replays the fixed-step iteration; MLP weights start
/// small and symmetric (uniform with scale `1/sqrt(fan_in)`, zero biases).
pub fn init_params<R: Rng>(
    arch: &UnfoldedArch,
    n_links: usize,
    init_step_size: f64,
    rng: &mut R,
) -> Result<UnfoldedParams> {
    arch.validate()?;
    if n_links == 0 {
        return Err(Error::InvalidConfig("n_links must be >= 1".into()));
    }
    if !(init_step_size.is_finite() && init_step_size > 0.0 && init_step_size < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "init_step_size must lie in (0, 1), got {init_step_size}"
        )));
    }
    let k = arch.n_layers;
    let mlp = match arch.variant {
        Variant::ScalarStep => None,
        Variant::MlpLayer => {
            let mut layers = Vec::with_capacity(k);
            for _ in 0..k {
                let mut layer = MlpWeights::zeros(n_links, arch.hidden_width);
                fill_uniform(&mut layer.w1, 3 * n_links, rng);
                fill_uniform(&mut layer.w2, arch.hidden_width, rng);
                fill_uniform(&mut layer.w3, arch.hidden_width, rng);
                layers.push(layer);
            }
            Some(layers)
        }
    };
    Ok(UnfoldedParams {
        n_layers: k,
        variant: arch.variant,
        delta1: vec![-init_step_size; k],
        delta2: vec![init_step_size; k],
        mlp,
    })
}

fn fill_uniform<R: Rng>(weights: &mut [f64], fan_in: usize, rng: &mut R) {
    let scale = 1.0 / (fan_in as f64).sqrt();
    for w in weights.iter_mut() {
        *w = rng.random_range(-scale..scale);
    }
}

/// Per-layer intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerCache {
    pub p_in: PowerVector,
    pub dec: GradDecomposition,
    pub mlp: Option<MlpLayerCache>,
}

#[derive(Debug, Clone)]
pub struct MlpLayerCache {
    pub x: Vec<f64>,
    pub z1: Vec<f64>,
    pub a1: Vec<f64>,
    pub z2: Vec<f64>,
    pub a2: Vec<f64>,
    pub z3: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub layers: Vec<LayerCache>,
    pub p_out: PowerVector,
}

/// Initial power rule shared by training and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum P0Rule {
    MaxPower,
    Constant(f64),
}

impl P0Rule {
    pub fn build(&self, n: usize, p_max_w: f64) -> Result<PowerVector> {
        match self {
            P0Rule::MaxPower => PowerVector::max_power(n, p_max_w),
            P0Rule::Constant(c) => PowerVector::constant(*c, n, p_max_w),
        }
    }
}

fn check_params(params: &UnfoldedParams, h: &ChannelMatrix, p0: &PowerVector) -> Result<()> {
    if params.delta1.len() != params.n_layers || params.delta2.len() != params.n_layers {
        return Err(Error::DimensionMismatch("delta arrays vs n_layers".into()));
    }
    match (params.variant, &params.mlp) {
        (Variant::ScalarStep, Some(_)) | (Variant::MlpLayer, None) => {
            return Err(Error::InvalidConfig(
                "mlp weights must be present exactly for the mlp_layer variant".into(),
            ))
        }
        (Variant::MlpLayer, Some(layers)) => {
            if layers.len() != params.n_layers {
                return Err(Error::DimensionMismatch("mlp layer count".into()));
            }
            for layer in layers {
                if layer.n_links() != h.n_links() {
                    return Err(Error::DimensionMismatch(
                        "mlp output width vs channel links".into(),
                    ));
                }
            }
        }
        _ => {}
    }
    if p0.len() != h.n_links() {
        return Err(Error::DimensionMismatch("p0 length vs channel links".into()));
    }
    Ok(())
}

fn forward_impl(
    params: &UnfoldedParams,
    h: &ChannelMatrix,
    p0: &PowerVector,
    want_cache: bool,
) -> Result<(PowerVector, Option<ForwardCache>)> {
    check_params(params, h, p0)?;
    let n = h.n_links();
    let p_max = p0.p_max_w();
    let mut p = p0.clone();
    let mut layers = want_cache.then(|| Vec::with_capacity(params.n_layers));

    for k in 0..params.n_layers {
        let dec = psi_phi(&p, h).map_err(|e| layer_err(e, k))?;
        let (next, mlp_cache) = match params.variant {
            Variant::ScalarStep => {
                let next =
                    crate::objective::projected_step(&p, &dec, params.delta1[k], params.delta2[k])
                        .map_err(|e| layer_err(e, k))?;
                (next, None)
            }
            Variant::MlpLayer => {
                let layer = &params.mlp.as_ref().unwrap()[k];
                let mut x = Vec::with_capacity(3 * n);
                x.extend_from_slice(p.as_slice());
                x.extend_from_slice(&dec.psi);
                x.extend_from_slice(&dec.phi);
                let z1 = dense(&layer.w1, &layer.b1, &x);
                let a1 = relu(&z1);
                let z2 = dense(&layer.w2, &layer.b2, &a1);
                let a2 = relu(&z2);
                let z3 = dense(&layer.w3, &layer.b3, &a2);
                let mut out = Vec::with_capacity(n);
                for (j, &z) in z3.iter().enumerate() {
                    if !z.is_finite() {
                        return Err(layer_err(
                            Error::NonFinite(format!("mlp output, link {j}")),
                            k,
                        ));
                    }
                    out.push(z.clamp(0.0, p_max));
                }
                let next = PowerVector::new(out, p_max)?;
                let cache = want_cache.then(|| MlpLayerCache {
                    x,
                    z1,
                    a1,
                    z2,
                    a2,
                    z3,
                });
                (next, cache)
            }
        };
        if let Some(layers) = layers.as_mut() {
            layers.push(LayerCache {
                p_in: p,
                dec,
                mlp: mlp_cache,
            });
        }
        p = next;
    }

    let cache = layers.map(|layers| ForwardCache {
        layers,
        p_out: p.clone(),
    });
    Ok((p, cache))
}

fn layer_err(e: Error, k: usize) -> Error {
    match e {
        Error::NonFinite(msg) => Error::NonFinite(format!("layer {k}: {msg}")),
        other => other,
    }
}

/// Runs the unrolled network, returning the allocation and the per-layer
/// cache needed for backpropagation.
pub fn dupgd_forward(
    params: &UnfoldedParams,
    h: &ChannelMatrix,
    p0: &PowerVector,
) -> Result<(PowerVector, ForwardCache)> {
    let (p, cache) = forward_impl(params, h, p0, true)?;
    Ok((p, cache.expect("cache requested")))
}

/// Forward pass without the cache, for evaluation loops.
pub fn forward_power(
    params: &UnfoldedParams,
    h: &ChannelMatrix,
    p0: &PowerVector,
) -> Result<PowerVector> {
    Ok(forward_impl(params, h, p0, false)?.0)
}

fn dense(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let rows = b.len();
    let cols = x.len();
    let mut out = Vec::with_capacity(rows);
    for r in 0..rows {
        let mut acc = b[r];
        let row = &w[r * cols..(r + 1) * cols];
        for (wv, xv) in row.iter().zip(x) {
            acc += wv * xv;
        }
        out.push(acc);
    }
    out
}

fn relu(z: &[f64]) -> Vec<f64> {
    z.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

/// Gradients with the same shape as the trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct UnfoldedGrads {
    pub delta1: Vec<f64>,
    pub delta2: Vec<f64>,
    pub mlp: Option<Vec<MlpWeights>>,
}

impl UnfoldedGrads {
    pub fn zeros_like(params: &UnfoldedParams) -> Self {
        let mlp = params.mlp.as_ref().map(|layers| {
            layers
                .iter()
                .map(|l| MlpWeights::zeros(l.n_links(), l.hidden()))
                .collect()
        });
        Self {
            delta1: vec![0.0; params.n_layers],
            delta2: vec![0.0; params.n_layers],
            mlp,
        }
    }

    pub fn flatten(&self, variant: &Variant) -> Vec<f64> {
        let mut out = Vec::new();
        match variant {
            Variant::ScalarStep => {
                out.extend_from_slice(&self.delta1);
                out.extend_from_slice(&self.delta2);
            }
            Variant::MlpLayer => {
                if let Some(layers) = &self.mlp {
                    for layer in layers {
                        layer.for_each_slice(|s| out.extend_from_slice(s));
                    }
                }
            }
        }
        out
    }

    fn add_in_place(&mut self, other: &UnfoldedGrads) {
        for (a, b) in self.delta1.iter_mut().zip(&other.delta1) {
            *a += b;
        }
        for (a, b) in self.delta2.iter_mut().zip(&other.delta2) {
            *a += b;
        }
        if let (Some(mine), Some(theirs)) = (&mut self.mlp, &other.mlp) {
            for (m, t) in mine.iter_mut().zip(theirs) {
                for (dst, src) in [
                    (&mut m.w1, &t.w1),
                    (&mut m.b1, &t.b1),
                    (&mut m.w2, &t.w2),
                    (&mut m.b2, &t.b2),
                    (&mut m.w3, &t.w3),
                    (&mut m.b3, &t.b3),
                ] {
                    for (a, b) in dst.iter_mut().zip(src) {
                        *a += b;
                    }
                }
            }
        }
    }

    fn scale(&mut self, s: f64) {
        for v in self.delta1.iter_mut().chain(self.delta2.iter_mut()) {
            *v *= s;
        }
        if let Some(layers) = &mut self.mlp {
            for layer in layers {
                layer.for_each_slice_mut(|slice| {
                    for v in slice {
                        *v *= s;
                    }
                });
            }
        }
    }

    /// Keeps only layer `k`'s gradient entries (layer-wise online schedule).
    pub fn mask_to_layer(&mut self, k: usize) {
        for (i, v) in self.delta1.iter_mut().enumerate() {
            if i != k {
                *v = 0.0;
            }
        }
        for (i, v) in self.delta2.iter_mut().enumerate() {
            if i != k {
                *v = 0.0;
            }
        }
        if let Some(layers) = &mut self.mlp {
            for (i, layer) in layers.iter_mut().enumerate() {
                if i != k {
                    layer.for_each_slice_mut(|slice| slice.fill(0.0));
                }
            }
        }
    }
}

/// Negative mean sum rate of the forward outputs over a batch.
pub fn loss(
    params: &UnfoldedParams,
    batch: &[ChannelMatrix],
    p0_rule: &P0Rule,
    p_max_w: f64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("loss batch"));
    }
    let per_element: Vec<Result<f64>> = batch
        .par_iter()
        .map(|h| {
            let p0 = p0_rule.build(h.n_links(), p_max_w)?;
            let p = forward_power(params, h, &p0)?;
            sum_rate(&p, h)
        })
        .collect();
    let mut total = 0.0;
    for r in per_element {
        total += r?;
    }
    Ok(-total / batch.len() as f64)
}

/// Exact reverse-mode gradient of [`loss`] with respect to every trainable
/// parameter, returned together with the loss value. The projection
/// backpropagates as a unit subgradient on the closed feasible interval
/// and zero outside it.
pub fn backward(
    params: &UnfoldedParams,
    batch: &[ChannelMatrix],
    p0_rule: &P0Rule,
    p_max_w: f64,
) -> Result<(f64, UnfoldedGrads)> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("loss batch"));
    }
    let per_element: Vec<Result<(f64, UnfoldedGrads)>> = batch
        .par_iter()
        .map(|h| backward_one(params, h, p0_rule, p_max_w))
        .collect();

    let mut total_loss = 0.0;
    let mut grads = UnfoldedGrads::zeros_like(params);
    for r in per_element {
        let (l, g) = r?;
        total_loss += l;
        grads.add_in_place(&g);
    }
    let scale = 1.0 / batch.len() as f64;
    grads.scale(scale);
    Ok((total_loss * scale, grads))
}

fn backward_one(
    params: &UnfoldedParams,
    h: &ChannelMatrix,
    p0_rule: &P0Rule,
    p_max_w: f64,
) -> Result<(f64, UnfoldedGrads)> {
    let n = h.n_links();
    let p0 = p0_rule.build(n, p_max_w)?;
    let (p_out, cache) = dupgd_forward(params, h, &p0)?;
    let loss_value = -sum_rate(&p_out, h)?;

    // d(-sum rate)/dp at the output equals the objective gradient -Psi+Phi.
    let out_dec = psi_phi(&p_out, h)?;
    let mut u: Vec<f64> = (0..n).map(|j| -out_dec.psi[j] + out_dec.phi[j]).collect();

    let mut grads = UnfoldedGrads::zeros_like(params);

    for k in (0..params.n_layers).rev() {
        let layer = &cache.layers[k];
        let pw = layer.p_in.as_slice();
        match params.variant {
            Variant::ScalarStep => {
                let (d1, d2) = (params.delta1[k], params.delta2[k]);
                // Projection mask over the recomputed raw update.
                let mut u_masked = vec![0.0; n];
                for j in 0..n {
                    let raw = step_raw(pw[j], layer.dec.psi[j], layer.dec.phi[j], d1, d2);
                    if (0.0..=p_max_w).contains(&raw) {
                        u_masked[j] = u[j];
                    }
                }
                let mut g1 = 0.0;
                let mut g2 = 0.0;
                for j in 0..n {
                    g1 -= u_masked[j] * layer.dec.psi[j];
                    g2 -= u_masked[j] * layer.dec.phi[j];
                }
                grads.delta1[k] = g1;
                grads.delta2[k] = g2;

                // Downstream cotangent: identity part plus the Jacobians of
                // Psi/Phi weighted by -delta.
                let u_psi: Vec<f64> = u_masked.iter().map(|&v| -d1 * v).collect();
                let u_phi: Vec<f64> = u_masked.iter().map(|&v| -d2 * v).collect();
                let coupled = psi_phi_vjp(&layer.p_in, h, &layer.dec, &u_psi, &u_phi)?;
                for j in 0..n {
                    u[j] = u_masked[j] + coupled[j];
                }
            }
            Variant::MlpLayer => {
                let weights = &params.mlp.as_ref().unwrap()[k];
                let mcache = layer.mlp.as_ref().expect("mlp cache");
                let g = &mut grads.mlp.as_mut().unwrap()[k];

                let mut u3 = vec![0.0; n];
                for j in 0..n {
                    if (0.0..=p_max_w).contains(&mcache.z3[j]) {
                        u3[j] = u[j];
                    }
                }
                let ua2 = dense_backward(&weights.w3, &mut g.w3, &mut g.b3, &u3, &mcache.a2);
                let uz2 = relu_backward(&ua2, &mcache.z2);
                let ua1 = dense_backward(&weights.w2, &mut g.w2, &mut g.b2, &uz2, &mcache.a1);
                let uz1 = relu_backward(&ua1, &mcache.z1);
                let ux = dense_backward(&weights.w1, &mut g.w1, &mut g.b1, &uz1, &mcache.x);

                let (u_p, rest) = ux.split_at(n);
                let (u_psi, u_phi) = rest.split_at(n);
                let coupled = psi_phi_vjp(&layer.p_in, h, &layer.dec, u_psi, u_phi)?;
                for j in 0..n {
                    u[j] = u_p[j] + coupled[j];
                }
            }
        }
    }

    Ok((loss_value, grads))
}

/// Accumulates the weight/bias gradients of one dense layer and returns
/// the cotangent with respect to its input.
fn dense_backward(
    w: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
    u_out: &[f64],
    x: &[f64],
) -> Vec<f64> {
    let rows = u_out.len();
    let cols = x.len();
    let mut ux = vec![0.0; cols];
    for r in 0..rows {
        gb[r] += u_out[r];
        let row_w = &w[r * cols..(r + 1) * cols];
        let row_g = &mut gw[r * cols..(r + 1) * cols];
        for c in 0..cols {
            row_g[c] += u_out[r] * x[c];
            ux[c] += u_out[r] * row_w[c];
        }
    }
    ux
}

fn relu_backward(u: &[f64], z: &[f64]) -> Vec<f64> {
    u.iter()
        .zip(z)
        .map(|(&uv, &zv)| if zv > 0.0 { uv } else { 0.0 })
        .collect()
}
