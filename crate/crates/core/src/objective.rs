//! SINR, sum rate, the analytical gradient of the negative sum rate, its
//! own-link / interference decomposition, and the box projection.
//!
//! Conventions, with `h[i][j]` the power gain from transmitter `i` to
//! receiver `j` and `s2` the noise power:
//!
//! - interference-plus-noise at receiver `j`:
//!   `eta[j] = sum_{m != j} p[m] h[m][j] + s2`
//! - total received power plus noise: `gamma[j] = eta[j] + p[j] h[j][j]`
//! - SINR: `zeta[j] = p[j] h[j][j] / eta[j]`
//! - sum rate `R = sum_j log2(1 + zeta[j])`; the minimized objective is
//!   `rho = -R`.
//!
//! Differentiating `rho` gives, per link `j`,
//!
//! ```text
//! d rho / d p[j] = -Psi[j] + Phi[j]
//! Psi[j] = h[j][j] / (gamma[j] ln 2)
//! Phi[j] = (1/ln 2) sum_{k != j} h[k][k] h[j][k] p[k] / (eta[k] gamma[k])
//! ```
//!
//! `Psi` is the own-link ascent pressure, `Phi` the price link `j` pays for
//! interfering with everyone else. Receiver-side index order in the sums is
//! forced by the differentiation; it is validated against central finite
//! differences in the test suites.

use serde::{Deserialize, Serialize};

use crate::channel::ChannelMatrix;
use crate::error::{Error, Result};

const LN_2: f64 = std::f64::consts::LN_2;

/// Transmit powers in watts, each within `[0, p_max_w]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PowerVectorRaw", into = "PowerVectorRaw")]
pub struct PowerVector {
    p: Vec<f64>,
    p_max_w: f64,
}

#[derive(Serialize, Deserialize, Clone)]
struct PowerVectorRaw {
    p: Vec<f64>,
    p_max_w: f64,
}

impl TryFrom<PowerVectorRaw> for PowerVector {
    type Error = Error;
    fn try_from(raw: PowerVectorRaw) -> Result<Self> {
        PowerVector::new(raw.p, raw.p_max_w)
    }
}

impl From<PowerVector> for PowerVectorRaw {
    fn from(v: PowerVector) -> Self {
        Self {
            p: v.p,
            p_max_w: v.p_max_w,
        }
    }
}

impl PowerVector {
    pub fn new(p: Vec<f64>, p_max_w: f64) -> Result<Self> {
        check_p_max(p_max_w)?;
        if p.is_empty() {
            return Err(Error::EmptyInput("power vector"));
        }
        for &v in &p {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("power entry {v}")));
            }
            if v < 0.0 || v > p_max_w {
                return Err(Error::InvalidConfig(format!(
                    "power {v} outside [0, {p_max_w}]"
                )));
            }
        }
        Ok(Self { p, p_max_w })
    }

    /// Every link at maximum power.
    pub fn max_power(n: usize, p_max_w: f64) -> Result<Self> {
        Self::new(vec![p_max_w; n], p_max_w)
    }

    pub fn constant(value: f64, n: usize, p_max_w: f64) -> Result<Self> {
        Self::new(vec![value; n], p_max_w)
    }

    pub fn uniform_random<R: rand::Rng>(n: usize, p_max_w: f64, rng: &mut R) -> Result<Self> {
        check_p_max(p_max_w)?;
        let p = (0..n).map(|_| rng.random_range(0.0..p_max_w)).collect();
        Self::new(p, p_max_w)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.p
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn p_max_w(&self) -> f64 {
        self.p_max_w
    }

    /// Relabels links by `perm` (new index -> old index).
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.p.len() {
            return Err(Error::DimensionMismatch("permutation length".into()));
        }
        let p = perm.iter().map(|&i| self.p[i]).collect();
        Self::new(p, self.p_max_w)
    }
}

fn check_p_max(p_max_w: f64) -> Result<()> {
    if !(p_max_w.is_finite() && p_max_w > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "p_max_w must be positive, got {p_max_w}"
        )));
    }
    Ok(())
}

/// Per-link spectral efficiencies in bps/Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateVector {
    pub r: Vec<f64>,
}

impl RateVector {
    pub fn sum(&self) -> f64 {
        self.r.iter().sum()
    }
}

/// The pieces of the sum-rate gradient, kept separately because the
/// unfolded network learns independent weights for them.
#[derive(Debug, Clone, PartialEq)]
pub struct GradDecomposition {
    pub psi: Vec<f64>,
    pub phi: Vec<f64>,
    /// `gamma[j] = eta[j] + p[j] h[j][j]`, total received power plus noise.
    pub gamma: Vec<f64>,
    /// `eta[j]`: interference plus noise at receiver `j`; at least the
    /// noise floor, so never zero.
    pub eta: Vec<f64>,
}

fn check_dims(p: &PowerVector, h: &ChannelMatrix) -> Result<usize> {
    if p.len() != h.n_links() {
        return Err(Error::DimensionMismatch(format!(
            "power vector has {} links, channel has {}",
            p.len(),
            h.n_links()
        )));
    }
    Ok(p.len())
}

/// Interference-plus-noise seen by each receiver.
fn interference_plus_noise(p: &[f64], h: &ChannelMatrix) -> Vec<f64> {
    let n = p.len();
    let s2 = h.noise_power_w();
    let mut eta = vec![0.0; n];
    for (j, e) in eta.iter_mut().enumerate() {
        let mut acc = 0.0;
        for m in 0..n {
            if m != j {
                acc += p[m] * h.gain(m, j);
            }
        }
        *e = acc + s2;
    }
    eta
}

/// Per-link SINR.
pub fn sinr(p: &PowerVector, h: &ChannelMatrix) -> Result<Vec<f64>> {
    let n = check_dims(p, h)?;
    let pw = p.as_slice();
    let eta = interference_plus_noise(pw, h);
    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        let z = pw[j] * h.gain(j, j) / eta[j];
        if !z.is_finite() {
            return Err(Error::NonFinite(format!("sinr of link {j}")));
        }
        out.push(z);
    }
    Ok(out)
}

pub fn per_link_rates(p: &PowerVector, h: &ChannelMatrix) -> Result<RateVector> {
    let r = sinr(p, h)?.into_iter().map(|z| (1.0 + z).log2()).collect();
    Ok(RateVector { r })
}

/// Achieved sum rate in bps/Hz; the optimization objective is its negation.
pub fn sum_rate(p: &PowerVector, h: &ChannelMatrix) -> Result<f64> {
    let total = per_link_rates(p, h)?.sum();
    if !total.is_finite() {
        return Err(Error::NonFinite("sum rate".into()));
    }
    Ok(total)
}

/// The own-link / interference split of the gradient, together with the
/// receiver aggregates it was built from.
pub fn psi_phi(p: &PowerVector, h: &ChannelMatrix) -> Result<GradDecomposition> {
    let n = check_dims(p, h)?;
    let pw = p.as_slice();
    let eta = interference_plus_noise(pw, h);
    // gamma = eta + own term, by construction, so the identity between the
    // two holds exactly and neither suffers cancellation.
    let mut gamma = vec![0.0; n];
    for j in 0..n {
        gamma[j] = eta[j] + pw[j] * h.gain(j, j);
    }

    let mut psi = vec![0.0; n];
    for j in 0..n {
        psi[j] = h.gain(j, j) / (gamma[j] * LN_2);
    }

    // phi[j] = (1/ln2) sum_{k != j} h[j][k] * w[k],
    // w[k] = h[k][k] p[k] / (eta[k] gamma[k]).
    let mut weight = vec![0.0; n];
    for k in 0..n {
        weight[k] = h.gain(k, k) * pw[k] / (eta[k] * gamma[k]);
    }
    let mut phi = vec![0.0; n];
    for j in 0..n {
        let mut acc = 0.0;
        for k in 0..n {
            if k != j {
                acc += h.gain(j, k) * weight[k];
            }
        }
        phi[j] = acc / LN_2;
    }

    for j in 0..n {
        if !(psi[j].is_finite() && phi[j].is_finite()) {
            return Err(Error::NonFinite(format!("gradient decomposition, link {j}")));
        }
    }

    Ok(GradDecomposition {
        psi,
        phi,
        gamma,
        eta,
    })
}

/// Analytical gradient of the negative sum rate. Kept as a direct
/// evaluation of the derivative, independent of [`psi_phi`], so the
/// `-Psi + Phi` identity is a genuine cross-check between two routes.
pub fn grad_rho(p: &PowerVector, h: &ChannelMatrix) -> Result<Vec<f64>> {
    let n = check_dims(p, h)?;
    let pw = p.as_slice();
    let s2 = h.noise_power_w();

    let mut eta = vec![0.0; n];
    for k in 0..n {
        let mut acc = 0.0;
        for m in 0..n {
            if m != k {
                acc += pw[m] * h.gain(m, k);
            }
        }
        eta[k] = acc + s2;
    }

    let mut grad = Vec::with_capacity(n);
    for j in 0..n {
        let own = h.gain(j, j) / (eta[j] + pw[j] * h.gain(j, j));
        let mut cross = 0.0;
        for k in 0..n {
            if k != j {
                let hkk = h.gain(k, k);
                cross += hkk * h.gain(j, k) * pw[k] / (eta[k] * (eta[k] + hkk * pw[k]));
            }
        }
        let g = (cross - own) / LN_2;
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("grad_rho, link {j}")));
        }
        grad.push(g);
    }
    Ok(grad)
}

/// Elementwise clamp onto `[0, p_max_w]`. NaN input is an error, never
/// silently clamped.
pub fn project_box(p_raw: &[f64], p_max_w: f64) -> Result<PowerVector> {
    check_p_max(p_max_w)?;
    if p_raw.is_empty() {
        return Err(Error::EmptyInput("projection input"));
    }
    let mut p = Vec::with_capacity(p_raw.len());
    for &v in p_raw {
        if v.is_nan() {
            return Err(Error::NonFinite("projection input is NaN".into()));
        }
        p.push(v.clamp(0.0, p_max_w));
    }
    PowerVector::new(p, p_max_w)
}

/// Raw (pre-projection) coordinate update shared by the iterative solver
/// and the unfolded layers: `p - (c1 * Psi + c2 * Phi)`. Both callers must
/// go through this function so their arithmetic agrees bit for bit.
#[inline]
pub fn step_raw(p_j: f64, psi_j: f64, phi_j: f64, c1: f64, c2: f64) -> f64 {
    p_j - (c1 * psi_j + c2 * phi_j)
}

/// One projected update with coefficients `(c1, c2)` applied to
/// `(Psi, Phi)`. The plain gradient step is `(c1, c2) = (-lambda, lambda)`,
/// since `grad rho = -Psi + Phi`; the unfolded layers pass their learned
/// per-layer coefficients instead.
pub fn projected_step(
    p: &PowerVector,
    dec: &GradDecomposition,
    c1: f64,
    c2: f64,
) -> Result<PowerVector> {
    let n = p.len();
    if dec.psi.len() != n || dec.phi.len() != n {
        return Err(Error::DimensionMismatch("decomposition length".into()));
    }
    let p_max = p.p_max_w();
    let pw = p.as_slice();
    let mut next = Vec::with_capacity(n);
    for j in 0..n {
        let raw = step_raw(pw[j], dec.psi[j], dec.phi[j], c1, c2);
        if !raw.is_finite() {
            return Err(Error::NonFinite(format!("projected step, link {j}")));
        }
        next.push(raw.clamp(0.0, p_max));
    }
    PowerVector::new(next, p_max)
}

/// Transposed products with the Jacobians of `Psi` and `Phi`:
/// returns `v` with `v[i] = sum_j u_psi[j] dPsi[j]/dp[i]
///                        + sum_j u_phi[j] dPhi[j]/dp[i]`.
///
/// Closed forms, with `a_k = h[k][k]` and `w_k = a_k p_k / (eta_k gamma_k)`:
///
/// ```text
/// dPsi[j]/dp[i] = -a_j h[i][j] / (gamma_j^2 ln 2)
/// dPhi[j]/dp[i] = (1/ln 2) sum_{k != j} h[j][k] dw_k/dp[i]
/// dw_k/dp[k]    = a_k / (eta_k gamma_k) - a_k^2 p_k / (eta_k gamma_k^2)
/// dw_k/dp[i]    = -a_k p_k h[i][k] (gamma_k + eta_k) / (eta_k^2 gamma_k^2),  i != k
/// ```
pub fn psi_phi_vjp(
    p: &PowerVector,
    h: &ChannelMatrix,
    dec: &GradDecomposition,
    u_psi: &[f64],
    u_phi: &[f64],
) -> Result<Vec<f64>> {
    let n = check_dims(p, h)?;
    if u_psi.len() != n || u_phi.len() != n {
        return Err(Error::DimensionMismatch("cotangent length".into()));
    }
    let pw = p.as_slice();

    // Psi part: q[j] = u_psi[j] a_j / (gamma_j^2 ln 2).
    let mut q = vec![0.0; n];
    for j in 0..n {
        q[j] = u_psi[j] * h.gain(j, j) / (dec.gamma[j] * dec.gamma[j] * LN_2);
    }

    // Phi part groups by source k: s[k] = sum_{j != k} u_phi[j] h[j][k].
    let mut s = vec![0.0; n];
    for k in 0..n {
        let mut acc = 0.0;
        for j in 0..n {
            if j != k {
                acc += u_phi[j] * h.gain(j, k);
            }
        }
        s[k] = acc;
    }
    // own[k]   = s_k dw_k/dp_k / ln 2
    // coupl[k] = s_k a_k p_k (gamma_k + eta_k) / (eta_k^2 gamma_k^2 ln 2)
    let mut own = vec![0.0; n];
    let mut coupl = vec![0.0; n];
    for k in 0..n {
        let a = h.gain(k, k);
        let eg = dec.eta[k] * dec.gamma[k];
        own[k] = s[k] * (a / eg - a * a * pw[k] / (eg * dec.gamma[k])) / LN_2;
        coupl[k] =
            s[k] * a * pw[k] * (dec.gamma[k] + dec.eta[k]) / (eg * eg) / LN_2;
    }

    let mut v = vec![0.0; n];
    for i in 0..n {
        let mut acc = -q[i] * h.gain(i, i);
        for j in 0..n {
            if j != i {
                acc -= q[j] * h.gain(i, j);
            }
        }
        acc += own[i];
        for k in 0..n {
            if k != i {
                acc -= coupl[k] * h.gain(i, k);
            }
        }
        v[i] = acc;
    }
    Ok(v)
}
