//! Central finite-difference verification of the analytical gradients.
//!
//! Used by the test suites and by the `gradcheck` CLI subcommand, which
//! prints the worst relative error over seeded random instances.

use crate::channel::{generate_deployment, sample_channel, PropagationParams, ScenarioSpec};
use crate::error::Result;
use crate::objective::{grad_rho, sum_rate, PowerVector};
use crate::rng::substream;
use crate::unfolded::{backward, init_params, P0Rule, UnfoldedArch, Variant};

/// Central differences of `f` over the box `[0, p_max]^n`. The step for
/// coordinate `i` is `rel_step * max(|x[i]|, 1)`; evaluation points that
/// would leave the box are shifted inward, keeping a two-point slope.
pub fn central_diff_box<F>(f: F, x: &[f64], p_max: f64, rel_step: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let mut grad = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let step = rel_step * x[i].abs().max(1.0);
        let (mut lo, mut hi) = (x[i] - step, x[i] + step);
        if hi > p_max {
            hi = p_max;
            lo = p_max - 2.0 * step;
        }
        if lo < 0.0 {
            lo = 0.0;
            hi = 2.0 * step;
        }
        probe[i] = hi;
        let f_hi = f(&probe)?;
        probe[i] = lo;
        let f_lo = f(&probe)?;
        probe[i] = x[i];
        grad.push((f_hi - f_lo) / (hi - lo));
    }
    Ok(grad)
}

/// Worst-case relative error between two gradients, with the denominator
/// floored to keep noise-level components from dominating.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub cases: usize,
    pub max_rel_err: f64,
}

fn random_instance(n: usize, seed: u64, p_max: f64) -> Result<(PowerVector, crate::channel::ChannelMatrix)> {
    let spec = ScenarioSpec {
        area_m: [20.0, 20.0],
        n_links: n,
        max_pair_distance_m: None,
    };
    let dep = generate_deployment(&spec, &mut substream(seed, 0))?;
    let h = sample_channel(&dep, &PropagationParams::default(), &mut substream(seed, 1))?;
    let p = PowerVector::uniform_random(n, p_max, &mut substream(seed, 2))?;
    Ok((p, h))
}

/// Checks `grad_rho` against central differences of the negative sum rate
/// on `cases_per_n` seeded instances for every link count in `n_links`.
pub fn grad_rho_suite(n_links: &[usize], cases_per_n: usize, base_seed: u64) -> Result<GradCheckReport> {
    let p_max = 10.0;
    let mut worst = 0.0f64;
    let mut cases = 0;
    for (ni, &n) in n_links.iter().enumerate() {
        for c in 0..cases_per_n {
            let seed = base_seed + (ni * cases_per_n + c) as u64;
            let (p, h) = random_instance(n, seed, p_max)?;
            let analytic = grad_rho(&p, &h)?;
            let numeric = central_diff_box(
                |x| {
                    let pv = PowerVector::new(x.to_vec(), p_max)?;
                    Ok(-sum_rate(&pv, &h)?)
                },
                p.as_slice(),
                p_max,
                1e-6,
            )?;
            worst = worst.max(max_rel_err(&analytic, &numeric, 1e-12));
            cases += 1;
        }
    }
    Ok(GradCheckReport {
        cases,
        max_rel_err: worst,
    })
}

/// Checks the unrolled network's reverse-mode gradients against central
/// differences of the loss in parameter space (absolute step `1e-5`),
/// across both layer variants.
pub fn backward_suite(
    layer_counts: &[usize],
    link_counts: &[usize],
    cases: usize,
    base_seed: u64,
) -> Result<GradCheckReport> {
    let p_max = 10.0;
    let step = 1e-5;
    let mut worst = 0.0f64;
    let mut total = 0;
    for (vi, variant) in [Variant::ScalarStep, Variant::MlpLayer].into_iter().enumerate() {
        for (ki, &k) in layer_counts.iter().enumerate() {
            for (ni, &n) in link_counts.iter().enumerate() {
                for c in 0..cases {
                    let seed = base_seed
                        + (((vi * layer_counts.len() + ki) * link_counts.len() + ni) * cases + c)
                            as u64;
                    let arch = UnfoldedArch {
                        n_layers: k,
                        variant,
                        hidden_width: 16,
                    };
                    let mut params =
                        init_params(&arch, n, 0.1, &mut substream(seed, 10))?;
                    // Nudge the deltas off their uniform initialization so
                    // the check exercises generic parameter values.
                    if matches!(variant, Variant::ScalarStep) {
                        for (i, d) in params.delta1.iter_mut().enumerate() {
                            *d = -0.05 - 0.09 * ((i + c) % 7) as f64 / 7.0;
                        }
                        for (i, d) in params.delta2.iter_mut().enumerate() {
                            *d = 0.04 + 0.11 * ((i + 2 * c) % 5) as f64 / 5.0;
                        }
                    }
                    let spec = ScenarioSpec {
                        area_m: [20.0, 20.0],
                        n_links: n,
                        max_pair_distance_m: None,
                    };
                    let dep = generate_deployment(&spec, &mut substream(seed, 11))?;
                    let batch = crate::channel::sample_batch(
                        crate::channel::DeploymentSource::Fixed(&dep),
                        &PropagationParams::default(),
                        3,
                        &mut substream(seed, 12),
                    )?;
                    let p0 = P0Rule::MaxPower;
                    let (_, grads) = backward(&params, &batch, &p0, p_max)?;

                    let analytic = grads.flatten(&params.variant);
                    let mut numeric = Vec::with_capacity(analytic.len());
                    let theta = params.flatten_trainables();
                    for i in 0..theta.len() {
                        let mut hi = params.clone();
                        let mut lo = params.clone();
                        let mut t = theta.clone();
                        t[i] += step;
                        hi.write_trainables(&t)?;
                        t[i] = theta[i] - step;
                        lo.write_trainables(&t)?;
                        let f_hi = crate::unfolded::loss(&hi, &batch, &p0, p_max)?;
                        let f_lo = crate::unfolded::loss(&lo, &batch, &p0, p_max)?;
                        numeric.push((f_hi - f_lo) / (2.0 * step));
                    }
                    // Floor 1e-5: at this loss scale the central-difference
                    // noise is ~3e-10 absolute, so components below the
                    // floor are compared absolutely (still catching any
                    // wrong-sign or wrong-index error, which shows up at
                    // the 1e-6+ level).
                    worst = worst.max(max_rel_err(&analytic, &numeric, 1e-5));
                    total += 1;
                }
            }
        }
    }
    Ok(GradCheckReport {
        cases: total,
        max_rel_err: worst,
    })
}
