//! Non-learning reference policies: full power, uniform random power, and a
//! centralized full-CSI WMMSE solver for the weighted sum-rate problem.
//!
//! The WMMSE iteration is the standard scalar block-coordinate scheme:
//! receive scalars `u`, MSE weights `w` and transmit amplitudes `v` are
//! updated in turn, each to its exact block optimum, so the sum rate is
//! non-decreasing across iterations. Phases are absorbed into magnitudes
//! first; the scalar sum rate depends only on `|h|^2`.
//!
//! A symmetric instance started from symmetric amplitudes stays symmetric
//! forever under this iteration, which can pin it to a poor stationary point
//! (for strong cross gains the optimum shuts one link off). The solver
//! therefore runs a small deterministic multi-start - full power plus each
//! single-link start - and returns the best run. Full power is always among
//! the starts, so the returned sum rate never falls below the full-power sum
//! rate.

use crate::channel::Topology;
use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WmmseError {
    #[error("channel gains must be finite")]
    NonFiniteGains,
    #[error("noise power must be positive and finite, got {0}")]
    BadNoise(f64),
    #[error("gain matrix is {rows}x{cols}, power budget has {budgets} entries")]
    ShapeMismatch { rows: usize, cols: usize, budgets: usize },
}

/// Every AP at its maximum transmit power.
pub fn full_power(topology: &Topology) -> Vec<f64> {
    topology.p_max()
}

/// Each AP uniform on [0, p_max].
pub fn random_power<R: Rng>(topology: &Topology, rng: &mut R) -> Vec<f64> {
    topology.aps.iter().map(|ap| rng.gen_range(0.0..=ap.p_max)).collect()
}

#[derive(Debug, Clone, Copy)]
pub struct WmmseConfig {
    pub max_iterations: usize,
    /// Stop when the objective changes by less than this between iterations.
    pub tolerance: f64,
}

impl Default for WmmseConfig {
    fn default() -> Self {
        WmmseConfig { max_iterations: 500, tolerance: 1e-6 }
    }
}

/// Solver output: powers in watts, the achieved sum rate in bits/s/Hz, and
/// the objective after the initial point and each iteration of the winning
/// start.
#[derive(Debug, Clone)]
pub struct WmmseSolution {
    pub powers: Vec<f64>,
    pub objective: f64,
    pub trace: Vec<f64>,
}

/// Sum rate (bits/s/Hz) of `powers` under squared channel gains
/// `gain_sq[[m, k]]` and noise `sigma2`.
pub fn sum_rate(gain_sq: &Array2<f64>, powers: &[f64], sigma2: f64) -> f64 {
    let k = powers.len();
    let mut total = 0.0;
    for m in 0..k {
        let mut denom = sigma2;
        for j in 0..k {
            if j != m {
                denom += gain_sq[[m, j]] * powers[j];
            }
        }
        total += (1.0 + gain_sq[[m, m]] * powers[m] / denom).log2();
    }
    total
}

/// Maximize the sum rate over per-AP power budgets given full instantaneous
/// CSI.
pub fn wmmse(
    gains: &Array2<Complex64>,
    p_max: &[f64],
    noise_power: f64,
    cfg: &WmmseConfig,
) -> Result<WmmseSolution, WmmseError> {
    let k = p_max.len();
    if gains.nrows() != k || gains.ncols() != k {
        return Err(WmmseError::ShapeMismatch {
            rows: gains.nrows(),
            cols: gains.ncols(),
            budgets: k,
        });
    }
    if gains.iter().any(|h| !h.re.is_finite() || !h.im.is_finite()) {
        return Err(WmmseError::NonFiniteGains);
    }
    if !(noise_power > 0.0 && noise_power.is_finite()) {
        return Err(WmmseError::BadNoise(noise_power));
    }

    // Phase absorption: the objective only sees magnitudes.
    let h = gains.mapv(|c| c.norm());
    let h_sq = h.mapv(|m| m * m);

    // Deterministic multi-start: full power, each single link alone, and
    // each single link muted. Binary on/off patterns are near-optimal for
    // scalar interference channels, and these starts cover the common ones
    // (for K <= 3 they cover every nonzero pattern).
    let v_max: Vec<f64> = p_max.iter().map(|p| p.sqrt()).collect();
    let mut starts: Vec<Vec<f64>> = vec![v_max.clone()];
    for solo in 0..k {
        let mut v = vec![0.0; k];
        v[solo] = v_max[solo];
        starts.push(v);
    }
    if k > 2 {
        for muted in 0..k {
            let mut v = v_max.clone();
            v[muted] = 0.0;
            starts.push(v);
        }
    }
    // Interior starts escape clamped stationary points whose optimum keeps a
    // strong interferer partially on.
    for frac in [0.5, 0.1] {
        starts.push(v_max.iter().map(|v| v * f64::sqrt(frac)).collect());
    }

    let mut best: Option<WmmseSolution> = None;
    for start in starts {
        let sol = wmmse_single_start(&h, &h_sq, start, &v_max, noise_power, cfg);
        if best.as_ref().map_or(true, |b| sol.objective > b.objective) {
            best = Some(sol);
        }
    }
    let mut best = best.unwrap();

    // Polish: toggle one link at a time off the incumbent (mute it, or bring
    // a muted one back to full) and re-converge; keep strict improvements.
    for _ in 0..k {
        let mut improved = false;
        for toggle in 0..k {
            let mut v: Vec<f64> = best.powers.iter().map(|p| p.sqrt()).collect();
            v[toggle] = if v[toggle] > 0.0 { 0.0 } else { v_max[toggle] };
            let sol = wmmse_single_start(&h, &h_sq, v, &v_max, noise_power, cfg);
            if sol.objective > best.objective {
                best = sol;
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
    Ok(best)
}

fn wmmse_single_start(
    h: &Array2<f64>,
    h_sq: &Array2<f64>,
    mut v: Vec<f64>,
    v_max: &[f64],
    sigma2: f64,
    cfg: &WmmseConfig,
) -> WmmseSolution {
    let k = v.len();
    let powers = |v: &[f64]| -> Vec<f64> { v.iter().map(|x| x * x).collect() };
    let mut objective = sum_rate(h_sq, &powers(&v), sigma2);
    let mut trace = vec![objective];
    let mut u = vec![0.0; k];
    let mut w = vec![0.0; k];

    for _ in 0..cfg.max_iterations {
        // MMSE receive scalars.
        for m in 0..k {
            let mut total = sigma2;
            for j in 0..k {
                total += h_sq[[m, j]] * v[j] * v[j];
            }
            u[m] = h[[m, m]] * v[m] / total;
        }
        // Optimal MSE weights; u h v = S / (S + I + sigma2) < 1.
        for m in 0..k {
            w[m] = 1.0 / (1.0 - u[m] * h[[m, m]] * v[m]);
        }
        // Exact block minimizer per transmitter, decoupled given (u, w).
        for kk in 0..k {
            let mut denom = 0.0;
            for j in 0..k {
                denom += w[j] * u[j] * u[j] * h_sq[[j, kk]];
            }
            v[kk] = if denom > 0.0 {
                (w[kk] * u[kk] * h[[kk, kk]] / denom).clamp(0.0, v_max[kk])
            } else {
                0.0
            };
        }
        let next = sum_rate(h_sq, &powers(&v), sigma2);
        trace.push(next);
        let done = (next - objective).abs() < cfg.tolerance;
        objective = next;
        if done {
            break;
        }
    }
    WmmseSolution { powers: powers(&v), objective, trace }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{complex_gaussian, AccessPoint};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn topology(p_max: &[f64]) -> Topology {
        Topology::new(
            p_max
                .iter()
                .map(|&p| AccessPoint {
                    position: [0.0, 0.0],
                    tier: 1,
                    p_max: p,
                    d_min: 10.0,
                    d_max: 100.0,
                })
                .collect(),
        )
        .unwrap()
    }

    fn random_gains<R: Rng>(k: usize, rng: &mut R) -> Array2<Complex64> {
        Array2::from_shape_fn((k, k), |(m, j)| {
            // Direct links stronger than cross links on average.
            let scale = if m == j { 1.0 } else { 10f64.powf(rng.gen_range(-2.0..0.0)) };
            scale * complex_gaussian(rng)
        })
    }

    /// Exhaustive grid search over discretized power levels.
    fn grid_search_best(
        gain_sq: &Array2<f64>,
        p_max: &[f64],
        sigma2: f64,
        levels: usize,
    ) -> (Vec<f64>, f64) {
        let k = p_max.len();
        let mut best = (vec![0.0; k], f64::NEG_INFINITY);
        let mut idx = vec![0usize; k];
        loop {
            let powers: Vec<f64> = idx
                .iter()
                .zip(p_max)
                .map(|(&i, &p)| i as f64 * p / (levels - 1) as f64)
                .collect();
            let r = sum_rate(gain_sq, &powers, sigma2);
            if r > best.1 {
                best = (powers, r);
            }
            let mut carry = 0;
            loop {
                idx[carry] += 1;
                if idx[carry] < levels {
                    break;
                }
                idx[carry] = 0;
                carry += 1;
                if carry == k {
                    return best;
                }
            }
        }
    }

    #[test]
    fn full_power_matches_budgets() {
        let topo = topology(&[1.0, 0.1, 0.1, 0.1, 0.1, 0.01, 0.01, 0.01, 0.01]);
        let p = full_power(&topo);
        assert_eq!(p, topo.p_max());
        assert_eq!(full_power(&topo), p); // idempotent, channel-independent
    }

    #[test]
    fn random_power_within_budget_and_mean() {
        let topo = topology(&[1.0, 0.1]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 10_000;
        let mut sums = [0.0, 0.0];
        for _ in 0..n {
            let p = random_power(&topo, &mut rng);
            assert!(p[0] >= 0.0 && p[0] <= 1.0);
            assert!(p[1] >= 0.0 && p[1] <= 0.1);
            sums[0] += p[0];
            sums[1] += p[1];
        }
        assert!((sums[0] / n as f64 - 0.5).abs() / 0.5 < 0.02);
        assert!((sums[1] / n as f64 - 0.05).abs() / 0.05 < 0.02);
        // Seeded determinism.
        let mut r1 = ChaCha8Rng::seed_from_u64(2);
        let mut r2 = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(random_power(&topo, &mut r1), random_power(&topo, &mut r2));
    }

    #[test]
    fn wmmse_single_link_goes_full_power() {
        let gains = Array2::from_elem((1, 1), Complex64::new(0.8, 0.6));
        let sol = wmmse(&gains, &[0.7], 0.05, &WmmseConfig::default()).unwrap();
        assert!((sol.powers[0] - 0.7).abs() < 1e-9, "powers: {:?}", sol.powers);
    }

    #[test]
    fn wmmse_rejects_bad_input() {
        let gains = Array2::from_elem((2, 2), Complex64::new(f64::NAN, 0.0));
        assert!(wmmse(&gains, &[1.0, 1.0], 0.1, &WmmseConfig::default()).is_err());
        let ok = Array2::from_elem((2, 2), Complex64::new(1.0, 0.0));
        assert!(wmmse(&ok, &[1.0, 1.0], 0.0, &WmmseConfig::default()).is_err());
        assert!(wmmse(&ok, &[1.0], 0.1, &WmmseConfig::default()).is_err());
    }

    #[test]
    fn wmmse_symmetric_strong_interference_shuts_one_link() {
        // |h_kk|^2 = 1, cross |h_kj|^2 = 10: the optimum turns one link off.
        let root10 = 10f64.sqrt();
        let gains = Array2::from_shape_fn((2, 2), |(m, j)| {
            Complex64::new(if m == j { 1.0 } else { root10 }, 0.0)
        });
        let sol = wmmse(&gains, &[1.0, 1.0], 0.1, &WmmseConfig::default()).unwrap();
        let min = sol.powers[0].min(sol.powers[1]);
        let max = sol.powers[0].max(sol.powers[1]);
        assert!(min < 1e-3, "one link should be (nearly) off: {:?}", sol.powers);
        assert!(max > 0.99, "the other link should be near full: {:?}", sol.powers);

        let gain_sq = gains.mapv(|c| c.norm_sqr());
        let (_, grid_best) = grid_search_best(&gain_sq, &[1.0, 1.0], 0.1, 1001);
        assert!(
            sol.objective >= grid_best * 0.99,
            "objective {} vs grid {grid_best}",
            sol.objective
        );
    }

    #[test]
    fn wmmse_near_grid_search_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let gains = random_gains(3, &mut rng);
            let p_max = [1.0, 0.5, 0.25];
            let sigma2 = 0.05;
            let sol = wmmse(&gains, &p_max, sigma2, &WmmseConfig::default()).unwrap();
            let gain_sq = gains.mapv(|c| c.norm_sqr());
            let (_, grid_best) = grid_search_best(&gain_sq, &p_max, sigma2, 21);
            assert!(
                sol.objective >= grid_best - 0.02 * grid_best.abs(),
                "objective {} vs coarse grid {grid_best}",
                sol.objective
            );
        }
    }

    #[test]
    fn wmmse_monotone_and_beats_full_power() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let k = 5;
            let gains = random_gains(k, &mut rng);
            let p_max = vec![1.0; k];
            let sigma2 = 0.01;
            let sol = wmmse(&gains, &p_max, sigma2, &WmmseConfig::default()).unwrap();
            for pair in sol.trace.windows(2) {
                assert!(pair[1] >= pair[0] - 1e-9, "objective decreased: {:?}", pair);
            }
            let gain_sq = gains.mapv(|c| c.norm_sqr());
            let fp = sum_rate(&gain_sq, &p_max, sigma2);
            assert!(sol.objective >= fp - 1e-12, "wmmse {} < full power {fp}", sol.objective);
            for (p, cap) in sol.powers.iter().zip(&p_max) {
                assert!(*p >= 0.0 && *p <= cap + 1e-12);
            }
        }
    }
}
