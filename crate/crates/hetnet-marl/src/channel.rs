//! HetNet radio channel: topology, large-scale fading (path loss plus
//! log-normal shadowing) and time-correlated small-scale Rayleigh fading.
//!
//! Gain matrices are indexed `[m, k]` = link from AP `k` to user device (UD)
//! `m`, so the diagonal holds the direct links. Large-scale fading is fixed
//! for the lifetime of an episode; small-scale fading evolves per slot as a
//! first-order Gauss-Markov (Jakes) process with coefficient
//! `rho = J0(2 pi f_D T)`.

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("topology has no access points")]
    Empty,
    #[error("AP {0}: coverage annulus requires 0 < d_min < d_max, got [{1}, {2}]")]
    BadAnnulus(usize, f64, f64),
    #[error("AP {0}: maximum transmit power must be positive, got {1}")]
    BadPower(usize, f64),
    #[error("AP {0}: tier must be 1, 2 or 3, got {1}")]
    BadTier(usize, u8),
}

/// One access point: position, tier label, power budget and the annulus its
/// served UD is dropped into.
#[derive(Debug, Clone, PartialEq)]
pub struct AccessPoint {
    pub position: [f64; 2],
    pub tier: u8,
    /// Maximum transmit power in watts.
    pub p_max: f64,
    pub d_min: f64,
    pub d_max: f64,
}

/// Static network layout: K access points, AP `k` serving UD `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub aps: Vec<AccessPoint>,
}

impl Topology {
    pub fn new(aps: Vec<AccessPoint>) -> Result<Self, TopologyError> {
        let topo = Topology { aps };
        topo.validate()?;
        Ok(topo)
    }

    pub fn validate(&self) -> Result<(), TopologyError> {
        if self.aps.is_empty() {
            return Err(TopologyError::Empty);
        }
        for (k, ap) in self.aps.iter().enumerate() {
            if !(ap.d_min > 0.0 && ap.d_min < ap.d_max) {
                return Err(TopologyError::BadAnnulus(k, ap.d_min, ap.d_max));
            }
            if !(ap.p_max > 0.0) {
                return Err(TopologyError::BadPower(k, ap.p_max));
            }
            if !(1..=3).contains(&ap.tier) {
                return Err(TopologyError::BadTier(k, ap.tier));
            }
        }
        Ok(())
    }

    /// Number of AP/UD pairs.
    pub fn k(&self) -> usize {
        self.aps.len()
    }

    pub fn p_max(&self) -> Vec<f64> {
        self.aps.iter().map(|ap| ap.p_max).collect()
    }
}

/// Linear-scale large-scale power gains, constant within an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct LargeScale {
    /// `beta[[m, k]]` = path-loss-and-shadowing gain from AP `k` to UD `m`.
    pub beta: Array2<f64>,
}

/// Small-scale complex fading state for every link, plus the Gauss-Markov
/// correlation coefficient used to advance it.
#[derive(Debug, Clone, PartialEq)]
pub struct SmallScale {
    pub g: Array2<Complex64>,
    pub rho: f64,
}

impl SmallScale {
    /// Fresh stationary state: every entry an independent unit-variance
    /// circularly symmetric complex Gaussian.
    pub fn fresh<R: Rng>(k: usize, rho: f64, rng: &mut R) -> Self {
        let g = Array2::from_shape_fn((k, k), |_| complex_gaussian(rng));
        SmallScale { g, rho }
    }
}

/// Standard normal via Box-Muller.
pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// Unit-variance circularly symmetric complex Gaussian: (x + iy)/sqrt(2).
pub fn complex_gaussian<R: Rng>(rng: &mut R) -> Complex64 {
    let re = standard_normal(rng);
    let im = standard_normal(rng);
    Complex64::new(re, im) / 2.0_f64.sqrt()
}

/// Zeroth-order Bessel function of the first kind.
///
/// Power series below |x| = 8, rational approximation beyond; absolute error
/// well under 1e-6 over the range used here.
pub fn bessel_j0(x: f64) -> f64 {
    let ax = x.abs();
    if ax < 8.0 {
        // J0(x) = sum_m (-1)^m (x^2/4)^m / (m!)^2
        let q = x * x / 4.0;
        let mut term = 1.0;
        let mut sum = 1.0;
        for m in 1..40 {
            term *= -q / ((m * m) as f64);
            sum += term;
            if term.abs() < 1e-16 {
                break;
            }
        }
        sum
    } else {
        let z = 8.0 / ax;
        let y = z * z;
        let p0 = 1.0
            + y * (-0.1098628627e-2
                + y * (0.2734510407e-4 + y * (-0.2073370639e-5 + y * 0.2093887211e-6)));
        let q0 = -0.1562499995e-1
            + y * (0.1430488765e-3
                + y * (-0.6911147651e-5 + y * (0.7621095161e-6 + y * -0.934935152e-7)));
        let xx = ax - 0.25 * PI;
        (2.0 / (PI * ax)).sqrt() * (xx.cos() * p0 - z * xx.sin() * q0)
    }
}

/// Jakes correlation coefficient `J0(2 pi f_D T)` for maximum Doppler shift
/// `f_d` (Hz) and slot duration `t_slot` (s).
pub fn correlation_coefficient(f_d: f64, t_slot: f64) -> f64 {
    bessel_j0(2.0 * PI * f_d * t_slot)
}

/// LTE-style path loss in dB at distance `d` meters.
pub fn path_loss_db(d: f64) -> f64 {
    120.9 + 37.6 * (d / 1000.0).log10()
}

/// Drop one UD per AP, uniform over the area of that AP's coverage annulus.
pub fn place_users<R: Rng>(topology: &Topology, rng: &mut R) -> Vec<[f64; 2]> {
    topology
        .aps
        .iter()
        .map(|ap| {
            // Area-uniform radius: r = sqrt(U[d_min^2, d_max^2]).
            let r2 = rng.gen_range(ap.d_min * ap.d_min..=ap.d_max * ap.d_max);
            let r = r2.sqrt();
            let theta = rng.gen_range(0.0..2.0 * PI);
            [
                ap.position[0] + r * theta.cos(),
                ap.position[1] + r * theta.sin(),
            ]
        })
        .collect()
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Large-scale gain matrix from AP positions and UD positions. Every one of
/// the K^2 links gets an independent zero-mean Gaussian shadowing term of
/// standard deviation `shadow_sigma_db`.
pub fn build_large_scale<R: Rng>(
    topology: &Topology,
    ud_positions: &[[f64; 2]],
    shadow_sigma_db: f64,
    rng: &mut R,
) -> LargeScale {
    let k = topology.k();
    assert_eq!(ud_positions.len(), k, "one UD per AP");
    let beta = Array2::from_shape_fn((k, k), |(m, kk)| {
        let d = distance(topology.aps[kk].position, ud_positions[m]);
        let shadow = shadow_sigma_db * standard_normal(rng);
        10f64.powf(-(path_loss_db(d) + shadow) / 10.0)
    });
    LargeScale { beta }
}

/// Advance every link one slot: `g' = rho g + sqrt(1 - rho^2) i` with
/// independent unit-variance complex Gaussian innovations.
pub fn jakes_step<R: Rng>(state: &mut SmallScale, rng: &mut R) {
    let rho = state.rho;
    let innov_scale = (1.0 - rho * rho).sqrt();
    for g in state.g.iter_mut() {
        *g = rho * *g + innov_scale * complex_gaussian(rng);
    }
}
