//! The multi-cell power-control environment.
//!
//! One call to [`EnvState::step`] is one synchronized time slot: the
//! small-scale fading advances, the joint transmit powers are applied, and
//! per-UD SINR, achievable rates and per-agent local rewards come back.
//! Agents never see the full state; [`EnvState::observe`] builds each agent's
//! local view from its own direct-link gain plus the rate/interference
//! measurements of itself and its `M` nearest other-cell UDs, all taken from
//! the previous slot.
//!
//! Episodes regenerate UD positions and large-scale fading. The slot-0
//! bootstrap transmission at full power populates the first measurements, so
//! agent decisions start at slot 1.

use crate::channel::{
    build_large_scale, jakes_step, place_users, LargeScale, SmallScale, Topology,
};
use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("agent {agent}: power {power} outside budget [0, {p_max}]")]
    PowerOutOfBudget { agent: usize, power: f64, p_max: f64 },
    #[error("joint power vector has length {got}, expected {expected}")]
    WrongPowerCount { got: usize, expected: usize },
    #[error("neighbor count {m} too large for {k} cells (need m <= k - 1)")]
    TooManyNeighbors { m: usize, k: usize },
}

/// Physical parameters that stay fixed across episodes.
#[derive(Debug, Clone, Copy)]
pub struct EnvParams {
    /// Neighbors per agent (M).
    pub neighbors: usize,
    /// AWGN power in watts.
    pub noise_power: f64,
    /// Log-normal shadowing standard deviation in dB.
    pub shadow_sigma_db: f64,
    /// Jakes correlation coefficient.
    pub rho: f64,
}

/// The RNG streams an environment consumes, kept separate so that e.g. a
/// different shadowing draw never perturbs UD placement.
pub struct ChannelStreams {
    pub positions: ChaCha8Rng,
    pub shadowing: ChaCha8Rng,
    pub fading: ChaCha8Rng,
}

/// Per-agent ordered neighbor lists: for AP `k`, the `m` other-cell UD indices
/// closest to AP `k`, ascending by distance with ties broken by lower index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborMap {
    pub lists: Vec<Vec<usize>>,
}

/// An agent's local view: processed direct-link gain plus (rate,
/// interference) measurement pairs for itself and each neighbor, in neighbor
/// order. Flattened length is `2M + 3`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub own_gain_feature: f64,
    /// `(rate_feature, interference_feature)`, self first, then neighbors.
    pub measurements: Vec<(f64, f64)>,
}

impl Observation {
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(1 + 2 * self.measurements.len());
        v.push(self.own_gain_feature);
        for &(r, i) in &self.measurements {
            v.push(r);
            v.push(i);
        }
        v
    }

    pub fn len(&self) -> usize {
        1 + 2 * self.measurements.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Feature transforms. Raw link gains and interference powers span many
/// orders of magnitude, so they are mapped to dB/dBm and affinely rescaled to
/// roughly unit range before entering a network.
pub fn gain_feature(gain_linear: f64) -> f64 {
    (10.0 * gain_linear.max(1e-30).log10() + 110.0) / 40.0
}

pub fn interference_feature(interference_watts: f64) -> f64 {
    let dbm = 10.0 * (interference_watts.max(1e-30) * 1e3).log10();
    (dbm + 90.0) / 40.0
}

pub fn rate_feature(rate: f64) -> f64 {
    rate / 10.0
}

/// Full environment state for one episode in progress.
#[derive(Debug, Clone)]
pub struct EnvState {
    pub topology: Topology,
    pub ud_positions: Vec<[f64; 2]>,
    pub large_scale: LargeScale,
    pub small_scale: SmallScale,
    /// Transmit powers applied in the most recent slot (watts).
    pub powers: Vec<f64>,
    /// Per-UD achievable rate of the most recent slot (bits/s/Hz).
    pub last_rates: Vec<f64>,
    /// Per-UD interference-plus-noise power of the most recent slot (watts).
    pub last_interference: Vec<f64>,
    /// Completed transmission slots this episode (slot 0 is the bootstrap).
    pub slot_index: usize,
    pub noise_power: f64,
}

/// Rates and per-agent rewards produced by one slot.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub rates: Vec<f64>,
    pub rewards: Vec<f64>,
}

/// Per-UD SINR and the interference-plus-noise denominators, from linear
/// channel power gains `|h[[m,k]]|^2 = beta * |g|^2`.
pub fn compute_sinr(
    large_scale: &LargeScale,
    small_scale: &SmallScale,
    powers: &[f64],
    noise_power: f64,
) -> (Vec<f64>, Vec<f64>) {
    let k = powers.len();
    let mut sinr = vec![0.0; k];
    let mut inter = vec![0.0; k];
    for m in 0..k {
        let mut interference = noise_power;
        for kk in 0..k {
            if kk != m {
                let gain = large_scale.beta[[m, kk]] * small_scale.g[[m, kk]].norm_sqr();
                interference += gain * powers[kk];
            }
        }
        let direct = large_scale.beta[[m, m]] * small_scale.g[[m, m]].norm_sqr();
        sinr[m] = direct * powers[m] / interference;
        inter[m] = interference;
    }
    (sinr, inter)
}

/// Shannon rate per UD in bits/s/Hz: `log2(1 + sinr)`.
pub fn compute_rates(sinr: &[f64]) -> Vec<f64> {
    sinr.iter().map(|&g| (1.0 + g).log2()).collect()
}

/// Build the neighbor map: for each AP, the `m` UDs served by other APs with
/// the smallest Euclidean distance to that AP.
pub fn build_neighbor_map(
    topology: &Topology,
    ud_positions: &[[f64; 2]],
    m: usize,
) -> Result<NeighborMap, EnvError> {
    let k = topology.k();
    if m > k - 1 {
        return Err(EnvError::TooManyNeighbors { m, k });
    }
    let lists = (0..k)
        .map(|ap| {
            let p = topology.aps[ap].position;
            let mut others: Vec<(f64, usize)> = ud_positions
                .iter()
                .enumerate()
                .filter(|&(ud, _)| ud != ap)
                .map(|(ud, pos)| {
                    let d = ((pos[0] - p[0]).powi(2) + (pos[1] - p[1]).powi(2)).sqrt();
                    (d, ud)
                })
                .collect();
            others.sort_by(|a, b| a.partial_cmp(b).unwrap());
            others.truncate(m);
            others.into_iter().map(|(_, ud)| ud).collect()
        })
        .collect();
    Ok(NeighborMap { lists })
}

/// Local reward for one agent: mean achievable rate over itself and its
/// neighbor UDs.
pub fn local_reward(rates: &[f64], neighbor_map: &NeighborMap, agent: usize) -> f64 {
    let neighbors = &neighbor_map.lists[agent];
    let sum: f64 = rates[agent] + neighbors.iter().map(|&ud| rates[ud]).sum::<f64>();
    sum / (neighbors.len() + 1) as f64
}

impl EnvState {
    /// Start a new episode: fresh UD positions, shadowing and fading, then a
    /// bootstrap slot at full power so the first observations have
    /// measurements to report.
    pub fn reset_episode(topology: &Topology, params: &EnvParams, streams: &mut ChannelStreams) -> EnvState {
        let ud_positions = place_users(topology, &mut streams.positions);
        let large_scale =
            build_large_scale(topology, &ud_positions, params.shadow_sigma_db, &mut streams.shadowing);
        let small_scale = SmallScale::fresh(topology.k(), params.rho, &mut streams.fading);
        let powers = topology.p_max();
        let (sinr, last_interference) =
            compute_sinr(&large_scale, &small_scale, &powers, params.noise_power);
        let last_rates = compute_rates(&sinr);
        EnvState {
            topology: topology.clone(),
            ud_positions,
            large_scale,
            small_scale,
            powers,
            last_rates,
            last_interference,
            slot_index: 0,
            noise_power: params.noise_power,
        }
    }

    fn validate_powers(&self, joint_powers: &[f64]) -> Result<(), EnvError> {
        let k = self.topology.k();
        if joint_powers.len() != k {
            return Err(EnvError::WrongPowerCount { got: joint_powers.len(), expected: k });
        }
        for (agent, (&p, ap)) in joint_powers.iter().zip(&self.topology.aps).enumerate() {
            if !(0.0..=ap.p_max).contains(&p) || !p.is_finite() {
                return Err(EnvError::PowerOutOfBudget { agent, power: p, p_max: ap.p_max });
            }
        }
        Ok(())
    }

    /// Advance the small-scale fading to the next slot's channel without
    /// transmitting yet.
    pub fn advance_fading<R: Rng>(&mut self, rng: &mut R) {
        jakes_step(&mut self.small_scale, rng);
    }

    /// Transmit on the current channel: apply `joint_powers`, record rates
    /// and interference, count the slot.
    pub fn transmit(
        &mut self,
        joint_powers: &[f64],
        neighbor_map: &NeighborMap,
    ) -> Result<StepOutcome, EnvError> {
        self.validate_powers(joint_powers)?;
        let k = self.topology.k();
        let (sinr, interference) =
            compute_sinr(&self.large_scale, &self.small_scale, joint_powers, self.noise_power);
        let rates = compute_rates(&sinr);
        let rewards = (0..k).map(|a| local_reward(&rates, neighbor_map, a)).collect();
        self.powers = joint_powers.to_vec();
        self.last_rates = rates.clone();
        self.last_interference = interference;
        self.slot_index += 1;
        Ok(StepOutcome { rates, rewards })
    }

    /// One synchronized slot: advance fading, transmit with `joint_powers`,
    /// record measurements. Fails without mutating anything if any power is
    /// outside its AP's budget.
    pub fn step<R: Rng>(
        &mut self,
        joint_powers: &[f64],
        neighbor_map: &NeighborMap,
        rng: &mut R,
    ) -> Result<StepOutcome, EnvError> {
        self.validate_powers(joint_powers)?;
        self.advance_fading(rng);
        self.transmit(joint_powers, neighbor_map)
    }

    /// Assemble agent `agent`'s local observation from the most recent slot.
    pub fn observe(&self, neighbor_map: &NeighborMap, agent: usize) -> Observation {
        let own_gain = self.large_scale.beta[[agent, agent]]
            * self.small_scale.g[[agent, agent]].norm_sqr();
        let mut measurements = Vec::with_capacity(neighbor_map.lists[agent].len() + 1);
        let pair = |ud: usize| {
            (
                rate_feature(self.last_rates[ud]),
                interference_feature(self.last_interference[ud]),
            )
        };
        measurements.push(pair(agent));
        for &ud in &neighbor_map.lists[agent] {
            measurements.push(pair(ud));
        }
        Observation { own_gain_feature: gain_feature(own_gain), measurements }
    }

    /// Complex channel matrix `h[[m,k]] = sqrt(beta) * g` of the current slot.
    pub fn channel_matrix(&self) -> Array2<Complex64> {
        let k = self.topology.k();
        Array2::from_shape_fn((k, k), |(m, kk)| {
            self.large_scale.beta[[m, kk]].sqrt() * self.small_scale.g[[m, kk]]
        })
    }
}
