//! Q-table versions of the two update rules, exercised on a small
//! cooperative repeated matrix game.
//!
//! The tabular PQL rule mirrors the deep variant: the selected action gets
//! the usual TD update; every other action at the same observation is
//! penalized by a flat `beta` when the experience was significantly good
//! (`C1 > t1`) and that action's estimate is within `t2` of the row maximum
//! (`C2 < t2`). Both gates are evaluated on a snapshot of the table taken
//! before any cell changes, so the result does not depend on action order.
//! Unlike the HetNet agents, the thresholds here are absolute constants.

use rand::Rng;
use std::collections::HashMap;

/// A tabular experience: observation ids instead of feature vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TabularExperience {
    pub obs: u64,
    pub action: usize,
    pub reward: f64,
    pub next_obs: u64,
}

/// Q table over (observation id, action id) with the learning constants it
/// is updated under. Unseen rows read as all zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    rows: HashMap<u64, Vec<f64>>,
    pub n_actions: usize,
    /// Learning rate.
    pub alpha: f64,
    /// Penalty subtracted from gated non-selected actions.
    pub beta: f64,
    /// Significance threshold on `C1`.
    pub t1: f64,
    /// Closeness threshold on `C2`.
    pub t2: f64,
    /// Discount factor.
    pub gamma: f64,
}

impl QTable {
    pub fn new(n_actions: usize, alpha: f64, beta: f64, t1: f64, t2: f64, gamma: f64) -> QTable {
        assert!(n_actions > 0);
        assert!(alpha > 0.0 && alpha <= 1.0, "alpha in (0, 1]");
        assert!(beta >= 0.0 && t1 >= 0.0 && t2 >= 0.0);
        assert!((0.0..=1.0).contains(&gamma));
        QTable { rows: HashMap::new(), n_actions, alpha, beta, t1, t2, gamma }
    }

    pub fn q(&self, obs: u64, action: usize) -> f64 {
        self.rows.get(&obs).map(|r| r[action]).unwrap_or(0.0)
    }

    pub fn row(&self, obs: u64) -> Vec<f64> {
        self.rows
            .get(&obs)
            .cloned()
            .unwrap_or_else(|| vec![0.0; self.n_actions])
    }

    pub fn max_q(&self, obs: u64) -> f64 {
        self.row(obs).into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Greedy action, ties broken by the lowest index.
    pub fn greedy(&self, obs: u64) -> usize {
        crate::agents::argmax(&self.row(obs))
    }

    fn row_mut(&mut self, obs: u64) -> &mut Vec<f64> {
        let n = self.n_actions;
        self.rows.entry(obs).or_insert_with(|| vec![0.0; n])
    }
}

/// Plain independent Q-learning update: only the selected cell changes.
pub fn iql_update(table: &mut QTable, e: &TabularExperience) {
    let delta = e.reward + table.gamma * table.max_q(e.next_obs) - table.q(e.obs, e.action);
    let alpha = table.alpha;
    table.row_mut(e.obs)[e.action] += alpha * delta;
}

/// Penalty-based update: like [`iql_update`] on the selected action, plus a
/// flat `beta` penalty on every other gated action of the same row. Gates are
/// evaluated on the pre-update table.
pub fn pql_update(table: &mut QTable, e: &TabularExperience) {
    let snapshot = table.row(e.obs);
    let max_q = snapshot.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let target = e.reward + table.gamma * table.max_q(e.next_obs);
    let delta = target - snapshot[e.action];
    let c1 = target - max_q;
    let (alpha, beta, t1, t2) = (table.alpha, table.beta, table.t1, table.t2);
    let row = table.row_mut(e.obs);
    row[e.action] += alpha * delta;
    if c1 > t1 {
        for (a, cell) in row.iter_mut().enumerate() {
            if a != e.action && max_q - snapshot[a] < t2 {
                *cell -= beta;
            }
        }
    }
}

/// N-player repeated game with one shared reward per joint action.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixGame {
    pub n_agents: usize,
    pub n_actions: usize,
    /// Row-major over joint actions: index = sum_i a_i * n_actions^(N-1-i).
    pub rewards: Vec<f64>,
    pub shared_reward: bool,
}

impl MatrixGame {
    pub fn new(n_agents: usize, n_actions: usize, rewards: Vec<f64>) -> MatrixGame {
        assert_eq!(
            rewards.len(),
            n_actions.pow(n_agents as u32),
            "reward table must cover all joint actions"
        );
        MatrixGame { n_agents, n_actions, rewards, shared_reward: true }
    }

    pub fn reward(&self, joint: &[usize]) -> f64 {
        assert_eq!(joint.len(), self.n_agents);
        let mut idx = 0;
        for &a in joint {
            assert!(a < self.n_actions);
            idx = idx * self.n_actions + a;
        }
        self.rewards[idx]
    }

    /// The classic two-player climbing game: the best joint action sits next
    /// to heavy miscoordination penalties, so independent learners tend to
    /// retreat to a safer, worse equilibrium.
    pub fn climbing() -> MatrixGame {
        MatrixGame::new(
            2,
            3,
            vec![
                11.0, -30.0, 0.0, //
                -30.0, 7.0, 6.0, //
                0.0, 0.0, 5.0,
            ],
        )
    }

    /// Joint action with the highest shared reward.
    pub fn best_joint(&self) -> Vec<usize> {
        let best = self
            .rewards
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        let mut joint = vec![0; self.n_agents];
        let mut idx = best;
        for slot in joint.iter_mut().rev() {
            *slot = idx % self.n_actions;
            idx /= self.n_actions;
        }
        joint
    }
}

/// Which tabular rule a learner runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateRule {
    Iql,
    Pql,
}

/// One independent learner in the repeated game.
#[derive(Debug, Clone)]
pub struct TabularLearner {
    pub table: QTable,
    pub rule: UpdateRule,
    /// Exploration: eps_t = max(eps0 * decay^t, floor).
    pub eps0: f64,
    pub eps_decay: f64,
    pub eps_floor: f64,
}

impl TabularLearner {
    pub fn epsilon(&self, episode: usize) -> f64 {
        (self.eps0 * self.eps_decay.powi(episode as i32)).max(self.eps_floor)
    }

    pub fn update(&mut self, e: &TabularExperience) {
        match self.rule {
            UpdateRule::Iql => iql_update(&mut self.table, e),
            UpdateRule::Pql => pql_update(&mut self.table, e),
        }
    }
}

/// Epsilon-greedy self-play on the single-observation repeated game; returns
/// the shared reward of every episode.
pub fn play_matrix_game<R: Rng>(
    game: &MatrixGame,
    learners: &mut [TabularLearner],
    episodes: usize,
    rng: &mut R,
) -> Vec<f64> {
    assert_eq!(learners.len(), game.n_agents, "one learner per player");
    const OBS: u64 = 0;
    let mut rewards = Vec::with_capacity(episodes);
    for ep in 0..episodes {
        let joint: Vec<usize> = learners
            .iter()
            .map(|l| {
                if rng.gen::<f64>() < l.epsilon(ep) {
                    rng.gen_range(0..game.n_actions)
                } else {
                    l.table.greedy(OBS)
                }
            })
            .collect();
        let r = game.reward(&joint);
        for (learner, &action) in learners.iter_mut().zip(&joint) {
            learner.update(&TabularExperience { obs: OBS, action, reward: r, next_obs: OBS });
        }
        rewards.push(r);
    }
    rewards
}

/// Standard learner setup for the climbing-game comparison.
pub fn climbing_learner(rule: UpdateRule) -> TabularLearner {
    // beta matches the gap between the best and second-best coordinated
    // payoffs; smaller penalties are drowned out by the -30 miscoordination
    // updates before the optimum can lock in.
    let beta = match rule {
        UpdateRule::Iql => 0.0,
        UpdateRule::Pql => 4.0,
    };
    TabularLearner {
        table: QTable::new(3, 0.05, beta, 1.0, 2.0, 0.0),
        rule,
        eps0: 1.0,
        eps_decay: 0.998,
        eps_floor: 0.02,
    }
}

/// Fraction of seeded self-play runs that end with both learners greedy on
/// the optimal joint action.
pub fn climbing_convergence_fraction(rule: UpdateRule, seeds: u64, episodes: usize) -> f64 {
    use rand::SeedableRng;
    let game = MatrixGame::climbing();
    let best = game.best_joint();
    let mut hits = 0;
    for seed in 0..seeds {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut learners = vec![climbing_learner(rule), climbing_learner(rule)];
        play_matrix_game(&game, &mut learners, episodes, &mut rng);
        let greedy: Vec<usize> = learners.iter().map(|l| l.table.greedy(0)).collect();
        if greedy == best {
            hits += 1;
        }
    }
    hits as f64 / seeds as f64
}
