//! Exact tabular ground truth for one goal at a time: optimal values and
//! policies by value iteration, policy evaluation, and exact successor
//! features by iterating their Bellman equation to fixed point.
//!
//! Conventions match the environment: reward 1 on entering the goal, the
//! bootstrap is cut when the next state is terminal, and successor features
//! of terminal states are zero.

use crate::env::{EnvError, GridWorld, Observation, Position, NUM_ACTIONS};

/// Deterministic tabular MDP over the navigable cells of a world.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    pub n_states: usize,
    /// next-state index per (state, action); terminal states self-loop.
    pub transition: Vec<[usize; NUM_ACTIONS]>,
    pub terminal: Vec<bool>,
    pub gamma: f64,
    /// state index -> grid cell, row-major order.
    pub positions: Vec<Position>,
}

impl TabularMdp {
    pub fn state_of(&self, p: Position) -> Option<usize> {
        self.positions.iter().position(|q| *q == p)
    }

    /// The sparse goal reward: 1 exactly when a non-terminal state enters the
    /// terminal cell.
    pub fn goal_reward(&self, s: usize, _a: usize, s_next: usize) -> f64 {
        if !self.terminal[s] && self.terminal[s_next] {
            1.0
        } else {
            0.0
        }
    }
}

/// Exact optimal values, greedy policy, and successor features for one goal.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub goal: Position,
    pub v_star: Vec<f64>,
    pub pi_star: Vec<usize>,
    pub psi_exact: Vec<Vec<f64>>,
}

/// Enumerates the navigable cells and mirrors the environment's dynamics
/// exactly; the goal cell becomes the sole terminal state.
pub fn extract_mdp(world: &GridWorld, goal: Position) -> Result<TabularMdp, EnvError> {
    let layout = world.layout();
    if !layout.is_navigable(goal) {
        return Err(EnvError::NotNavigable { row: goal.row, col: goal.col });
    }
    let positions = layout.navigable_cells();
    let index_of = |p: Position| positions.iter().position(|q| *q == p).expect("navigable cell");
    let mut transition = Vec::with_capacity(positions.len());
    let mut terminal = vec![false; positions.len()];
    for (s, p) in positions.iter().enumerate() {
        if *p == goal {
            terminal[s] = true;
            transition.push([s; NUM_ACTIONS]);
            continue;
        }
        let mut row = [0usize; NUM_ACTIONS];
        for (a, slot) in row.iter_mut().enumerate() {
            *slot = index_of(layout.next_cell(*p, a)?);
        }
        transition.push(row);
    }
    Ok(TabularMdp { n_states: positions.len(), transition, terminal, gamma: world.gamma_base(), positions })
}

fn bootstrap(mdp: &TabularMdp, v: &[f64], s_next: usize) -> f64 {
    if mdp.terminal[s_next] {
        0.0
    } else {
        mdp.gamma * v[s_next]
    }
}

/// Sup-norm value iteration; greedy policy breaks ties toward the lowest
/// action index.
pub fn value_iteration<R>(mdp: &TabularMdp, reward: R, tol: f64) -> (Vec<f64>, Vec<usize>)
where
    R: Fn(usize, usize, usize) -> f64,
{
    assert!(tol > 0.0, "tolerance must be positive");
    assert!(mdp.gamma >= 0.0 && mdp.gamma < 1.0, "gamma must lie in [0, 1)");
    let mut v = vec![0.0; mdp.n_states];
    loop {
        let mut delta: f64 = 0.0;
        let mut next = vec![0.0; mdp.n_states];
        for s in 0..mdp.n_states {
            if mdp.terminal[s] {
                continue;
            }
            let mut best = f64::NEG_INFINITY;
            for a in 0..NUM_ACTIONS {
                let sn = mdp.transition[s][a];
                let q = reward(s, a, sn) + bootstrap(mdp, &v, sn);
                if q > best {
                    best = q;
                }
            }
            next[s] = best;
            delta = delta.max((next[s] - v[s]).abs());
        }
        v = next;
        if delta < tol {
            break;
        }
    }
    let pi = greedy_policy(mdp, &reward, &v);
    (v, pi)
}

fn greedy_policy<R>(mdp: &TabularMdp, reward: &R, v: &[f64]) -> Vec<usize>
where
    R: Fn(usize, usize, usize) -> f64,
{
    (0..mdp.n_states)
        .map(|s| {
            let mut best_a = 0;
            let mut best_q = f64::NEG_INFINITY;
            for a in 0..NUM_ACTIONS {
                let sn = mdp.transition[s][a];
                let q = reward(s, a, sn) + bootstrap(mdp, v, sn);
                if q > best_q {
                    best_q = q;
                    best_a = a;
                }
            }
            best_a
        })
        .collect()
}

/// Iterative policy evaluation of a deterministic policy, to sup-norm `tol`.
pub fn policy_evaluation<R>(mdp: &TabularMdp, policy: &[usize], reward: R, tol: f64) -> Vec<f64>
where
    R: Fn(usize, usize, usize) -> f64,
{
    assert!(tol > 0.0);
    let mut v = vec![0.0; mdp.n_states];
    loop {
        let mut delta: f64 = 0.0;
        for s in 0..mdp.n_states {
            if mdp.terminal[s] {
                continue;
            }
            let a = policy[s];
            let sn = mdp.transition[s][a];
            let new = reward(s, a, sn) + bootstrap(mdp, &v, sn);
            delta = delta.max((new - v[s]).abs());
            v[s] = new;
        }
        if delta < tol {
            return v;
        }
    }
}

/// Largest Bellman-optimality residual of `v` over all states.
pub fn bellman_residual<R>(mdp: &TabularMdp, reward: R, v: &[f64]) -> f64
where
    R: Fn(usize, usize, usize) -> f64,
{
    let mut worst: f64 = 0.0;
    for s in 0..mdp.n_states {
        if mdp.terminal[s] {
            worst = worst.max(v[s].abs());
            continue;
        }
        let best = (0..NUM_ACTIONS)
            .map(|a| {
                let sn = mdp.transition[s][a];
                reward(s, a, sn) + bootstrap(mdp, v, sn)
            })
            .fold(f64::NEG_INFINITY, f64::max);
        worst = worst.max((v[s] - best).abs());
    }
    worst
}

const PSI_TOL: f64 = 1e-12;

/// Solves psi(s) = phi(s') + gamma * [s' not terminal] * psi(s') along the
/// deterministic policy, with psi(terminal) = 0, by iteration to 1e-12.
pub fn exact_successor_features(mdp: &TabularMdp, policy: &[usize], feature_map: &[Vec<f64>]) -> Vec<Vec<f64>> {
    assert_eq!(feature_map.len(), mdp.n_states, "one feature vector per state");
    assert_eq!(policy.len(), mdp.n_states);
    let d = feature_map.first().map_or(0, Vec::len);
    let mut psi = vec![vec![0.0; d]; mdp.n_states];
    loop {
        let mut delta: f64 = 0.0;
        let mut next = vec![vec![0.0; d]; mdp.n_states];
        for s in 0..mdp.n_states {
            if mdp.terminal[s] {
                continue;
            }
            let sn = mdp.transition[s][policy[s]];
            let gamma = if mdp.terminal[sn] { 0.0 } else { mdp.gamma };
            for j in 0..d {
                next[s][j] = feature_map[sn][j] + gamma * psi[sn][j];
                delta = delta.max((next[s][j] - psi[s][j]).abs());
            }
        }
        psi = next;
        if delta < PSI_TOL {
            return psi;
        }
    }
}

/// Residual of the successor-feature Bellman equation, sup over states/dims.
pub fn psi_residual(mdp: &TabularMdp, policy: &[usize], feature_map: &[Vec<f64>], psi: &[Vec<f64>]) -> f64 {
    let d = feature_map.first().map_or(0, Vec::len);
    let mut worst: f64 = 0.0;
    for s in 0..mdp.n_states {
        if mdp.terminal[s] {
            for j in 0..d {
                worst = worst.max(psi[s][j].abs());
            }
            continue;
        }
        let sn = mdp.transition[s][policy[s]];
        let gamma = if mdp.terminal[sn] { 0.0 } else { mdp.gamma };
        for j in 0..d {
            worst = worst.max((feature_map[sn][j] + gamma * psi[sn][j] - psi[s][j]).abs());
        }
    }
    worst
}

/// Reference action distribution per state: one-hot greedy at temperature 0
/// (lowest-index ties), otherwise a softmax over one-step look-ahead values
/// scaled by 1/temperature.
pub fn optimal_policy_distribution(mdp: &TabularMdp, v_star: &[f64], temperature: f64) -> Vec<[f64; NUM_ACTIONS]> {
    assert!(temperature >= 0.0);
    (0..mdp.n_states)
        .map(|s| {
            let q: Vec<f64> = (0..NUM_ACTIONS)
                .map(|a| {
                    let sn = mdp.transition[s][a];
                    mdp.goal_reward(s, a, sn) + bootstrap(mdp, v_star, sn)
                })
                .collect();
            let mut row = [0.0; NUM_ACTIONS];
            if temperature == 0.0 {
                let mut best_a = 0;
                let mut best_q = f64::NEG_INFINITY;
                for (a, qa) in q.iter().enumerate() {
                    if *qa > best_q {
                        best_q = *qa;
                        best_a = a;
                    }
                }
                row[best_a] = 1.0;
            } else {
                let scaled: Vec<f64> = q.iter().map(|qa| qa / temperature).collect();
                row.copy_from_slice(&crate::nn::softmax(&scaled));
            }
            row
        })
        .collect()
}

/// One-hot tabular feature map: phi(s) = Observation(s), the exactly
/// factorizable case.
pub fn one_hot_features(world: &GridWorld, mdp: &TabularMdp) -> Vec<Vec<f64>> {
    mdp.positions
        .iter()
        .map(|p| Observation::of_cell(world.layout(), *p).pixels().to_vec())
        .collect()
}

/// Full exact solution for one goal using one-hot features.
pub fn solve_goal(world: &GridWorld, goal: Position, tol: f64) -> Result<OracleSolution, EnvError> {
    let mdp = extract_mdp(world, goal)?;
    let (v_star, pi_star) = value_iteration(&mdp, |s, a, sn| mdp.goal_reward(s, a, sn), tol);
    let features = one_hot_features(world, &mdp);
    let psi_exact = exact_successor_features(&mdp, &pi_star, &features);
    Ok(OracleSolution { goal, v_star, pi_star, psi_exact })
}
