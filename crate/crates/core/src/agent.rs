//! Two-phase training. Phase 1 fits the state-feature autoencoder on
//! observations gathered by a random policy, then freezes it. Phase 2 runs
//! strictly online actor-critic updates, one gradient step per transition:
//! regress the goal weights, regress the successor features against a
//! constant TD target, form the advantage in feature space, and ascend the
//! policy gradient.

use std::collections::VecDeque;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::derive_seed;
use crate::env::{EnvError, GridWorld, Observation, Position, Start, Transition, NUM_ACTIONS};
use crate::models::{concat_obs, ModelError, UsrModel};
use crate::nn::{dot, Optimizer, OptimizerKind};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
    #[error("state features must be frozen before phase-2 updates")]
    PhiNotFrozen,
    #[error("state features are already frozen; phase 1 cannot run again")]
    PhiAlreadyFrozen,
    #[error("training diverged at env step {step}: {what}")]
    Diverged { step: u64, what: String },
    #[error("invalid config: {0}")]
    BadConfig(String),
}

/// Which state's features enter the TD target. `Next` uses phi(s_{t+1}),
/// which makes psi . w telescope to the discounted return of r = phi(s')^T w;
/// `Current` keeps the literal phi(s_t) variant for comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhiIndexing {
    Current,
    Next,
}

impl PhiIndexing {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "current" => Some(PhiIndexing::Current),
            "next" => Some(PhiIndexing::Next),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PhiIndexing::Current => "current",
            PhiIndexing::Next => "next",
        }
    }
}

/// Convergence rule for "train until it converges": a sliding window of 200
/// episodes with mean success at least 0.95, or the step budget.
pub const SUCCESS_WINDOW: usize = 200;
pub const SUCCESS_THRESHOLD: f64 = 0.95;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr_w: f64,
    pub lr_psi: f64,
    pub lr_pi: f64,
    pub lr_phi: f64,
    pub phase1_samples: usize,
    pub phase1_epochs: usize,
    pub max_env_steps: u64,
    pub entropy_coef: f64,
    pub eval_every: u64,
    pub seed: u64,
    pub phi_indexing: PhiIndexing,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_w: 1e-3,
            lr_psi: 1e-3,
            lr_pi: 1e-4,
            lr_phi: 1e-3,
            phase1_samples: 4000,
            phase1_epochs: 50,
            max_env_steps: 200_000,
            entropy_coef: 0.01,
            eval_every: 500,
            seed: 1,
            phi_indexing: PhiIndexing::Next,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        for (name, lr) in [
            ("lr_w", self.lr_w),
            ("lr_psi", self.lr_psi),
            ("lr_pi", self.lr_pi),
            ("lr_phi", self.lr_phi),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(AgentError::BadConfig(format!("{name} must be positive, got {lr}")));
            }
        }
        if self.phase1_samples == 0 || self.phase1_epochs == 0 {
            return Err(AgentError::BadConfig("phase-1 sample and epoch counts must be at least 1".into()));
        }
        if self.max_env_steps == 0 {
            return Err(AgentError::BadConfig("max_env_steps must be at least 1".into()));
        }
        if !(self.entropy_coef >= 0.0 && self.entropy_coef.is_finite()) {
            return Err(AgentError::BadConfig(format!("entropy_coef must be >= 0, got {}", self.entropy_coef)));
        }
        if self.eval_every == 0 {
            return Err(AgentError::BadConfig("eval_every must be at least 1".into()));
        }
        Ok(())
    }
}

/// One per-episode record of the phase-2 log.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogRow {
    pub env_step: u64,
    pub goal: Position,
    pub episode_return: f64,
    pub episode_length: usize,
    pub loss_w: f64,
    pub loss_psi: f64,
    pub advantage_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub rows: Vec<TrainLogRow>,
    pub converged: bool,
    pub total_steps: u64,
}

impl TrainLog {
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "env_step,goal_row,goal_col,episode_return,episode_length,loss_w,loss_psi,advantage_mean")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.env_step, r.goal.row, r.goal.col, r.episode_return, r.episode_length, r.loss_w, r.loss_psi,
                r.advantage_mean
            )?;
        }
        Ok(())
    }
}

/// Phase-1 log: mean reconstruction error per epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainLog {
    pub samples_collected: usize,
    pub epoch_mse: Vec<f64>,
}

impl PretrainLog {
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "epoch,mean_reconstruction_mse")?;
        for (i, mse) in self.epoch_mse.iter().enumerate() {
            writeln!(w, "{i},{mse}")?;
        }
        Ok(())
    }
}

/// Scalars returned by one phase-2 update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub loss_w: f64,
    pub loss_psi: f64,
    pub advantage: f64,
}

/// Collects observations under a uniform-random policy over random goals and
/// starts, trains the autoencoder on them, then freezes the features.
pub fn pretrain_phi(
    world: &mut GridWorld,
    model: &mut UsrModel,
    config: &TrainConfig,
) -> Result<PretrainLog, AgentError> {
    config.validate()?;
    if model.phi_frozen() {
        return Err(AgentError::PhiAlreadyFrozen);
    }
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(config.seed, "phase1"));
    let cells = world.layout().navigable_cells();

    let mut samples: Vec<Observation> = Vec::with_capacity(config.phase1_samples);
    while samples.len() < config.phase1_samples {
        let goal = cells[rng.random_range(0..cells.len())];
        let obs = world.reset(goal, Start::Random)?;
        samples.push(obs);
        while !world.finished() && samples.len() < config.phase1_samples {
            let t = world.step(rng.random_range(0..NUM_ACTIONS))?;
            samples.push(t.s_next);
        }
    }

    let n_params = model.encoder.params().len() + model.decoder.params().len();
    let mut opt = Optimizer::new(config.optimizer, n_params);
    let mut epoch_mse = Vec::with_capacity(config.phase1_epochs);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut enc_acc = model.encoder.params().zeros_like();
    let mut dec_acc = model.decoder.params().zeros_like();
    for _ in 0..config.phase1_epochs {
        // fresh shuffle per epoch
        for i in 0..order.len() {
            let j = rng.random_range(i..order.len());
            order.swap(i, j);
        }
        let mut total = 0.0;
        for batch in order.chunks(PHASE1_BATCH) {
            enc_acc.fill_zero();
            dec_acc.fill_zero();
            for &idx in batch {
                let x = samples[idx].pixels();
                let enc_trace = model.encoder.forward_trace(x)?;
                let dec_trace = model.decoder.forward_trace(enc_trace.output())?;
                let recon = dec_trace.output();
                let n = recon.len() as f64;
                let mut upstream = vec![0.0; recon.len()];
                let mut mse = 0.0;
                for (u, (r, t)) in upstream.iter_mut().zip(recon.iter().zip(x)) {
                    let diff = r - t;
                    mse += diff * diff;
                    *u = 2.0 * diff / n;
                }
                total += mse / n;
                let dec_bp = model.decoder.backward(&dec_trace, &upstream)?;
                let enc_bp = model.encoder.backward(&enc_trace, &dec_bp.input_grad)?;
                enc_acc.add_assign(&enc_bp.param_grad);
                dec_acc.add_assign(&dec_bp.param_grad);
            }
            let inv = 1.0 / batch.len() as f64;
            enc_acc.scale(inv);
            dec_acc.scale(inv);
            let mut parts = [
                (model.encoder.params_mut().values_mut(), enc_acc.values()),
                (model.decoder.params_mut().values_mut(), dec_acc.values()),
            ];
            opt.step_slices(config.lr_phi, &mut parts)
                .map_err(|e| AgentError::Diverged { step: 0, what: e.to_string() })?;
        }
        epoch_mse.push(total / samples.len() as f64);
    }
    model.freeze_phi();
    Ok(PretrainLog { samples_collected: samples.len(), epoch_mse })
}

/// Minibatch size for phase-1 autoencoder updates.
const PHASE1_BATCH: usize = 32;

/// Samples an action from pi(. | s, g) with the provided generator.
pub fn act(model: &UsrModel, s: &Observation, g: &Observation, rng: &mut impl Rng) -> Result<usize, ModelError> {
    let policy = model.policy_of(s, g)?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (a, p) in policy.iter().enumerate() {
        acc += p;
        if u < acc {
            return Ok(a);
        }
    }
    Ok(policy.len() - 1)
}

fn advantage_core(phi_x: &[f64], psi_next: &[f64], psi_t: &[f64], gamma_t: f64, w: &[f64]) -> f64 {
    let td: Vec<f64> = (0..phi_x.len())
        .map(|j| phi_x[j] + gamma_t * psi_next[j] - psi_t[j])
        .collect();
    dot(&td, w)
}

/// The advantage of line 5, recomputed purely from the model's public
/// forward ops: [phi_x + gamma_t psi(s', g) - psi(s, g)] . w(g).
pub fn advantage(
    model: &UsrModel,
    t: &Transition,
    goal_obs: &Observation,
    phi_indexing: PhiIndexing,
) -> Result<f64, ModelError> {
    let phi_x = match phi_indexing {
        PhiIndexing::Next => model.encode_phi(&t.s_next)?.phi,
        PhiIndexing::Current => model.encode_phi(&t.s_t)?.phi,
    };
    let psi_next = model.usr_forward(&t.s_next, goal_obs)?.psi;
    let psi_t = model.usr_forward(&t.s_t, goal_obs)?.psi;
    let w = model.goal_weights(goal_obs)?.w;
    Ok(advantage_core(&phi_x, &psi_next, &psi_t, t.gamma_t, &w))
}

/// Deep parameter copy for transfer-as-initialization. Optimizer state is not
/// part of the model; a fresh [`Trainer`] starts with zero moments.
pub fn transfer_init(trained: &UsrModel) -> UsrModel {
    trained.clone()
}

/// Evaluates pi(. | s, g) at every navigable cell without updating anything.
pub fn zero_shot_policy(
    model: &UsrModel,
    world: &GridWorld,
    g: Position,
) -> Result<Vec<(Position, Vec<f64>)>, AgentError> {
    let goal_obs = world.render_goal(g)?;
    let mut table = Vec::new();
    for cell in world.layout().navigable_cells() {
        let s = Observation::of_cell(world.layout(), cell);
        let policy = model.usr_forward(&s, &goal_obs)?.policy;
        table.push((cell, policy));
    }
    Ok(table)
}

/// Owns the model and the per-loss optimizer states for phase-2 training.
///
/// The trunk belongs to both the psi and the policy optimizer; the two keep
/// separate moment estimates and apply their updates sequentially within one
/// step, in the order of the update rule.
pub struct Trainer {
    model: UsrModel,
    config: TrainConfig,
    opt_w: Optimizer,
    opt_psi: Optimizer,
    opt_pi: Optimizer,
    rng: ChaCha12Rng,
    env_steps: u64,
    // frozen-phi memo keyed by the hot pixel of one-hot observations
    phi_cache: Vec<Option<Vec<f64>>>,
}

impl Trainer {
    pub fn new(model: UsrModel, config: TrainConfig) -> Result<Self, AgentError> {
        config.validate()?;
        if !model.phi_frozen() {
            return Err(AgentError::PhiNotFrozen);
        }
        let trunk_len = model.trunk.params().len();
        let opt_w = Optimizer::new(config.optimizer, model.w_net.params().len());
        let opt_psi = Optimizer::new(config.optimizer, trunk_len + model.psi_head.params().len());
        let opt_pi = Optimizer::new(config.optimizer, trunk_len + model.policy_head.params().len());
        let rng = ChaCha12Rng::seed_from_u64(derive_seed(config.seed, "episodes"));
        let phi_cache = vec![None; model.obs_dim()];
        Ok(Trainer { model, config, opt_w, opt_psi, opt_pi, rng, env_steps: 0, phi_cache })
    }

    /// phi of a one-hot observation, memoized; valid because phi is frozen
    /// for the lifetime of the trainer.
    fn phi_of(&mut self, obs: &Observation) -> Result<Vec<f64>, ModelError> {
        if let Some(idx) = obs.hot_index() {
            if let Some(Some(phi)) = self.phi_cache.get(idx) {
                return Ok(phi.clone());
            }
            let phi = self.model.encode_phi(obs)?.phi;
            if idx < self.phi_cache.len() {
                self.phi_cache[idx] = Some(phi.clone());
            }
            return Ok(phi);
        }
        Ok(self.model.encode_phi(obs)?.phi)
    }

    /// Continues env-step numbering from a checkpoint.
    pub fn with_env_steps(mut self, env_steps: u64) -> Self {
        self.env_steps = env_steps;
        self
    }

    pub fn model(&self) -> &UsrModel {
        &self.model
    }

    pub fn into_model(self) -> UsrModel {
        self.model
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn moments_are_zero(&self) -> bool {
        self.opt_w.moments_are_zero() && self.opt_psi.moments_are_zero() && self.opt_pi.moments_are_zero()
    }

    /// One Algorithm-1 step over a single transition, in order: (a) goal
    /// weights, (b) successor features against a constant TD target, (c)
    /// advantage with post-update parameters, (d) policy gradient ascent.
    pub fn update_step(&mut self, t: &Transition, goal_obs: &Observation) -> Result<StepStats, AgentError> {
        if !self.model.phi_frozen() {
            return Err(AgentError::PhiNotFrozen);
        }
        let step = self.env_steps;
        let diverged = |what: String| AgentError::Diverged { step, what };

        // (a) regress r onto phi(s_{t+1})^T w(g), touching only the w net
        let phi_next = self.phi_of(&t.s_next)?;
        let loss_w = {
            let trace = self.model.w_net.forward_trace(goal_obs.pixels())?;
            let pred = dot(&phi_next, trace.output());
            let delta = t.r_t - pred;
            let upstream: Vec<f64> = phi_next.iter().map(|p| -2.0 * delta * p).collect();
            let bp = self.model.w_net.backward(&trace, &upstream)?;
            let mut parts = [(self.model.w_net.params_mut().values_mut(), bp.param_grad.values())];
            self.opt_w
                .step_slices(self.config.lr_w, &mut parts)
                .map_err(|e| diverged(format!("w update: {e}")))?;
            delta * delta
        };

        // (b) regress psi(s_t, g) toward phi_x + gamma_t psi(s_{t+1}, g); the
        // target is a constant, nothing flows back through the bootstrap
        let phi_x = match self.config.phi_indexing {
            PhiIndexing::Next => phi_next,
            PhiIndexing::Current => self.phi_of(&t.s_t)?,
        };
        let psi_next = self.model.psi_of(&t.s_next, goal_obs)?;
        let target: Vec<f64> = phi_x.iter().zip(&psi_next).map(|(p, q)| p + t.gamma_t * q).collect();
        let loss_psi = {
            let input = concat_obs(&t.s_t, goal_obs);
            let trunk_trace = self.model.trunk.forward_trace(&input)?;
            let head_trace = self.model.psi_head.forward_trace(trunk_trace.output())?;
            let psi_t = head_trace.output();
            let mut upstream = vec![0.0; psi_t.len()];
            let mut loss = 0.0;
            for (u, (tj, pj)) in upstream.iter_mut().zip(target.iter().zip(psi_t)) {
                let diff = tj - pj;
                loss += diff * diff;
                *u = -2.0 * diff;
            }
            let head_bp = self.model.psi_head.backward(&head_trace, &upstream)?;
            let trunk_bp = self.model.trunk.backward(&trunk_trace, &head_bp.input_grad)?;
            let mut parts = [
                (self.model.trunk.params_mut().values_mut(), trunk_bp.param_grad.values()),
                (self.model.psi_head.params_mut().values_mut(), head_bp.param_grad.values()),
            ];
            self.opt_psi
                .step_slices(self.config.lr_psi, &mut parts)
                .map_err(|e| diverged(format!("psi update: {e}")))?;
            loss
        };

        // (c) advantage from the post-update parameters; phi comes from the
        // cache (frozen), psi and w are fresh post-update forwards
        let a_t = {
            let psi_next_new = self.model.psi_of(&t.s_next, goal_obs)?;
            let psi_t_new = self.model.psi_of(&t.s_t, goal_obs)?;
            let w = self.model.goal_weights(goal_obs)?.w;
            advantage_core(&phi_x, &psi_next_new, &psi_t_new, t.gamma_t, &w)
        };
        if !(loss_w.is_finite() && loss_psi.is_finite() && a_t.is_finite()) {
            return Err(diverged(format!("non-finite losses (L_w={loss_w}, L_psi={loss_psi}, A={a_t})")));
        }

        // (d) ascend A log pi(a_t | s_t, g) plus the entropy bonus, with A
        // constant; gradients formed directly in logit space
        {
            let input = concat_obs(&t.s_t, goal_obs);
            let trunk_trace = self.model.trunk.forward_trace(&input)?;
            let head_trace = self.model.policy_head.forward_trace(trunk_trace.output())?;
            let policy = crate::nn::softmax(head_trace.output());
            let entropy: f64 = -policy.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>();
            let mut upstream = vec![0.0; policy.len()];
            for (a, u) in upstream.iter_mut().enumerate() {
                let indicator = if a == t.a_t { 1.0 } else { 0.0 };
                let grad_logp = indicator - policy[a];
                let grad_entropy = -policy[a] * (safe_ln(policy[a]) + entropy);
                // descent on the negated ascent direction
                *u = -(a_t * grad_logp + self.config.entropy_coef * grad_entropy);
            }
            let head_bp = self.model.policy_head.backward(&head_trace, &upstream)?;
            let trunk_bp = self.model.trunk.backward(&trunk_trace, &head_bp.input_grad)?;
            let mut parts = [
                (self.model.trunk.params_mut().values_mut(), trunk_bp.param_grad.values()),
                (self.model.policy_head.params_mut().values_mut(), head_bp.param_grad.values()),
            ];
            self.opt_pi
                .step_slices(self.config.lr_pi, &mut parts)
                .map_err(|e| diverged(format!("policy update: {e}")))?;
        }

        Ok(StepStats { loss_w, loss_psi, advantage: a_t })
    }

    /// Runs episodes until the step budget or the sliding-window convergence
    /// rule is met. Each episode draws a goal uniformly from `goals` and a
    /// random start from the world's generator.
    pub fn train(&mut self, world: &mut GridWorld, goals: &[Position]) -> Result<TrainLog, AgentError> {
        assert!(!goals.is_empty(), "training needs at least one goal");
        let budget = self.config.max_env_steps;
        let start_steps = self.env_steps;
        let mut log = TrainLog::default();
        let mut window: VecDeque<bool> = VecDeque::with_capacity(SUCCESS_WINDOW);
        while self.env_steps - start_steps < budget {
            let goal = goals[self.rng.random_range(0..goals.len())];
            let goal_obs = world.render_goal(goal)?;
            let mut s = world.reset(goal, Start::Random)?;
            let mut episode_return = 0.0;
            let mut episode_length = 0usize;
            let mut sum_loss_w = 0.0;
            let mut sum_loss_psi = 0.0;
            let mut sum_adv = 0.0;
            while !world.finished() {
                let a = act(&self.model, &s, &goal_obs, &mut self.rng)?;
                let t = world.step(a)?;
                let stats = self.update_step(&t, &goal_obs)?;
                self.env_steps += 1;
                episode_return += t.r_t;
                episode_length += 1;
                sum_loss_w += stats.loss_w;
                sum_loss_psi += stats.loss_psi;
                sum_adv += stats.advantage;
                s = t.s_next;
                if self.env_steps - start_steps >= budget {
                    break;
                }
            }
            let n = episode_length.max(1) as f64;
            log.rows.push(TrainLogRow {
                env_step: self.env_steps,
                goal,
                episode_return,
                episode_length,
                loss_w: sum_loss_w / n,
                loss_psi: sum_loss_psi / n,
                advantage_mean: sum_adv / n,
            });
            if window.len() == SUCCESS_WINDOW {
                window.pop_front();
            }
            window.push_back(episode_return > 0.0);
            if window.len() == SUCCESS_WINDOW {
                let rate = window.iter().filter(|s| **s).count() as f64 / SUCCESS_WINDOW as f64;
                if rate >= SUCCESS_THRESHOLD {
                    log.converged = true;
                    break;
                }
            }
        }
        log.total_steps = self.env_steps;
        Ok(log)
    }
}

fn safe_ln(p: f64) -> f64 {
    p.max(1e-300).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Layout, LayoutId};
    use crate::models::ModelArch;

    fn chain_model(dim: usize) -> UsrModel {
        UsrModel::with_identity_features(dim, 16, 4)
    }

    fn fast_config() -> TrainConfig {
        TrainConfig { lr_w: 1e-2, lr_psi: 1e-2, lr_pi: 1e-3, ..TrainConfig::default() }
    }

    fn terminal_chain_transition() -> (Transition, Observation) {
        let goal_obs = Observation::one_hot(2, 1);
        let t = Transition {
            goal: Position::new(0, 1),
            s_t: Observation::one_hot(2, 0),
            a_t: 3,
            s_next: Observation::one_hot(2, 1),
            r_t: 1.0,
            gamma_t: 0.0,
        };
        (t, goal_obs)
    }

    #[test]
    fn act_matches_policy_frequencies() {
        let layout = Layout::four_room_13();
        let mut model = UsrModel::new(layout.obs_dim(), 16, 32, 0);
        model.freeze_phi();
        // zero the policy head: logits 0 -> uniform policy
        for name in ["policy_head.l0.w", "policy_head.l0.b"] {
            let len = model.param_blocks().iter().find(|(n, _, _)| n == name).map(|(_, _, v)| v.len()).unwrap();
            model.load_param_block(name, &vec![0.0; len]).unwrap();
        }
        let s = Observation::of_cell(&layout, Position::new(1, 1));
        let g = Observation::of_cell(&layout, Position::new(11, 11));
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let mut counts = [0usize; NUM_ACTIONS];
        for _ in 0..10_000 {
            counts[act(&model, &s, &g, &mut rng).unwrap()] += 1;
        }
        for c in counts {
            let freq = c as f64 / 10_000.0;
            assert!((freq - 0.25).abs() < 0.02, "frequency {freq}");
        }
        // same rng state -> same action
        let mut r1 = ChaCha12Rng::seed_from_u64(33);
        let mut r2 = ChaCha12Rng::seed_from_u64(33);
        assert_eq!(act(&model, &s, &g, &mut r1).unwrap(), act(&model, &s, &g, &mut r2).unwrap());
    }

    #[test]
    fn act_follows_a_peaked_policy() {
        let layout = Layout::four_room_13();
        let mut model = UsrModel::new(layout.obs_dim(), 16, 32, 0);
        model.freeze_phi();
        // bias logits so that action 0 has probability ~0.999
        let dims = model.param_blocks().iter().find(|(n, _, _)| n == "policy_head.l0.w").map(|(_, _, v)| v.len()).unwrap();
        model.load_param_block("policy_head.l0.w", &vec![0.0; dims]).unwrap();
        model.load_param_block("policy_head.l0.b", &[10.0, 0.0, 0.0, 0.0]).unwrap();
        let s = Observation::of_cell(&layout, Position::new(1, 1));
        let g = Observation::of_cell(&layout, Position::new(11, 11));
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let hits = (0..1000).filter(|_| act(&model, &s, &g, &mut rng).unwrap() == 0).count();
        assert!(hits >= 990, "action 0 sampled {hits}/1000");
    }

    #[test]
    fn terminal_transition_regresses_psi_to_phi_next() {
        // gamma_t = 0 cuts the bootstrap: the L_psi target is exactly phi(s').
        let mut trainer = Trainer::new(chain_model(2), fast_config()).unwrap();
        let (t, g) = terminal_chain_transition();
        let phi_next = trainer.model().encode_phi(&t.s_next).unwrap().phi;
        let psi_before = trainer.model().usr_forward(&t.s_t, &g).unwrap().psi;
        let expected: f64 = phi_next.iter().zip(&psi_before).map(|(a, b)| (a - b) * (a - b)).sum();
        let stats = trainer.update_step(&t, &g).unwrap();
        assert!((stats.loss_psi - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_w_and_zero_entropy_leave_policy_untouched() {
        let mut model = chain_model(2);
        for name in ["w_net.l0.w", "w_net.l0.b"] {
            let len = model.param_blocks().iter().find(|(n, _, _)| n == name).map(|(_, _, v)| v.len()).unwrap();
            model.load_param_block(name, &vec![0.0; len]).unwrap();
        }
        let config = TrainConfig { entropy_coef: 0.0, ..fast_config() };
        let mut trainer = Trainer::new(model, config).unwrap();
        let (mut t, g) = terminal_chain_transition();
        t.r_t = 0.0; // keep the w regression target at zero so w stays zero
        let policy_before = trainer.model().policy_head.params().clone();
        let psi_before = trainer.model().psi_head.params().clone();
        let w_before = trainer.model().w_net.params().clone();
        let stats = trainer.update_step(&t, &g).unwrap();
        assert_eq!(stats.advantage, 0.0);
        assert_eq!(trainer.model().policy_head.params(), &policy_before, "zero advantage must not move the policy head");
        assert_eq!(trainer.model().w_net.params(), &w_before, "zero residual must not move w");
        assert_ne!(trainer.model().psi_head.params(), &psi_before, "psi regression still runs");
    }

    #[test]
    fn phase_two_never_touches_frozen_features() {
        let mut trainer = Trainer::new(chain_model(2), fast_config()).unwrap();
        let (t, g) = terminal_chain_transition();
        let phi_before = trainer.model().phi_params();
        for _ in 0..25 {
            trainer.update_step(&t, &g).unwrap();
        }
        assert_eq!(trainer.model().phi_params(), phi_before);
    }

    #[test]
    fn no_gradient_flows_through_the_bootstrap_target() {
        // Against an SGD trainer, the post-update psi parameters must equal a
        // manual descent step on || c - psi(s_t) ||^2 with c the numeric
        // target value; any gradient leaking through psi(s_{t+1}) would break
        // bit-equality.
        let dim = 3;
        let mut model = chain_model(dim);
        for name in ["w_net.l0.w", "w_net.l0.b"] {
            let len = model.param_blocks().iter().find(|(n, _, _)| n == name).map(|(_, _, v)| v.len()).unwrap();
            model.load_param_block(name, &vec![0.0; len]).unwrap();
        }
        let config = TrainConfig {
            entropy_coef: 0.0,
            optimizer: OptimizerKind::Sgd,
            ..fast_config()
        };
        let goal_obs = Observation::one_hot(dim, 2);
        let t = Transition {
            goal: Position::new(0, 2),
            s_t: Observation::one_hot(dim, 0),
            a_t: 1,
            s_next: Observation::one_hot(dim, 1),
            r_t: 0.0,
            gamma_t: 0.9, // non-terminal: bootstrap active
        };

        let mut manual = model.clone();
        let mut trainer = Trainer::new(model, config.clone()).unwrap();
        trainer.update_step(&t, &goal_obs).unwrap();

        // manual step with the target held constant
        let phi_x = manual.encode_phi(&t.s_next).unwrap().phi;
        let psi_next = manual.usr_forward(&t.s_next, &goal_obs).unwrap().psi;
        let target: Vec<f64> = phi_x.iter().zip(&psi_next).map(|(p, q)| p + t.gamma_t * q).collect();
        let input = concat_obs(&t.s_t, &goal_obs);
        let trunk_trace = manual.trunk.forward_trace(&input).unwrap();
        let head_trace = manual.psi_head.forward_trace(trunk_trace.output()).unwrap();
        let upstream: Vec<f64> =
            target.iter().zip(head_trace.output()).map(|(tj, pj)| -2.0 * (tj - pj)).collect();
        let head_bp = manual.psi_head.backward(&head_trace, &upstream).unwrap();
        let trunk_bp = manual.trunk.backward(&trunk_trace, &head_bp.input_grad).unwrap();
        for (p, g) in manual.trunk.params_mut().values_mut().iter_mut().zip(trunk_bp.param_grad.values()) {
            *p -= config.lr_psi * g;
        }
        for (p, g) in manual.psi_head.params_mut().values_mut().iter_mut().zip(head_bp.param_grad.values()) {
            *p -= config.lr_psi * g;
        }

        assert_eq!(trainer.model().psi_head.params(), manual.psi_head.params());
        assert_eq!(trainer.model().trunk.params(), manual.trunk.params());
    }

    #[test]
    fn advantage_recomputes_from_public_ops() {
        let model = chain_model(3);
        let goal_obs = Observation::one_hot(3, 2);
        let t = Transition {
            goal: Position::new(0, 2),
            s_t: Observation::one_hot(3, 0),
            a_t: 1,
            s_next: Observation::one_hot(3, 1),
            r_t: 0.0,
            gamma_t: 0.9,
        };
        let a = advantage(&model, &t, &goal_obs, PhiIndexing::Next).unwrap();
        // independent recomposition
        let phi = model.encode_phi(&t.s_next).unwrap().phi;
        let psi_n = model.usr_forward(&t.s_next, &goal_obs).unwrap().psi;
        let psi_t = model.usr_forward(&t.s_t, &goal_obs).unwrap().psi;
        let w = model.goal_weights(&goal_obs).unwrap().w;
        let mut expected = 0.0;
        for j in 0..phi.len() {
            expected += (phi[j] + t.gamma_t * psi_n[j] - psi_t[j]) * w[j];
        }
        assert_eq!(a, expected);
    }

    #[test]
    fn repeated_updates_reach_the_two_state_fixed_point() {
        let mut trainer = Trainer::new(chain_model(2), fast_config()).unwrap();
        let (t, g) = terminal_chain_transition();
        for _ in 0..3000 {
            trainer.update_step(&t, &g).unwrap();
        }
        let psi = trainer.model().usr_forward(&t.s_t, &g).unwrap().psi;
        assert!((psi[0] - 0.0).abs() < 0.05 && (psi[1] - 1.0).abs() < 0.05, "psi(s0) = {psi:?}");
        let w = trainer.model().goal_weights(&g).unwrap().w;
        assert!((w[1] - 1.0).abs() < 0.05, "w = {w:?}");
        let v = trainer.model().value(&t.s_t, &g).unwrap();
        assert!((v - 1.0).abs() < 0.05, "V(s0) = {v}");
    }

    #[test]
    fn bootstrapped_chain_matches_hand_solved_fixed_point() {
        // s0 -> s1 -> s2(goal), one-hot phi, gamma 0.9:
        // psi(s1) = (0,0,1), psi(s0) = (0,1,0) + 0.9 psi(s1) = (0,1,0.9),
        // w = e2, so V(s0) = 0.9.
        let mut trainer = Trainer::new(chain_model(3), fast_config()).unwrap();
        let g = Observation::one_hot(3, 2);
        let t01 = Transition {
            goal: Position::new(0, 2),
            s_t: Observation::one_hot(3, 0),
            a_t: 3,
            s_next: Observation::one_hot(3, 1),
            r_t: 0.0,
            gamma_t: 0.9,
        };
        let t12 = Transition {
            goal: Position::new(0, 2),
            s_t: Observation::one_hot(3, 1),
            a_t: 3,
            s_next: Observation::one_hot(3, 2),
            r_t: 1.0,
            gamma_t: 0.0,
        };
        for _ in 0..4000 {
            trainer.update_step(&t01, &g).unwrap();
            trainer.update_step(&t12, &g).unwrap();
        }
        let psi0 = trainer.model().usr_forward(&t01.s_t, &g).unwrap().psi;
        for (got, want) in psi0.iter().zip([0.0, 1.0, 0.9]) {
            assert!((got - want).abs() < 0.05, "psi(s0) = {psi0:?}");
        }
        let v = trainer.model().value(&t01.s_t, &g).unwrap();
        assert!((v - 0.9).abs() < 0.05, "V(s0) = {v}");
    }

    #[test]
    fn update_step_requires_frozen_features() {
        let layout = Layout::four_room_13();
        let model = UsrModel::new(layout.obs_dim(), 8, 16, 0);
        assert_eq!(model.arch(), ModelArch::Standard);
        assert!(matches!(Trainer::new(model, fast_config()), Err(AgentError::PhiNotFrozen)));
    }

    #[test]
    fn pretrain_reduces_reconstruction_error_and_freezes() {
        let map = "\
#####
#...#
#...#
#...#
#####";
        let layout = Layout::parse(map).unwrap();
        let mut world = GridWorld::with_layout(layout.clone(), 0.95, 40, 3).unwrap();
        let mut model = UsrModel::new(layout.obs_dim(), 8, 24, 3);
        let config = TrainConfig { phase1_samples: 400, phase1_epochs: 30, ..TrainConfig::default() };
        let log = pretrain_phi(&mut world, &mut model, &config).unwrap();
        assert!(model.phi_frozen());
        assert_eq!(log.samples_collected, 400);
        assert_eq!(log.epoch_mse.len(), 30);
        assert!(
            log.epoch_mse.last().unwrap() < log.epoch_mse.first().unwrap(),
            "reconstruction error should fall: {:?}",
            log.epoch_mse
        );
        assert!(matches!(pretrain_phi(&mut world, &mut model, &config), Err(AgentError::PhiAlreadyFrozen)));
    }

    #[test]
    fn transfer_init_is_an_independent_deep_copy() {
        let mut trainer = Trainer::new(chain_model(2), fast_config()).unwrap();
        let (t, g) = terminal_chain_transition();
        for _ in 0..50 {
            trainer.update_step(&t, &g).unwrap();
        }
        let copy = transfer_init(trainer.model());
        assert!(copy.phi_frozen());
        assert_eq!(&copy, trainer.model());
        assert_eq!(
            copy.usr_forward(&t.s_t, &g).unwrap(),
            trainer.model().usr_forward(&t.s_t, &g).unwrap()
        );
        // mutating the copy leaves the original untouched
        let mut mutated = Trainer::new(copy.clone(), fast_config()).unwrap();
        assert!(mutated.moments_are_zero());
        mutated.update_step(&t, &g).unwrap();
        assert_eq!(&copy, trainer.model());
        assert_ne!(mutated.model(), &copy);
    }

    #[test]
    fn zero_shot_policy_covers_all_cells() {
        let world = GridWorld::new(LayoutId::FourRoom13, 0.95, 300, 0).unwrap();
        let mut model = UsrModel::new(world.layout().obs_dim(), 8, 16, 0);
        model.freeze_phi();
        let g = Position::new(11, 11);
        let table = zero_shot_policy(&model, &world, g).unwrap();
        assert_eq!(table.len(), 104);
        for (_, policy) in &table {
            let sum: f64 = policy.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
        assert_eq!(table, zero_shot_policy(&model, &world, g).unwrap());
    }

    #[test]
    fn training_runs_are_reproducible_and_step_monotone() {
        let run = || {
            let mut world = GridWorld::new(LayoutId::FourRoom13, 0.95, 60, 5).unwrap();
            let mut model = UsrModel::new(world.layout().obs_dim(), 16, 32, 5);
            let config = TrainConfig {
                phase1_samples: 200,
                phase1_epochs: 2,
                max_env_steps: 1500,
                seed: 5,
                ..TrainConfig::default()
            };
            pretrain_phi(&mut world, &mut model, &config).unwrap();
            let mut trainer = Trainer::new(model, config).unwrap();
            let goals = [Position::new(1, 11), Position::new(11, 1)];
            trainer.train(&mut world, &goals).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b, "same seed must give an identical train log");
        for pair in a.rows.windows(2) {
            assert!(pair[1].env_step > pair[0].env_step, "env_step must strictly increase");
        }
        assert!(a.total_steps <= 1500);
    }
}
