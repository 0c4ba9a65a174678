//! Desk-scale reproductions of the three paper measurements: successor
//! generalization distance vs. number of source goals, policy generalization
//! distance, and transfer-as-initialization reward curves against a
//! random-init baseline. Experiment cells are independent (k x seed) and run
//! in parallel; aggregation is a deterministic reduce in input order.

use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::agent::{pretrain_phi, transfer_init, AgentError, TrainConfig, TrainLog, Trainer};
use crate::derive_seed;
use crate::env::{EnvError, GridWorld, LayoutId, Observation, Position};
use crate::models::{ModelError, UsrModel};
use crate::oracle::{
    exact_successor_features, extract_mdp, optimal_policy_distribution, value_iteration,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("invalid experiment config: {0}")]
    BadConfig(String),
}

/// Success bar for "steps to threshold" on smoothed reward curves.
pub const REWARD_THRESHOLD: f64 = 0.8;
/// Trailing window, in episodes, for reward-curve smoothing.
pub const SMOOTHING_EPISODES: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    UsrMse,
    PolicyCe,
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::UsrMse => "usr_mse",
            Metric::PolicyCe => "policy_ce",
        }
    }
}

/// Which reference the generalization metrics compare against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceMode {
    /// Exact tabular reference: psi under pi* with the model's frozen
    /// features, and the one-hot greedy optimal policy. Deterministic.
    Oracle,
    /// A model of the same architecture trained directly on the target goals.
    Trained,
}

impl ReferenceMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "oracle" => Some(ReferenceMode::Oracle),
            "trained" => Some(ReferenceMode::Trained),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ReferenceMode::Oracle => "oracle",
            ReferenceMode::Trained => "trained",
        }
    }
}

/// Reference data resolved for a concrete evaluation call.
pub enum Reference<'a> {
    Oracle,
    Trained(&'a UsrModel),
}

/// One aggregated point of the generalization figures.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizationPoint {
    pub k: usize,
    pub metric: Metric,
    pub mean: f64,
    pub stderr: f64,
    pub n_repeats: usize,
}

impl GeneralizationPoint {
    /// Aggregates per-seed values: mean and stderr = sample-stddev / sqrt(n).
    pub fn aggregate(k: usize, metric: Metric, values: &[f64]) -> Self {
        let n = values.len();
        assert!(n >= 1, "aggregate needs at least one repeat");
        let mean = values.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        GeneralizationPoint { k, metric, mean, stderr, n_repeats: n }
    }

    fn single(metric: Metric, value: f64) -> Self {
        GeneralizationPoint { k: 0, metric, mean: value, stderr: 0.0, n_repeats: 1 }
    }
}

/// One raw (k, metric, seed) measurement backing the aggregated points.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizationRaw {
    pub k: usize,
    pub metric: Metric,
    pub seed: u64,
    pub value: f64,
}

fn reference_psi(
    model: &UsrModel,
    world: &GridWorld,
    goal: Position,
    reference: &Reference<'_>,
    cells: &[Position],
    goal_obs: &Observation,
) -> Result<Vec<Vec<f64>>, EvalError> {
    match reference {
        Reference::Oracle => {
            let mdp = extract_mdp(world, goal)?;
            let (_, pi_star) = value_iteration(&mdp, |s, a, sn| mdp.goal_reward(s, a, sn), 1e-10);
            let mut features = Vec::with_capacity(mdp.n_states);
            for p in &mdp.positions {
                features.push(model.encode_phi(&Observation::of_cell(world.layout(), *p))?.phi);
            }
            Ok(exact_successor_features(&mdp, &pi_star, &features))
        }
        Reference::Trained(reference_model) => {
            let mut psi = Vec::with_capacity(cells.len());
            for p in cells {
                let s = Observation::of_cell(world.layout(), *p);
                psi.push(reference_model.usr_forward(&s, goal_obs)?.psi);
            }
            Ok(psi)
        }
    }
}

/// Mean squared distance between the model's psi(s, g) and the reference
/// psi, averaged over feature dimensions, navigable states, and target goals.
pub fn usr_generalization(
    model: &UsrModel,
    world: &GridWorld,
    targets: &[Position],
    reference: Reference<'_>,
) -> Result<GeneralizationPoint, EvalError> {
    if targets.is_empty() {
        return Err(EvalError::BadConfig("target goal set is empty".into()));
    }
    let cells = world.layout().navigable_cells();
    let mut total = 0.0;
    let mut count = 0usize;
    for goal in targets {
        let goal_obs = world.render_goal(*goal)?;
        let psi_ref = reference_psi(model, world, *goal, &reference, &cells, &goal_obs)?;
        for (s_idx, cell) in cells.iter().enumerate() {
            let s = Observation::of_cell(world.layout(), *cell);
            let psi = model.usr_forward(&s, &goal_obs)?.psi;
            let mse = psi
                .iter()
                .zip(&psi_ref[s_idx])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / psi.len() as f64;
            total += mse;
            count += 1;
        }
    }
    Ok(GeneralizationPoint::single(Metric::UsrMse, total / count as f64))
}

/// Mean cross entropy H(pi_ref, pi_model) over navigable states and target
/// goals; model probabilities are clamped at 1e-12 before the log.
pub fn policy_generalization(
    model: &UsrModel,
    world: &GridWorld,
    targets: &[Position],
    reference: Reference<'_>,
) -> Result<GeneralizationPoint, EvalError> {
    if targets.is_empty() {
        return Err(EvalError::BadConfig("target goal set is empty".into()));
    }
    let cells = world.layout().navigable_cells();
    let mut total = 0.0;
    let mut count = 0usize;
    for goal in targets {
        let goal_obs = world.render_goal(*goal)?;
        let ref_rows: Vec<Vec<f64>> = match &reference {
            Reference::Oracle => {
                let mdp = extract_mdp(world, *goal)?;
                let (v, _) = value_iteration(&mdp, |s, a, sn| mdp.goal_reward(s, a, sn), 1e-10);
                optimal_policy_distribution(&mdp, &v, 0.0).into_iter().map(|r| r.to_vec()).collect()
            }
            Reference::Trained(reference_model) => {
                let mut rows = Vec::with_capacity(cells.len());
                for p in &cells {
                    let s = Observation::of_cell(world.layout(), *p);
                    rows.push(reference_model.usr_forward(&s, &goal_obs)?.policy);
                }
                rows
            }
        };
        for (s_idx, cell) in cells.iter().enumerate() {
            let s = Observation::of_cell(world.layout(), *cell);
            let policy = model.usr_forward(&s, &goal_obs)?.policy;
            let ce: f64 = ref_rows[s_idx]
                .iter()
                .zip(&policy)
                .map(|(r, p)| -r * p.max(1e-12).ln())
                .sum();
            total += ce;
            count += 1;
        }
    }
    Ok(GeneralizationPoint::single(Metric::PolicyCe, total / count as f64))
}

/// Shared world/model shape parameters of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSetup {
    pub layout: LayoutId,
    pub gamma_base: f64,
    pub max_steps: usize,
    pub d: usize,
    pub hidden: usize,
    pub train: TrainConfig,
}

impl ExperimentSetup {
    fn world(&self, seed: u64) -> Result<GridWorld, EnvError> {
        GridWorld::new(self.layout, self.gamma_base, self.max_steps, seed)
    }

    /// Pretrains a fresh model for one seed; shared by all k cells of that
    /// seed since phase 1 is independent of the goal split.
    fn pretrained_model(&self, seed: u64) -> Result<UsrModel, EvalError> {
        let mut world = self.world(derive_seed(seed, "phase1-env"))?;
        let obs_dim = world.layout().obs_dim();
        let mut model = UsrModel::new(obs_dim, self.d, self.hidden, derive_seed(seed, "model"));
        let cfg = TrainConfig { seed: derive_seed(seed, "phase1"), ..self.train.clone() };
        pretrain_phi(&mut world, &mut model, &cfg)?;
        Ok(model)
    }
}

/// Full Figs. 2-3 sweep: per (k, seed), pretrain + train on k source goals,
/// then measure both generalization metrics on the 16 target goals.
pub fn generalization_experiment(
    setup: &ExperimentSetup,
    k_values: &[usize],
    seeds: &[u64],
    reference: ReferenceMode,
) -> Result<(Vec<GeneralizationPoint>, Vec<GeneralizationRaw>), EvalError> {
    if k_values.is_empty() || seeds.is_empty() {
        return Err(EvalError::BadConfig("need at least one k and one seed".into()));
    }
    let pretrained: Vec<UsrModel> = seeds
        .par_iter()
        .map(|seed| setup.pretrained_model(*seed))
        .collect::<Result<_, _>>()?;

    // Trained-reference models: same architecture trained directly on the
    // target goals, one per seed.
    let reference_models: Option<Vec<UsrModel>> = match reference {
        ReferenceMode::Oracle => None,
        ReferenceMode::Trained => Some(
            seeds
                .par_iter()
                .zip(&pretrained)
                .map(|(seed, pre)| {
                    let mut world = setup.world(derive_seed(*seed, "ref-env"))?;
                    let targets = world.goal_pools().1.to_vec();
                    let cfg = TrainConfig { seed: derive_seed(*seed, "ref-train"), ..setup.train.clone() };
                    let mut trainer = Trainer::new(pre.clone(), cfg)?;
                    trainer.train(&mut world, &targets)?;
                    Ok::<UsrModel, EvalError>(trainer.into_model())
                })
                .collect::<Result<_, _>>()?,
        ),
    };

    let cells: Vec<(usize, usize)> = k_values
        .iter()
        .enumerate()
        .flat_map(|(ki, _)| (0..seeds.len()).map(move |si| (ki, si)))
        .collect();
    let measured: Vec<(f64, f64)> = cells
        .par_iter()
        .map(|(ki, si)| {
            let k = k_values[*ki];
            let seed = seeds[*si];
            let mut world = setup.world(derive_seed(seed, "cell-env").wrapping_add(k as u64))?;
            let split = world.sample_source_goals(k, derive_seed(seed, "goals").wrapping_add(k as u64))?;
            let cfg = TrainConfig { seed: derive_seed(seed, "train").wrapping_add(k as u64), ..setup.train.clone() };
            let mut trainer = Trainer::new(pretrained[*si].clone(), cfg)?;
            trainer.train(&mut world, &split.source)?;
            let model = trainer.into_model();
            let reference = match &reference_models {
                None => Reference::Oracle,
                Some(models) => Reference::Trained(&models[*si]),
            };
            let mse = usr_generalization(&model, &world, &split.target, reference)?.mean;
            let reference = match &reference_models {
                None => Reference::Oracle,
                Some(models) => Reference::Trained(&models[*si]),
            };
            let ce = policy_generalization(&model, &world, &split.target, reference)?.mean;
            Ok::<(f64, f64), EvalError>((mse, ce))
        })
        .collect::<Result<_, _>>()?;

    let mut raw = Vec::new();
    let mut points = Vec::new();
    for (ki, k) in k_values.iter().enumerate() {
        let mut mses = Vec::with_capacity(seeds.len());
        let mut ces = Vec::with_capacity(seeds.len());
        for (si, seed) in seeds.iter().enumerate() {
            let (mse, ce) = measured[ki * seeds.len() + si];
            raw.push(GeneralizationRaw { k: *k, metric: Metric::UsrMse, seed: *seed, value: mse });
            raw.push(GeneralizationRaw { k: *k, metric: Metric::PolicyCe, seed: *seed, value: ce });
            mses.push(mse);
            ces.push(ce);
        }
        points.push(GeneralizationPoint::aggregate(*k, Metric::UsrMse, &mses));
        points.push(GeneralizationPoint::aggregate(*k, Metric::PolicyCe, &ces));
    }
    Ok((points, raw))
}

/// One transfer run: smoothed reward series on a fixed step grid, plus the
/// steps-to-threshold summary. `k = 0` marks baseline cells.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferCell {
    pub k: usize,
    pub seed: u64,
    pub is_baseline: bool,
    pub series: Vec<(u64, f64)>,
    pub steps_to_threshold: Option<u64>,
    pub failure: Option<String>,
}

/// Mean and stderr across seeds of one condition's reward series.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferCurve {
    pub k: usize,
    pub baseline: bool,
    pub series: Vec<(u64, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TransferOutcome {
    pub curves: Vec<TransferCurve>,
    pub cells: Vec<TransferCell>,
}

/// Trailing-mean reward sampled on a fixed step grid from a train log.
fn reward_series(log: &TrainLog, grid_step: u64, budget: u64) -> Vec<(u64, f64)> {
    let mut series = Vec::new();
    let mut returns: Vec<f64> = Vec::with_capacity(log.rows.len());
    let mut row_idx = 0usize;
    let mut at = grid_step;
    while at <= budget {
        while row_idx < log.rows.len() && log.rows[row_idx].env_step <= at {
            returns.push(log.rows[row_idx].episode_return);
            row_idx += 1;
        }
        let window = &returns[returns.len().saturating_sub(SMOOTHING_EPISODES)..];
        let mean = if window.is_empty() { 0.0 } else { window.iter().sum::<f64>() / window.len() as f64 };
        series.push((at, mean));
        at += grid_step;
    }
    series
}

/// First grid step at which the smoothed reward reaches the threshold.
pub fn steps_to_threshold(series: &[(u64, f64)], threshold: f64) -> Option<u64> {
    series.iter().find(|(_, r)| *r >= threshold).map(|(s, _)| *s)
}

/// Fig. 4: per (k, seed), train on k source goals, transfer-initialize, and
/// continue on the 16 target goals; baselines train on the targets from
/// random initialization with identical environment seeds.
pub fn transfer_experiment(
    setup: &ExperimentSetup,
    k_values: &[usize],
    seeds: &[u64],
    target_env_steps: u64,
) -> Result<TransferOutcome, EvalError> {
    if k_values.is_empty() || seeds.is_empty() {
        return Err(EvalError::BadConfig("need at least one k and one seed".into()));
    }
    if target_env_steps == 0 {
        return Err(EvalError::BadConfig("target_env_steps must be at least 1".into()));
    }
    let pretrained: Vec<UsrModel> = seeds
        .par_iter()
        .map(|seed| setup.pretrained_model(*seed))
        .collect::<Result<_, _>>()?;
    let grid = setup.train.eval_every;

    // The target phase is identically seeded for every condition of a given
    // seed: same world stream, same trainer stream. Only the initial
    // parameters differ.
    let target_phase = |seed: u64, model: UsrModel| -> Result<(Vec<(u64, f64)>, Option<String>), EvalError> {
        let mut world = setup.world(derive_seed(seed, "target-env"))?;
        let targets = world.goal_pools().1.to_vec();
        let cfg = TrainConfig {
            seed: derive_seed(seed, "target-train"),
            max_env_steps: target_env_steps,
            ..setup.train.clone()
        };
        let mut trainer = Trainer::new(model, cfg)?;
        match trainer.train(&mut world, &targets) {
            Ok(log) => Ok((reward_series(&log, grid, target_env_steps), None)),
            Err(AgentError::Diverged { step, what }) => Ok((Vec::new(), Some(format!("diverged at step {step}: {what}")))),
            Err(e) => Err(e.into()),
        }
    };

    // Baseline cells: one per seed, k = 0, random initialization.
    let baselines: Vec<TransferCell> = seeds
        .par_iter()
        .zip(&pretrained)
        .map(|(seed, pre)| {
            let (series, failure) = target_phase(*seed, pre.clone())?;
            Ok::<TransferCell, EvalError>(TransferCell {
                k: 0,
                seed: *seed,
                is_baseline: true,
                steps_to_threshold: steps_to_threshold(&series, REWARD_THRESHOLD),
                series,
                failure,
            })
        })
        .collect::<Result<_, _>>()?;

    let cell_ids: Vec<(usize, usize)> = k_values
        .iter()
        .enumerate()
        .flat_map(|(ki, _)| (0..seeds.len()).map(move |si| (ki, si)))
        .collect();
    let treatment: Vec<TransferCell> = cell_ids
        .par_iter()
        .map(|(ki, si)| {
            let k = k_values[*ki];
            let seed = seeds[*si];
            let mut world = setup.world(derive_seed(seed, "source-env").wrapping_add(k as u64))?;
            let split = world.sample_source_goals(k, derive_seed(seed, "goals").wrapping_add(k as u64))?;
            let cfg = TrainConfig { seed: derive_seed(seed, "source-train").wrapping_add(k as u64), ..setup.train.clone() };
            let mut trainer = Trainer::new(pretrained[*si].clone(), cfg)?;
            let source_failure = match trainer.train(&mut world, &split.source) {
                Ok(_) => None,
                Err(AgentError::Diverged { step, what }) => Some(format!("source phase diverged at step {step}: {what}")),
                Err(e) => return Err(e.into()),
            };
            if let Some(failure) = source_failure {
                return Ok(TransferCell {
                    k,
                    seed,
                    is_baseline: false,
                    series: Vec::new(),
                    steps_to_threshold: None,
                    failure: Some(failure),
                });
            }
            let warm = transfer_init(trainer.model());
            let (series, failure) = target_phase(seed, warm)?;
            Ok::<TransferCell, EvalError>(TransferCell {
                k,
                seed,
                is_baseline: false,
                steps_to_threshold: steps_to_threshold(&series, REWARD_THRESHOLD),
                series,
                failure,
            })
        })
        .collect::<Result<_, _>>()?;

    let mut cells = baselines;
    cells.extend(treatment);

    let mut curves = Vec::new();
    let mut conditions: Vec<(usize, bool)> = vec![(0, true)];
    conditions.extend(k_values.iter().map(|k| (*k, false)));
    for (k, baseline) in conditions {
        let members: Vec<&TransferCell> = cells
            .iter()
            .filter(|c| c.k == k && c.is_baseline == baseline && c.failure.is_none())
            .collect();
        if members.is_empty() {
            curves.push(TransferCurve { k, baseline, series: Vec::new() });
            continue;
        }
        let len = members.iter().map(|c| c.series.len()).min().unwrap_or(0);
        let mut series = Vec::with_capacity(len);
        for i in 0..len {
            let step = members[0].series[i].0;
            let vals: Vec<f64> = members.iter().map(|c| c.series[i].1).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let stderr = if vals.len() > 1 {
                let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (vals.len() - 1) as f64;
                (var / vals.len() as f64).sqrt()
            } else {
                0.0
            };
            series.push((step, mean, stderr));
        }
        curves.push(TransferCurve { k, baseline, series });
    }
    Ok(TransferOutcome { curves, cells })
}

/// Spearman rank correlation with average ranks on ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let rx = ranks(xs);
    let ry = ranks(ys);
    pearson(&rx, &ry)
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|a, b| values[*a].partial_cmp(&values[*b]).expect("no NaN in rank data"));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            out[idx[k]] = avg;
        }
        i = j + 1;
    }
    out
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        cov += (x - mx) * (y - my);
        vx += (x - mx) * (x - mx);
        vy += (y - my) * (y - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}

// ---------------------------------------------------------------------------
// emission: CSV and SVG files
// ---------------------------------------------------------------------------

/// Writes `generalization.csv` plus one SVG per metric. Returns the paths.
pub fn emit_generalization(
    raw: &[GeneralizationRaw],
    points: &[GeneralizationPoint],
    dir: &Path,
) -> Result<Vec<PathBuf>, EvalError> {
    if raw.is_empty() {
        return Err(EvalError::BadConfig("no generalization records to emit".into()));
    }
    std::fs::create_dir_all(dir)?;
    let mut out = Vec::new();

    let csv_path = dir.join("generalization.csv");
    let mut csv = String::from("k,metric,seed,value\n");
    for r in raw {
        csv.push_str(&format!("{},{},{},{}\n", r.k, r.metric.name(), r.seed, r.value));
    }
    std::fs::write(&csv_path, csv)?;
    out.push(csv_path);

    for metric in [Metric::UsrMse, Metric::PolicyCe] {
        let mut pts: Vec<&GeneralizationPoint> = points.iter().filter(|p| p.metric == metric).collect();
        pts.sort_by_key(|p| p.k);
        let series = SvgSeries {
            label: metric.name().to_string(),
            points: pts.iter().map(|p| (p.k as f64, p.mean)).collect(),
            band: Some(pts.iter().map(|p| (p.k as f64, p.mean - p.stderr, p.mean + p.stderr)).collect()),
        };
        let svg = svg_line_plot(
            &format!("{} vs source goals", metric.name()),
            "source goals k",
            metric.name(),
            &[series],
        );
        let path = dir.join(format!("{}.svg", metric.name()));
        std::fs::write(&path, svg)?;
        out.push(path);
    }
    Ok(out)
}

/// Writes `transfer.csv`, `transfer_summary.csv` and `transfer.svg`.
pub fn emit_transfer(outcome: &TransferOutcome, dir: &Path) -> Result<Vec<PathBuf>, EvalError> {
    if outcome.cells.is_empty() {
        return Err(EvalError::BadConfig("no transfer records to emit".into()));
    }
    std::fs::create_dir_all(dir)?;
    let mut out = Vec::new();

    let csv_path = dir.join("transfer.csv");
    let mut csv = String::from("k,seed,env_step,reward,is_baseline\n");
    for cell in &outcome.cells {
        for (step, reward) in &cell.series {
            csv.push_str(&format!("{},{},{},{},{}\n", cell.k, cell.seed, step, reward, cell.is_baseline as u8));
        }
    }
    std::fs::write(&csv_path, csv)?;
    out.push(csv_path);

    let summary_path = dir.join("transfer_summary.csv");
    let mut summary = String::from("k,seed,is_baseline,steps_to_threshold,failures\n");
    for cell in &outcome.cells {
        summary.push_str(&format!(
            "{},{},{},{},{}\n",
            cell.k,
            cell.seed,
            cell.is_baseline as u8,
            cell.steps_to_threshold.map_or(String::new(), |s| s.to_string()),
            cell.failure.clone().unwrap_or_default(),
        ));
    }
    std::fs::write(&summary_path, summary)?;
    out.push(summary_path);

    let mut series = Vec::new();
    for curve in &outcome.curves {
        if curve.series.is_empty() {
            continue;
        }
        let label = if curve.baseline { "baseline".to_string() } else { format!("k={}", curve.k) };
        series.push(SvgSeries {
            label,
            points: curve.series.iter().map(|(s, m, _)| (*s as f64, *m)).collect(),
            band: Some(curve.series.iter().map(|(s, m, e)| (*s as f64, m - e, m + e)).collect()),
        });
    }
    let svg = svg_line_plot("mean reward on target goals", "environment steps", "mean episode reward", &series);
    let svg_path = dir.join("transfer.svg");
    std::fs::write(&svg_path, svg)?;
    out.push(svg_path);
    Ok(out)
}

/// One plotted series: a mean line and an optional (lo, hi) band.
pub struct SvgSeries {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub band: Option<Vec<(f64, f64, f64)>>,
}

const SVG_PALETTE: [&str; 7] =
    ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"];

/// Renders a self-contained SVG line plot with stderr bands.
pub fn svg_line_plot(title: &str, x_label: &str, y_label: &str, series: &[SvgSeries]) -> String {
    let width = 640.0;
    let height = 420.0;
    let (ml, mr, mt, mb) = (70.0, 20.0, 40.0, 50.0);
    let plot_w = width - ml - mr;
    let plot_h = height - mt - mb;

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for s in series {
        for (x, y) in &s.points {
            xs.push(*x);
            ys.push(*y);
        }
        if let Some(band) = &s.band {
            for (x, lo, hi) in band {
                xs.push(*x);
                ys.push(*lo);
                ys.push(*hi);
            }
        }
    }
    let (x_min, x_max) = padded_range(&xs);
    let (y_min, y_max) = padded_range(&ys);
    let to_px = |x: f64, y: f64| -> (f64, f64) {
        let px = ml + (x - x_min) / (x_max - x_min) * plot_w;
        let py = mt + (1.0 - (y - y_min) / (y_max - y_min)) * plot_h;
        (px, py)
    };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    ));
    svg.push_str(&format!("<rect x=\"0\" y=\"0\" width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n"));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">{}</text>\n",
        width / 2.0,
        xml_escape(title)
    ));

    // axes
    svg.push_str(&format!(
        "<line x1=\"{ml}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        mt + plot_h,
        ml + plot_w,
        mt + plot_h
    ));
    svg.push_str(&format!("<line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{}\" stroke=\"black\"/>\n", mt + plot_h));
    for i in 0..=4 {
        let fx = x_min + (x_max - x_min) * i as f64 / 4.0;
        let fy = y_min + (y_max - y_min) * i as f64 / 4.0;
        let (px, _) = to_px(fx, y_min);
        let (_, py) = to_px(x_min, fy);
        svg.push_str(&format!(
            "<line x1=\"{px}\" y1=\"{}\" x2=\"{px}\" y2=\"{}\" stroke=\"black\"/>\n",
            mt + plot_h,
            mt + plot_h + 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{px}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
            mt + plot_h + 18.0,
            format_tick(fx)
        ));
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{py}\" x2=\"{ml}\" y2=\"{py}\" stroke=\"black\"/>\n",
            ml - 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
            ml - 8.0,
            py + 4.0,
            format_tick(fy)
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">{}</text>\n",
        ml + plot_w / 2.0,
        height - 12.0,
        xml_escape(x_label)
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" transform=\"rotate(-90 16 {})\">{}</text>\n",
        mt + plot_h / 2.0,
        mt + plot_h / 2.0,
        xml_escape(y_label)
    ));

    for (i, s) in series.iter().enumerate() {
        let color = SVG_PALETTE[i % SVG_PALETTE.len()];
        if let Some(band) = &s.band {
            if band.len() > 1 {
                let mut pts: Vec<(f64, f64)> = band.iter().map(|(x, _, hi)| to_px(*x, *hi)).collect();
                pts.extend(band.iter().rev().map(|(x, lo, _)| to_px(*x, *lo)));
                let path: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
                svg.push_str(&format!(
                    "<polygon points=\"{}\" fill=\"{color}\" fill-opacity=\"0.18\" stroke=\"none\"/>\n",
                    path.join(" ")
                ));
            }
        }
        let path: Vec<String> = s
            .points
            .iter()
            .map(|(x, y)| {
                let (px, py) = to_px(*x, *y);
                format!("{px:.2},{py:.2}")
            })
            .collect();
        if path.len() > 1 {
            svg.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\"/>\n",
                path.join(" ")
            ));
        }
        for (x, y) in &s.points {
            let (px, py) = to_px(*x, *y);
            svg.push_str(&format!("<circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"2.4\" fill=\"{color}\"/>\n"));
        }
        let ly = mt + 14.0 + 16.0 * i as f64;
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            ml + plot_w - 110.0,
            ml + plot_w - 90.0
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
            ml + plot_w - 84.0,
            ly + 4.0,
            xml_escape(&s.label)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn padded_range(values: &[f64]) -> (f64, f64) {
    let mut min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !min.is_finite() || !max.is_finite() {
        return (0.0, 1.0);
    }
    if min == max {
        min -= 1.0;
        max += 1.0;
    }
    let pad = (max - min) * 0.05;
    (min - pad, max + pad)
}

fn format_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if a >= 10_000.0 || a < 0.001 {
        format!("{v:.1e}")
    } else if a >= 10.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
