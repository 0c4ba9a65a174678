// Temporary calibration harness; removed before shipping.

use std::time::Instant;

use usr_core::agent::{pretrain_phi, TrainConfig, Trainer};
use usr_core::env::{GridWorld, LayoutId, Observation, Position, Start};
use usr_core::models::UsrModel;

fn greedy_success(model: &UsrModel, world: &mut GridWorld, goals: &[Position], starts: usize) -> f64 {
    let mut ok = 0usize;
    let mut total = 0usize;
    for g in goals {
        let goal_obs = world.render_goal(*g).unwrap();
        for _ in 0..starts {
            let mut s = world.reset(*g, Start::Random).unwrap();
            while !world.finished() {
                let pi = model.usr_forward(&s, &goal_obs).unwrap().policy;
                let a = pi.iter().enumerate().max_by(|x, y| x.1.partial_cmp(y.1).unwrap()).unwrap().0;
                s = world.step(a).unwrap().s_next;
            }
            total += 1;
            if world.reached_goal() {
                ok += 1;
            }
        }
    }
    ok as f64 / total as f64
}

fn mean_max_policy(model: &UsrModel, world: &GridWorld, g: Position) -> f64 {
    let goal_obs = world.render_goal(g).unwrap();
    let cells = world.layout().navigable_cells();
    let mut total = 0.0;
    for c in &cells {
        let s = Observation::of_cell(world.layout(), *c);
        let pi = model.usr_forward(&s, &goal_obs).unwrap().policy;
        total += pi.iter().cloned().fold(f64::MIN, f64::max);
    }
    total / cells.len() as f64
}

fn run_phase2(label: &str, model: &UsrModel, cfg: &TrainConfig, max_steps: usize, goals: &[Position]) {
    let t = Instant::now();
    let mut world = GridWorld::new(LayoutId::FourRoom13, 0.95, max_steps, 99).unwrap();
    let mut trainer = Trainer::new(model.clone(), cfg.clone()).unwrap();
    let log = trainer.train(&mut world, goals).unwrap();
    let m = trainer.into_model();
    let sr = greedy_success(&m, &mut world, goals, 10);
    let last = &log.rows[log.rows.len().saturating_sub(200)..];
    let rate = last.iter().filter(|r| r.episode_return > 0.0).count() as f64 / last.len() as f64;
    let sharp = mean_max_policy(&m, &world, goals[0]);
    // value sanity at one goal: correlation of V with -distance
    let g = goals[0];
    let goal_obs = world.render_goal(g).unwrap();
    let mut vg = Vec::new();
    for c in world.layout().navigable_cells() {
        let s = Observation::of_cell(world.layout(), c);
        let v = m.value(&s, &goal_obs).unwrap();
        let dist = (c.row as f64 - g.row as f64).abs() + (c.col as f64 - g.col as f64).abs();
        vg.push((dist, v));
    }
    vg.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let near: f64 = vg[..10].iter().map(|x| x.1).sum::<f64>() / 10.0;
    let far: f64 = vg[vg.len() - 10..].iter().map(|x| x.1).sum::<f64>() / 10.0;
    println!(
        "{label}: {:?} steps={} episodes={} conv={} window_sr={rate:.3} greedy={sr:.3} sharp={sharp:.3} V(near)={near:.3} V(far)={far:.3}",
        t.elapsed(),
        log.total_steps,
        log.rows.len(),
        log.converged,
    );
}

#[test]
#[ignore]
fn calibrate() {
    let t0 = Instant::now();
    let mut world = GridWorld::new(LayoutId::FourRoom13, 0.95, 80, 1).unwrap();
    let mut model = UsrModel::new(world.layout().obs_dim(), 64, 128, 1);
    let config = TrainConfig { phase1_samples: 3000, phase1_epochs: 150, seed: 1, ..TrainConfig::default() };
    let log = pretrain_phi(&mut world, &mut model, &config).unwrap();
    let cells = world.layout().navigable_cells();
    let mean_mse: f64 = cells
        .iter()
        .map(|p| model.reconstruct(&Observation::of_cell(world.layout(), *p)).unwrap().1)
        .sum::<f64>()
        / cells.len() as f64;
    println!(
        "pretrain: {:?}, last epoch mse {:.6}, mean over 104 obs {:.8}",
        t0.elapsed(),
        log.epoch_mse.last().unwrap(),
        mean_mse
    );

    let goal1 = [Position::new(10, 10)];
    let base = TrainConfig { max_env_steps: 60_000, seed: 7, ..config.clone() };

    run_phase2("k1 base(lr_pi 1e-4, ent .01, cap 80)", &model, &base, 80, &goal1);
    let c2 = TrainConfig { lr_pi: 5e-4, ..base.clone() };
    run_phase2("k1 lr_pi 5e-4", &model, &c2, 80, &goal1);
    let c3 = TrainConfig { lr_pi: 1e-3, entropy_coef: 0.005, ..base.clone() };
    run_phase2("k1 lr_pi 1e-3 ent .005", &model, &c3, 80, &goal1);
    let c4 = TrainConfig { lr_pi: 1e-3, entropy_coef: 0.005, lr_w: 3e-3, lr_psi: 3e-3, ..base.clone() };
    run_phase2("k1 all-up", &model, &c4, 80, &goal1);
}

#[test]
#[ignore]
fn calibrate_k20() {
    let mut world = GridWorld::new(LayoutId::FourRoom13, 0.95, 80, 1).unwrap();
    let mut model = UsrModel::new(world.layout().obs_dim(), 64, 128, 1);
    let config = TrainConfig { phase1_samples: 3000, phase1_epochs: 150, seed: 1, ..TrainConfig::default() };
    pretrain_phi(&mut world, &mut model, &config).unwrap();
    let split = world.sample_source_goals(20, 5).unwrap();
    let cfg = TrainConfig { lr_pi: 1e-3, entropy_coef: 0.005, max_env_steps: 250_000, seed: 7, ..config.clone() };
    run_phase2("k20 lr_pi 1e-3 ent .005", &model, &cfg, 80, &split.source);
}
