use super::*;
use crate::operators::{CnnConfig, FnoConfig, FnoVariant, ModelConfig};
use crate::solver::{generate_trajectories, InitialConditionSpec, SolverConfig};
use crate::spectral::{Equation, Grid};

fn cfg() -> TrainConfig {
    TrainConfig::new(10, 4, 2, 7)
}

#[test]
fn relative_l2_basics() {
    let b = [1.0, -2.0, 2.0];
    assert_eq!(relative_l2(&b, &b).unwrap(), 0.0);
    assert_eq!(relative_l2(&[0.0; 3], &b).unwrap(), 1.0);
    let two: Vec<f64> = b.iter().map(|v| 2.0 * v).collect();
    assert_eq!(relative_l2(&two, &b).unwrap(), 1.0);
    assert!(relative_l2(&b, &[0.0; 3]).is_err());
}

#[test]
fn multistep_loss_is_mean_of_steps() {
    let mut t = Tape::new();
    // target norm 3 (3 points of ±√3); offset c at every point gives ‖c‖ = c√3
    let tgt = [t.constant(vec![1, 3], vec![3f64.sqrt(); 3]).unwrap(), t.constant(vec![1, 3], vec![-(3f64.sqrt()); 3]).unwrap()];
    let shift = |v: f64, c: f64| vec![v + c; 3];
    let p0 = t.constant(vec![1, 3], shift(3f64.sqrt(), 0.3)).unwrap();
    let p1 = t.constant(vec![1, 3], shift(-(3f64.sqrt()), 0.6)).unwrap();
    let l = loss_multistep(&mut t, &[p0, p1], &tgt).unwrap();
    let expected = 0.5 * (0.3 * 3f64.sqrt() / 3.0 + 0.6 * 3f64.sqrt() / 3.0);
    assert!((t.scalar(l) - expected).abs() < 1e-15);
    let one = loss_multistep(&mut t, &[p0], &tgt[..1]).unwrap();
    let direct = t.rel_l2(p0, tgt[0]).unwrap();
    assert_eq!(t.scalar(one), t.scalar(direct));
}

#[test]
fn recurrent_loss_matches_composition() {
    let grid = Grid::new(1, 16).unwrap();
    let m = Model::new(ModelConfig::Fno(FnoConfig::new(FnoVariant::Baseline, 3, 4, 1)), grid).unwrap();
    let p = m.init_params(1);
    let phi = crate::spectral::Field::from_fn(grid, |x| x[0].sin());
    let t1 = m.predict(&p, &phi).unwrap().remove(0);
    let t2 = m.predict(&p, &t1).unwrap().remove(0);
    let mut t = Tape::new();
    let x = t.field(&phi);
    let targets = [t.field(&t1), t.field(&t2)];
    let l = loss_recurrent(&mut t, &m, &p, x, &targets).unwrap();
    assert!(t.scalar(l) < 1e-15);
}

#[test]
fn recurrent_loss_passes_gradient_check() {
    let grid = Grid::new(1, 16).unwrap();
    let mut c = FnoConfig::new(FnoVariant::Baseline, 3, 4, 1);
    c.recentre = true;
    let m = Model::new(ModelConfig::Fno(c), grid).unwrap();
    let p = m.init_params(2);
    let phi = crate::spectral::Field::from_fn(grid, |x| 0.3 * x[0].sin() + 0.1 * (3.0 * x[0]).cos() - 2.0);
    let targets: Vec<_> = (1..=5).map(|k| phi.scale(1.0 + 0.05 * k as f64)).collect();
    let build = |p: &crate::autodiff::ParamVector| {
        let mut t = Tape::new();
        let x = t.field(&phi);
        let ts: Vec<Var> = targets.iter().map(|f| t.field(f)).collect();
        let l = loss_recurrent(&mut t, &m, p, x, &ts)?;
        Ok((t, l))
    };
    let rep = crate::autodiff::gradient_check(build, &p, 30, 1e-6, 3).unwrap();
    assert!(rep.max_rel_error < 1e-4, "{rep:?}");
}

#[test]
fn adam_fixed_points_and_limits() {
    let mut p = vec![1.0, -2.0];
    let mut s = AdamState::new(2);
    adam_step(&mut p, &[0.0, 0.0], &mut s, 0.1, 0.0).unwrap();
    assert_eq!(p, vec![1.0, -2.0]);

    // weight decay alone: factor (1 - lr wd)
    let mut p = vec![1.0, -2.0];
    let mut s = AdamState::new(2);
    adam_step(&mut p, &[0.0, 0.0], &mut s, 0.1, 0.5).unwrap();
    assert_eq!(p, vec![0.95, -1.9]);

    // constant gradient: m̂ = g and v̂ = g² at every step, so the step is lr·g/(|g| + ε)
    let mut p = vec![0.0, 0.0];
    let mut s = AdamState::new(2);
    for _ in 0..50 {
        adam_step(&mut p, &[3.0, -0.5], &mut s, 0.01, 0.0).unwrap();
    }
    assert!((p[0] + 50.0 * 0.01 * 3.0 / (3.0 + ADAM_EPS)).abs() < 1e-12);
    assert!((p[1] - 50.0 * 0.01 * 0.5 / (0.5 + ADAM_EPS)).abs() < 1e-12);

    let mut s = AdamState::new(1);
    assert!(matches!(adam_step(&mut [0.0], &[f64::NAN], &mut s, 0.1, 0.0), Err(Error::Divergence(_))));
}

#[test]
fn schedule_values() {
    let c = cfg();
    assert_eq!(lr_at_epoch(0, &c), 0.0025);
    assert_eq!(lr_at_epoch(99, &c), 0.0025);
    assert_eq!(lr_at_epoch(100, &c), 0.00125);
    assert_eq!(lr_at_epoch(305, &c), 0.0025 * 0.125);
}

#[test]
fn clipping() {
    let mut g = vec![9.0, 12.0];
    assert_eq!(clip_gradients(&mut g, 30.0), 15.0);
    assert_eq!(g, vec![9.0, 12.0]);
    let mut g = vec![36.0, 48.0];
    clip_gradients(&mut g, 30.0);
    assert_eq!(g, vec![18.0, 24.0]);
    let mut g = vec![0.0; 3];
    clip_gradients(&mut g, 30.0);
    assert_eq!(g, vec![0.0; 3]);
}

#[test]
fn clipped_update_ignores_overscaling() {
    let g: Vec<f64> = (0..5).map(|i| 20.0 + i as f64).collect();
    let big: Vec<f64> = g.iter().map(|v| 10.0 * v).collect();
    let run = |mut g: Vec<f64>| {
        clip_gradients(&mut g, 30.0);
        let mut p = vec![0.5; 5];
        let mut s = AdamState::new(5);
        adam_step(&mut p, &g, &mut s, 0.01, 1e-4).unwrap();
        p
    };
    let a = run(g);
    let b = run(big);
    // both clipped vectors equal the threshold-norm direction up to rounding
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-14);
    }
}

fn tiny_data(seqs: usize, steps: usize) -> TrajectoryDataset {
    let grid = Grid::new(1, 16).unwrap();
    let sc = SolverConfig::new(Equation::Ks, 4.0, grid, 0.15).unwrap();
    generate_trajectories(&sc, &InitialConditionSpec::uniform(0.0, 0.5, 1), seqs, steps).unwrap()
}

#[test]
fn windows_cover_each_offset_once() {
    let ds = tiny_data(3, 6);
    let ws = windows(&ds, 2, 1);
    assert_eq!(ws.len(), 3 * 5);
    let set: std::collections::HashSet<_> = ws.iter().copied().collect();
    assert_eq!(set.len(), ws.len());
    assert_eq!(windows(&ds, 2, 2).len(), 3 * 3);
    assert!(windows(&ds, 7, 1).is_empty());
}

fn small_model(n: usize) -> Model {
    let grid = Grid::new(1, 16).unwrap();
    Model::new(ModelConfig::Fno(FnoConfig::new(FnoVariant::Default, 4, 4, n)), grid).unwrap()
}

#[test]
fn training_is_deterministic_and_worker_independent() {
    let ds = tiny_data(3, 5);
    let (tr, va) = ds.split_validation(0.34).unwrap();
    let m = small_model(2);
    let mut c = TrainConfig::new(3, 3, 2, 5);
    let run = |workers: usize| {
        let mut c = c.clone();
        c.workers = workers;
        let mut st = TrainState::new(m.init_params(1));
        train(&m, &tr, Some(&va), &c, &mut st, |_| Ok(())).unwrap();
        st
    };
    let a = run(1);
    let b = run(1);
    let w = run(2);
    assert_eq!(a, b);
    assert_eq!(a.params, w.params);
    assert_eq!(a.history.len(), 3);
    assert!(a.history.iter().all(|r| r.train_rel_l2 >= 0.0 && r.valid_rel_l2 >= 0.0));

    // resuming after one epoch reproduces the unbroken run
    c.epochs = 1;
    let mut st = TrainState::new(m.init_params(1));
    train(&m, &tr, Some(&va), &c, &mut st, |_| Ok(())).unwrap();
    c.epochs = 3;
    train(&m, &tr, Some(&va), &c, &mut st, |_| Ok(())).unwrap();
    assert_eq!(st, a);
}

#[test]
fn overfits_a_single_trajectory() {
    let ds = tiny_data(1, 4);
    let grid = Grid::new(1, 16).unwrap();
    let m = Model::new(ModelConfig::Fno(FnoConfig::new(FnoVariant::Default, 8, 8, 1)), grid).unwrap();
    let mut c = TrainConfig::new(500, 4, 1, 2);
    c.learning_rate = 0.02;
    c.lr_step = 50;
    c.weight_decay = 0.0;
    let mut st = TrainState::new(m.init_params(3));
    train(&m, &ds, None, &c, &mut st, |_| Ok(())).unwrap();
    let last = st.history.last().unwrap().train_rel_l2;
    assert!(last < 1e-3, "final train loss {last}");
}

#[test]
fn train_rejects_mismatches() {
    let ds = tiny_data(2, 4);
    let m = small_model(2);
    let c = TrainConfig::new(1, 1, 3, 0);
    let mut st = TrainState::new(m.init_params(0));
    assert!(matches!(train(&m, &ds, None, &c, &mut st, |_| Ok(())), Err(Error::Config(_))));
    let mut c = TrainConfig::new(1, 1, 2, 0);
    c.precision = Precision::Single;
    assert!(train(&m, &ds, None, &c, &mut st, |_| Ok(())).is_err());
    let grid = Grid::new(1, 32).unwrap();
    let other = Model::new(ModelConfig::Cnn(CnnConfig::new(vec![2, 2], true, 2)), grid).unwrap();
    let c = TrainConfig::new(1, 1, 2, 0);
    let mut st = TrainState::new(other.init_params(0));
    assert!(matches!(train(&other, &ds, None, &c, &mut st, |_| Ok(())), Err(Error::Config(_))));
}

#[test]
fn history_csv_header() {
    let mut buf = Vec::new();
    write_history_csv(&mut buf, &[EpochRecord { epoch: 0, lr: 0.0025, train_rel_l2: 0.5, valid_rel_l2: 0.25 }]).unwrap();
    let s = String::from_utf8(buf).unwrap();
    assert_eq!(s.lines().next().unwrap(), "epoch,lr,train_rel_l2,valid_rel_l2");
    assert_eq!(s.lines().count(), 2);
}

#[test]
fn history_csv_round_trips_exactly() {
    let rows: Vec<EpochRecord> = (0..4)
        .map(|e| EpochRecord { epoch: e, lr: 0.0025 / 3.0, train_rel_l2: 1.0 / (e as f64 + 7.0), valid_rel_l2: f64::NAN })
        .collect();
    let mut buf = Vec::new();
    write_history_csv(&mut buf, &rows).unwrap();
    let back = read_history_csv(&buf[..]).unwrap();
    for (a, b) in rows.iter().zip(&back) {
        assert_eq!((a.epoch, a.lr, a.train_rel_l2), (b.epoch, b.lr, b.train_rel_l2));
        assert!(b.valid_rel_l2.is_nan());
    }
    assert!(read_history_csv(&b"epoch,lr\n"[..]).is_err());
    let err = read_history_csv(&b"epoch,lr,train_rel_l2,valid_rel_l2\n0,1,2\n"[..]).unwrap_err();
    assert!(err.to_string().contains("line 2"));
}
