use super::*;
use crate::data::ShapeCategory;

fn tiny() -> RunConfig {
    RunConfig {
        shapes_per_category: 3,
        n_points: 16,
        epochs_phase1: 2,
        epochs_phase2: 1,
        batch: 4,
        ..RunConfig::default()
    }
}

#[test]
fn lambda_zero_records_zero_regularizer() {
    let rec = run_openset(&RunConfig {
        lambda: 0.0,
        ..tiny()
    })
    .unwrap();
    assert!(rec.post_surgery.is_some());
    assert!(rec.steps.iter().all(|s| s.l3cm == 0.0 && s.total == s.ce));
    let curves = parse_curves(&curves_csv(&rec), "mem").unwrap();
    assert!(curves.iter().all(|c| c.l3cm == 0.0));
}

#[test]
fn default_lambda_finishes_with_finite_losses() {
    let rec = run_openset(&tiny()).unwrap();
    assert!(!rec.status.is_diverged());
    assert!(rec
        .steps
        .iter()
        .all(|s| s.ce.is_finite() && s.l3cm.is_finite() && s.total.is_finite()));
    assert!(rec
        .steps
        .iter()
        .any(|s| s.phase == Phase::Initial && s.l3cm > 0.0));
    assert!(rec
        .steps
        .iter()
        .filter(|s| s.phase == Phase::Finetune)
        .all(|s| s.l3cm == 0.0));
}

#[test]
fn steps_match_optimizer_updates() {
    let cfg = tiny();
    let rec = run_openset(&cfg).unwrap();
    let ds = prepare_dataset(&cfg).unwrap();
    let per_epoch = ds.train.len().div_ceil(cfg.batch);
    assert_eq!(
        rec.phase_steps(Phase::Initial).count(),
        per_epoch * cfg.epochs_phase1
    );
    assert_eq!(
        rec.phase_steps(Phase::Finetune).count(),
        per_epoch * cfg.epochs_phase2
    );
    assert_eq!(rec.epochs.len(), cfg.epochs_phase1 + cfg.epochs_phase2);
}

#[test]
fn reruns_are_identical_and_surgery_keeps_logits() {
    let a = run_openset(&tiny()).unwrap();
    let b = run_openset(&tiny()).unwrap();
    assert_eq!(a.to_json_canonical(), b.to_json_canonical());
    assert_eq!(a.surgery_retained_max_abs_diff, Some(0.0));
    let c = run_openset(&RunConfig { seed: 1, ..tiny() }).unwrap();
    assert_ne!(a.to_json_canonical(), c.to_json_canonical());
}

#[test]
fn record_json_round_trip() {
    let rec = run_openset(&tiny()).unwrap();
    let back = RunRecord::from_json(&rec.to_json()).unwrap();
    assert_eq!(back.to_json(), rec.to_json());
    assert_eq!(
        RunConfig::parse(&back.config.to_kv_string()).unwrap(),
        rec.config
    );
}

#[test]
fn beta_one_freezes_the_aggregate() {
    let rec = run_openset(&RunConfig {
        beta: 1.0,
        ..tiny()
    })
    .unwrap();
    let first = &rec.q_hat_trajectory[0].q_hat;
    let c = first.len() as f64;
    assert!(first.iter().all(|&q| q == 1.0 / c));
    assert!(rec.q_hat_trajectory.iter().all(|s| &s.q_hat == first));
}

#[test]
fn aggregate_moves_when_beta_below_one() {
    let rec = run_openset(&RunConfig {
        beta: 0.5,
        ..tiny()
    })
    .unwrap();
    let traj = &rec.q_hat_trajectory;
    assert!(traj.len() >= 2);
    assert_ne!(traj[0].q_hat, traj[traj.len() - 1].q_hat);
    for s in traj {
        assert!((s.q_hat.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn exploding_learning_rate_reports_divergence() {
    let rec = run_openset(&RunConfig { lr: 1e9, ..tiny() }).unwrap();
    match rec.status {
        RunStatus::Diverged { phase, step, .. } => {
            assert_eq!(phase, Phase::Initial);
            assert_eq!(step, rec.steps.len());
        }
        ref other => panic!("expected divergence, got {other:?}"),
    }
    assert!(rec.post_surgery.is_none());
}

#[test]
fn evaluation_rejects_unexpected_head_width() {
    let (ds, params, _) = train_initial(&tiny()).unwrap();
    assert!(evaluate(&params, &ds).is_ok());
    let mut wrong = params.clone();
    wrong.seg_head.weight = crate::autodiff::Matrix::zeros(wrong.seg_head.weight.rows(), 3);
    wrong.seg_head.bias = crate::autodiff::Matrix::zeros(1, 3);
    assert!(evaluate(&wrong, &ds).is_err());
}

#[test]
fn pre_surgery_unknown_parts_score_zero_when_present() {
    let rec = run_openset(&tiny()).unwrap();
    let pre = rec.pre_surgery.unwrap();
    for c in &pre.categories {
        if c.group == crate::metrics::Group::Unknown {
            assert_eq!(c.miou, 0.0);
        }
    }
}

#[test]
fn convergence_check() {
    let mk = |ce: f64, l: f64| StepRecord {
        phase: Phase::Initial,
        epoch: 0,
        ce,
        l3cm: l,
        total: ce - l,
    };
    let settling: Vec<StepRecord> = (0..100)
        .map(|i| {
            mk(
                2.0 - i as f64 * 0.01,
                if i < 10 { (i % 2) as f64 } else { 0.5 },
            )
        })
        .collect();
    assert_eq!(assess_convergence(&settling, true), None);
    let noisy: Vec<StepRecord> = (0..100)
        .map(|i| {
            mk(
                2.0 - i as f64 * 0.01,
                if i >= 90 { (i % 2) as f64 } else { 0.5 },
            )
        })
        .collect();
    assert!(assess_convergence(&noisy, true).is_some());
    assert_eq!(assess_convergence(&noisy, false), None);
    let flat: Vec<StepRecord> = (0..100).map(|_| mk(1.0, 0.0)).collect();
    assert!(assess_convergence(&flat, false).is_some());
}

#[test]
fn curves_file_round_trip() {
    let rec = run_openset(&tiny()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("curves.csv");
    export_curves(&rec, &path).unwrap();
    let pts = read_curves(&path).unwrap();
    let initial: Vec<&StepRecord> = rec.phase_steps(Phase::Initial).collect();
    assert_eq!(pts.len(), initial.len());
    for (i, (p, s)) in pts.iter().zip(initial).enumerate() {
        assert_eq!((p.step, p.ce, p.l3cm, p.total), (i, s.ce, s.l3cm, s.total));
    }
    assert!(export_curves(&rec, dir.path().join("missing/dir/c.csv")).is_err());
    assert!(parse_curves("step,ce\n", "x").is_err());
}

#[test]
fn sweeps_produce_sorted_rows_and_share_runs() {
    let base = RunConfig {
        unknown_classes: vec![ShapeCategory::Guitar],
        ..tiny()
    };
    let mut runner = Runner::new();
    let t = sweep_lambda(&mut runner, &[0.5, 0.1], &base, &[0, 1]).unwrap();
    assert_eq!(
        t.rows.iter().map(|r| r.value).collect::<Vec<_>>(),
        vec![0.1, 0.5]
    );
    assert_eq!(runner.len(), 4);
    let csv = t.to_csv();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("lambda,seen_miou,unseen_miou,completed,degraded,diverged,status\n"));
    let b = sweep_beta(
        &mut runner,
        &[0.995],
        &RunConfig {
            lambda: 0.5,
            ..base.clone()
        },
        &[0, 1],
    )
    .unwrap();
    assert_eq!(
        runner.len(),
        4,
        "the lambda = 0.5, beta = 0.995 cell is reused"
    );
    assert_eq!(b.rows[0].seeds.len(), 2);
    assert!(sweep_lambda(&mut runner, &[], &base, &[0]).is_err());
    assert!(sweep_lambda(&mut runner, &[-1.0], &base, &[0]).is_err());
    assert!(sweep_beta(&mut runner, &[1.5], &base, &[0]).is_err());
}

#[test]
fn lambda_zero_sweep_row_equals_plain_run() {
    let base = tiny();
    let mut runner = Runner::new();
    let t = sweep_lambda(&mut runner, &[0.0], &base, &[0]).unwrap();
    let plain = run_openset(&RunConfig {
        lambda: 0.0,
        ..base
    })
    .unwrap();
    let (seen, unseen) = plain.headline();
    assert_eq!(t.rows[0].seen_miou, seen);
    assert_eq!(t.rows[0].unseen_miou, unseen);
}

#[test]
fn all_diverged_cell_prints_na() {
    let mut runner = Runner::new();
    let t = sweep_lambda(&mut runner, &[0.5], &RunConfig { lr: 1e9, ..tiny() }, &[0]).unwrap();
    assert_eq!(t.rows[0].diverged, 1);
    assert_eq!(t.rows[0].seen_miou, None);
    assert!(t
        .to_csv()
        .lines()
        .nth(1)
        .unwrap()
        .contains(",NA,NA,0,0,1,diverged=1"));
}
