use std::fs;

use entac::harness::{
    parse_config, read_run_csv, read_runs, recompute_aggregate, run_sweep, summarize, ConfigDoc, EnvSpec, SweepSpec,
};
use entac::mdp::InitMode;
use entac::trainer::{run_ent_ac, TauMode, TrainConfig};
use entac::Execution;

fn small_spec(h_list: Vec<usize>, n_seeds: usize) -> SweepSpec {
    SweepSpec {
        env: EnvSpec::Gridworld { rows: 2, cols: 2, init_mode: InitMode::Uniform },
        gamma: 0.9,
        lambda: 0.1,
        h_list,
        eta_a_grid: vec![0.05],
        eta_c_grid: vec![0.1],
        n_seeds,
        k: 60,
        eval_every: 20,
        include_exact_oracle: false,
        out_dir: None,
        base_seed: 3,
        pilot_seeds: 1,
        tau_mode: TauMode::Auto,
    }
}

#[test]
fn single_run_sweep_matches_its_trace() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec(vec![4], 1);
    let summary = run_sweep(&spec, dir.path(), Execution::default()).unwrap();
    let runs = read_runs(dir.path()).unwrap();
    assert_eq!(runs.len(), 1);
    assert_eq!(runs[0].label, "H4");
    assert_eq!(runs[0].seed, 3);

    let mdp = spec.env.build(spec.gamma).unwrap();
    let mut cfg = TrainConfig::new(0.05, 0.1, 4, 60, 0.1, 3);
    cfg.eval_every = 20;
    let trace = run_ent_ac(&mdp, &cfg).unwrap();
    let aggregate = fs::read_to_string(dir.path().join("aggregate.csv")).unwrap();
    let lines: Vec<&str> = aggregate.lines().collect();
    assert_eq!(lines[0], "H,k,mean_objective,std_objective,n");
    assert_eq!(lines.len(), 1 + trace.records.len());
    for (line, r) in lines[1..].iter().zip(&trace.records) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[0], "4");
        assert_eq!(f[1].parse::<usize>().unwrap(), r.k);
        assert_eq!(f[2].parse::<f64>().unwrap(), r.objective);
        assert_eq!(f[3].parse::<f64>().unwrap(), 0.0);
        assert_eq!(f[4], "1");
    }

    let s = summarize(dir.path()).unwrap();
    assert_eq!(s["labels"]["H4"]["final_mean"].as_f64().unwrap(), trace.final_record().objective);
    assert_eq!(s["labels"]["H4"]["final_std"].as_f64().unwrap(), 0.0);
    assert_eq!(summary.finals[0].final_mean, trace.final_record().objective);
    assert!(s.get("wall_times").is_some());
}

#[test]
fn recomputed_aggregate_matches_written_file() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = small_spec(vec![2, 8], 4);
    spec.include_exact_oracle = true;
    spec.eta_a_grid = vec![0.01, 0.05];
    let summary = run_sweep(&spec, dir.path(), Execution::default()).unwrap();
    assert!(summary.failures.is_empty());
    let recomputed = recompute_aggregate(&read_runs(dir.path()).unwrap());
    let text = fs::read_to_string(dir.path().join("aggregate.csv")).unwrap();
    let mut checked = 0;
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let label = if f[0] == "exact" { "exact".to_string() } else { format!("H{}", f[0]) };
        let k: usize = f[1].parse().unwrap();
        let row = recomputed[&label].iter().find(|r| r.0 == k).unwrap();
        assert!((row.1 - f[2].parse::<f64>().unwrap()).abs() <= 1e-12);
        assert!((row.2 - f[3].parse::<f64>().unwrap()).abs() <= 1e-12);
        assert_eq!(row.3, f[4].parse::<usize>().unwrap());
        checked += 1;
    }
    assert_eq!(checked, 3 * 4);

    // Per-label ordering in the summary follows the aggregate.
    let s = summarize(dir.path()).unwrap();
    for stat in &summary.finals {
        let m = s["labels"][&stat.label]["final_mean"].as_f64().unwrap();
        assert!((m - stat.final_mean).abs() <= 1e-12);
    }
    let grid = fs::read_to_string(dir.path().join("grid.csv")).unwrap();
    assert_eq!(grid.lines().filter(|l| l.ends_with(",true")).count(), 3);
}

#[test]
fn sweep_selects_exact_oracle_mode_for_exact_label() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = small_spec(vec![2], 2);
    spec.include_exact_oracle = true;
    run_sweep(&spec, dir.path(), Execution::Sequential).unwrap();
    for run in read_runs(dir.path()).unwrap() {
        let path = dir.path().join("runs").join(format!("{}_seed{}.csv", run.label, run.seed));
        let text = fs::read_to_string(&path).unwrap();
        if run.label == "exact" {
            for line in text.lines().skip(1) {
                let mse: f64 = line.split(',').nth(4).unwrap().parse().unwrap();
                assert!(mse <= 1e-20);
            }
        }
        assert_eq!(read_run_csv(&path).unwrap(), run);
    }
}

#[test]
fn parsed_train_doc_runs() {
    let doc = parse_config(
        r#"{"env":{"synthetic":{"n_states":3,"n_actions":2,"seed":4}},"gamma":0.8,
            "eta_a":0.1,"eta_c":0.1,"H":4,"K":20,"lambda":0.1,"seed":1,"tau_mode":{"fixed":0.01}}"#,
    )
    .unwrap();
    let ConfigDoc::Train(t) = doc else { panic!("expected a train doc") };
    assert_eq!(t.config.tau_mode, TauMode::Fixed(0.01));
    let trace = run_ent_ac(&t.build_mdp().unwrap(), &t.config).unwrap();
    assert!(trace.records.iter().all(|r| r.policy_min >= 0.01 - 1e-15));
}
