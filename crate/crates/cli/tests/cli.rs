use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = "dataset.size = 300\n\
                     gmm.components = 3\n\
                     evolution.pop_size = 20\n\
                     evolution.generations = 15\n\
                     evolution.immigrants = 4\n\
                     sweep.crossover_prob = 0.9\n\
                     sweep.mutation_prob = 0.2\n\
                     sweep.pop_size = 20\n\
                     sweep.tournament_size = 3\n\
                     targets = top:2\n";

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stylesearch"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Temp dir holding `small.cfg` and a model fitted from it.
fn fitted() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.cfg"), SMALL).unwrap();
    let out = run(&["fit", "--config", p(&dir.path().join("small.cfg")), "--out", p(dir.path())]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    dir
}

fn csv_rows(path: &Path) -> (String, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().to_string();
    let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    (header, rows)
}

#[test]
fn fit_writes_model_and_cluster_sizes() {
    let dir = fitted();
    assert!(dir.path().join("model.txt").is_file());
    let (header, rows) = csv_rows(&dir.path().join("cluster_sizes.csv"));
    assert_eq!(header, "component,size,mean_posterior");
    assert_eq!(rows.len(), 3);
    let total: usize = rows.iter().map(|r| r[1].parse::<usize>().unwrap()).sum();
    assert_eq!(total, 300);
}

#[test]
fn evolve_csv_has_one_row_per_generation() {
    let dir = fitted();
    let d = dir.path();
    let out = run(&[
        "evolve", "--config", p(&d.join("small.cfg")), "--model", p(&d.join("model.txt")),
        "--target", "0", "--out", p(d),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = csv_rows(&d.join("evolve_t0.csv"));
    assert_eq!(header, "generation,max_fitness,mean_fitness");
    assert_eq!(rows.len(), 15);
    let maxima: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(maxima.windows(2).all(|w| w[1] >= w[0]));
    for (g, r) in rows.iter().enumerate() {
        assert_eq!(r[0], g.to_string());
        let mean: f64 = r[2].parse().unwrap();
        assert!(mean <= maxima[g] && (0.0..=1.0).contains(&mean));
    }
    let pgm = fs::read(d.join("evolve_t0_best.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n16 16\n255\n"));
    assert_eq!(pgm.len(), 13 + 256);
    let latent = fs::read_to_string(d.join("evolve_t0_best_latent.txt")).unwrap();
    assert_eq!(latent.split_whitespace().count(), 16);
}

#[test]
fn evolve_defaults_to_largest_component() {
    let dir = fitted();
    let d = dir.path();
    let (_, sizes) = csv_rows(&d.join("cluster_sizes.csv"));
    let largest = (0..3)
        .max_by_key(|&c| (sizes[c][1].parse::<usize>().unwrap(), std::cmp::Reverse(c)))
        .unwrap();
    let out = run(&["evolve", "--config", p(&d.join("small.cfg")), "--model", p(&d.join("model.txt")), "--out", p(d)]);
    assert_eq!(code(&out), 0);
    assert!(d.join(format!("evolve_t{largest}.csv")).is_file());
}

#[test]
fn baseline_spends_the_evolution_budget() {
    let dir = fitted();
    let d = dir.path();
    let out = run(&[
        "baseline", "--config", p(&d.join("small.cfg")), "--model", p(&d.join("model.txt")),
        "--target", "1", "--out", p(d),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = csv_rows(&d.join("baseline_t1.csv"));
    assert_eq!(header, "budget,best_fitness");
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][0], "300");
    assert!(d.join("baseline_t1_best.pgm").is_file());
}

#[test]
fn export_ranks_by_posterior() {
    let dir = fitted();
    let d = dir.path();
    let out = run(&["export", "--model", p(&d.join("model.txt")), "--target", "2", "--count", "3", "--out", p(d)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = csv_rows(&d.join("export_t2.csv"));
    assert_eq!(header, "rank,sample,posterior");
    assert_eq!(rows.len(), 3);
    let posts: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    assert!(posts.windows(2).all(|w| w[0] >= w[1]));
    for r in 1..=3 {
        assert!(d.join(format!("export_t2_rank{r}.pgm")).is_file());
    }
}

#[test]
fn single_component_export_has_unit_posteriors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("k1.cfg"), "dataset.size = 100\ngmm.components = 1\ntargets = 0\n").unwrap();
    assert_eq!(code(&run(&["fit", "--config", p(&d.join("k1.cfg")), "--out", p(d)])), 0);
    let out = run(&["export", "--model", p(&d.join("model.txt")), "--target", "0", "--count", "2", "--out", p(d)]);
    assert_eq!(code(&out), 0);
    let (_, rows) = csv_rows(&d.join("export_t0.csv"));
    assert_eq!(rows.len(), 2);
    for r in rows {
        assert_eq!(r[2].parse::<f64>().unwrap(), 1.0);
    }
}

#[test]
fn sweep_writes_detail_and_aggregate() {
    let dir = fitted();
    let d = dir.path();
    let out = run(&["sweep", "--config", p(&d.join("small.cfg")), "--model", p(&d.join("model.txt")), "--out", p(d)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = csv_rows(&d.join("sweep.csv"));
    assert_eq!(header, "p_cx,p_mut,n_pop,n_ts,style,run,best_fitness");
    assert_eq!(rows.len(), 2);
    let (header, agg) = csv_rows(&d.join("sweep_aggregate.csv"));
    assert_eq!(header, "p_cx,p_mut,n_pop,n_ts,mean_best_fitness");
    assert_eq!(agg.len(), 1);
    let mean = (rows[0][6].parse::<f64>().unwrap() + rows[1][6].parse::<f64>().unwrap()) / 2.0;
    assert!((agg[0][4].parse::<f64>().unwrap() - mean).abs() < 1e-15);
}

#[test]
fn seed_flag_changes_the_run() {
    let dir = fitted();
    let d = dir.path();
    let args = |seed: &'static str, out: &'static str| {
        vec![
            "evolve".to_string(),
            "--config".into(),
            p(&d.join("small.cfg")).into(),
            "--model".into(),
            p(&d.join("model.txt")).into(),
            "--target".into(),
            "0".into(),
            "--seed".into(),
            seed.into(),
            "--out".into(),
            p(&d.join(out)).into(),
        ]
    };
    for (seed, out) in [("1", "a"), ("2", "b")] {
        let a = args(seed, out);
        let refs: Vec<&str> = a.iter().map(String::as_str).collect();
        assert_eq!(code(&run(&refs)), 0);
    }
    assert_ne!(
        fs::read(d.join("a/evolve_t0.csv")).unwrap(),
        fs::read(d.join("b/evolve_t0.csv")).unwrap()
    );
}

#[test]
fn invalid_config_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for (i, text) in ["evolution.crossover_prob = 2", "no equals sign", "bogus.key = 3", "evolution.elite = 40\nevolution.immigrants = 20"]
        .iter()
        .enumerate()
    {
        let cfg = d.join(format!("bad{i}.cfg"));
        fs::write(&cfg, text).unwrap();
        let out = run(&["fit", "--config", p(&cfg), "--out", p(d)]);
        assert_eq!(code(&out), 2, "{text}");
        assert!(!out.stderr.is_empty());
    }
    assert_eq!(code(&run(&["fit", "--config", p(&d.join("missing.cfg"))])), 2);
    assert_eq!(code(&run(&["fit", "--unknown-flag"])), 2);
}

#[test]
fn target_out_of_range_exits_with_2() {
    let dir = fitted();
    let d = dir.path();
    for cmd in ["evolve", "baseline", "export"] {
        let out = run(&[cmd, "--config", p(&d.join("small.cfg")), "--model", p(&d.join("model.txt")), "--target", "3", "--out", p(d)]);
        assert_eq!(code(&out), 2, "{cmd}");
    }
}

#[test]
fn model_config_mismatch_exits_with_2() {
    let dir = fitted();
    let d = dir.path();
    let other = d.join("other.cfg");
    fs::write(&other, format!("{SMALL}generator.latent_dim = 8\n")).unwrap();
    let out = run(&["evolve", "--config", p(&other), "--model", p(&d.join("model.txt")), "--target", "0", "--out", p(d)]);
    assert_eq!(code(&out), 2);
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("16") && msg.contains('8'), "{msg}");
}

#[test]
fn corrupt_model_exits_with_2() {
    let dir = fitted();
    let d = dir.path();
    let text = fs::read_to_string(d.join("model.txt")).unwrap();
    fs::write(d.join("bad.txt"), &text[..text.len() / 2]).unwrap();
    let out = run(&["evolve", "--model", p(&d.join("bad.txt")), "--target", "0", "--out", p(d)]);
    assert_eq!(code(&out), 2);
}

#[test]
fn unwritable_output_exits_with_1() {
    let dir = fitted();
    let d = dir.path();
    let blocker = d.join("file");
    fs::write(&blocker, "not a directory").unwrap();
    let out = run(&[
        "evolve", "--config", p(&d.join("small.cfg")), "--model", p(&d.join("model.txt")),
        "--target", "0", "--out", p(&blocker.join("sub")),
    ]);
    assert_eq!(code(&out), 1);
}
