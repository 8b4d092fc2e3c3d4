use std::fs;
use std::path::Path;
use std::time::Instant;

use clap::Parser;
use fav_cli::cli::{run, Cli};
use fav_cli::commands::{self, stream, SweepTarget};
use fav_cli::config::ExperimentConfig;
use fav_cli::manifest::{read_manifest, RunStatus};
use fav_core::generators::GeneratorKind;
use fav_core::numeric::{Batch, RngStream};

fn small(dir: &Path, kind: GeneratorKind) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.run.out_dir = dir.to_path_buf();
    c.generator.kind = kind;
    c.generator.hidden_width = 16;
    c.pretrain.steps = 200;
    c.pretrain.batch_size = 64;
    c.pretrain.pool_size = 2000;
    c.fav.steps = 40;
    c.fav.n_gen = 32;
    c.fav.n_ref = 32;
    c.eval.samples = 256;
    c.eval.every = 20;
    c.svgd.particles = 64;
    c.svgd.iters = 30;
    c.policy.steps = 30;
    c.policy.states_per_batch = 8;
    c.dataset.states = 100;
    c.dataset.eval_draws = 1000;
    c
}

fn cli(args: &[&str]) -> fav_cli::Result<String> {
    let mut full = vec!["fav"];
    full.extend_from_slice(args);
    run(Cli::try_parse_from(full).expect("arguments parse"))
}

#[test]
fn config_round_trip_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small(dir.path(), GeneratorKind::Vae);
    c.fav.terms.prior = false;
    c.fav.zeroth_order = Some(fav_cli::config::ZerothOrder { eta: 1e-3, samples: 64 });
    c.policy.adaptive_bandwidth = true;
    let text = c.to_toml();
    let back = ExperimentConfig::from_toml(&text).unwrap();
    assert_eq!(back, c);
    assert_eq!(back.to_toml(), text);

    let dumped = cli(&["config", "--dump-defaults"]).unwrap();
    assert_eq!(ExperimentConfig::from_toml(&dumped).unwrap(), ExperimentConfig::default());

    let path = dir.path().join("c.toml");
    fs::write(&path, &text).unwrap();
    assert_eq!(cli(&["config", "--check", path.to_str().unwrap()]).unwrap(), text);
}

#[test]
fn config_errors_point_at_the_key() {
    let e = ExperimentConfig::from_toml("[fav]\nsteps = 10\nbogus = 1\n").unwrap_err().to_string();
    assert!(e.contains("bogus") && e.contains("line 3"), "{e}");
    let e = ExperimentConfig::from_toml("[pretrain]\nsteps = \"many\"\n").unwrap_err().to_string();
    assert!(e.contains("steps") && e.contains("line 2"), "{e}");
}

#[test]
fn zero_step_pretrain_checkpoint_is_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small(dir.path(), GeneratorKind::MeanFlow);
    c.pretrain.steps = 0;
    c.run.seed = 11;
    let m = commands::pretrain(&c).unwrap();
    assert_eq!(m.status, RunStatus::Complete);
    assert_eq!(m.final_step, Some(0));
    let g = commands::load_generator(&dir.path().join("model.ckpt")).unwrap();
    let init = c.generator_spec().build(&mut RngStream::new(11).substream(stream::INIT));
    assert_eq!(g, init);
    assert_eq!(read_manifest(dir.path()).unwrap(), m);
    assert_eq!(fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap().lines().count(), 1);
}

fn run_twice(f: impl Fn(&Path) -> fav_cli::Result<()>) -> (Vec<u8>, Vec<u8>) {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    f(a.path()).unwrap();
    f(b.path()).unwrap();
    let read = |d: &Path| fs::read(d.join("metrics.jsonl")).unwrap();
    (read(a.path()), read(b.path()))
}

#[test]
fn every_command_is_deterministic_and_reproducible_by_eval() {
    let pre = tempfile::tempdir().unwrap();
    commands::pretrain(&small(pre.path(), GeneratorKind::Drifting)).unwrap();
    let ck = pre.path().join("model.ckpt");

    let (a, b) = run_twice(|d| commands::pretrain(&small(d, GeneratorKind::Drifting)).map(|_| ()));
    assert_eq!(a, b);
    let (a, b) = run_twice(|d| commands::finetune(&small(d, GeneratorKind::Drifting), &ck).map(|_| ()));
    assert_eq!(a, b);
    let (a, b) = run_twice(|d| commands::svgd(&small(d, GeneratorKind::Drifting)).map(|_| ()));
    assert_eq!(a, b);
    let (a, b) = run_twice(|d| commands::policy_extract(&small(d, GeneratorKind::Drifting)).map(|_| ()));
    assert_eq!(a, b);
    let (a, b) = run_twice(|d| {
        let mut c = small(d, GeneratorKind::Drifting);
        c.fav.zeroth_order = Some(fav_cli::config::ZerothOrder { eta: 1e-2, samples: 8 });
        commands::finetune(&c, &ck).map(|_| ())
    });
    assert_eq!(a, b);

    for (name, go) in [
        ("ft", Box::new(|d: &Path| commands::finetune(&small(d, GeneratorKind::Drifting), &ck).map(|_| ())) as Box<dyn Fn(&Path) -> fav_cli::Result<()>>),
        ("sv", Box::new(|d: &Path| commands::svgd(&small(d, GeneratorKind::Drifting)).map(|_| ()))),
        ("pol", Box::new(|d: &Path| commands::policy_extract(&small(d, GeneratorKind::Drifting)).map(|_| ()))),
    ] {
        let d = tempfile::tempdir().unwrap();
        go(d.path()).unwrap();
        let r = commands::eval(d.path()).unwrap();
        assert!(r.matches, "{name}: {r:?}");
    }
    let r = commands::eval(pre.path()).unwrap();
    assert!(r.matches, "{r:?}");
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("c.toml");
    let out = dir.path().join("sv");
    fs::write(&cfg_path, small(&out, GeneratorKind::Vae).to_toml()).unwrap();
    cli(&[
        "svgd",
        "-c",
        cfg_path.to_str().unwrap(),
        "--seed",
        "5",
        "--steps",
        "7",
        "--beta",
        "2",
        "--tau",
        "1.5",
        "--ablate",
        "repulsive",
        "--zeroth-order",
        "0.001,16",
    ])
    .unwrap();
    let m = read_manifest(&out).unwrap();
    assert_eq!(m.seed, 5);
    assert_eq!(m.final_step, Some(7));
    assert_eq!(m.config.target.beta, 2.0);
    assert_eq!(m.config.svgd.tau, 1.5);
    assert!(!m.config.fav.terms.repulsive && m.config.fav.terms.prior);
    assert_eq!(m.config.fav.zeroth_order.unwrap().samples, 16);
    assert!(Cli::try_parse_from(["fav", "svgd", "--zeroth-order", "0.1"]).is_err());
    assert!(Cli::try_parse_from(["fav", "svgd", "--ablate", "momentum"]).is_err());
}

#[test]
fn finetune_rejects_a_checkpoint_of_another_kind() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small(&dir.path().join("pre"), GeneratorKind::Vae);
    c.pretrain.steps = 0;
    commands::pretrain(&c).unwrap();
    let ft = small(&dir.path().join("ft"), GeneratorKind::MeanFlow);
    let e = commands::finetune(&ft, &dir.path().join("pre/model.ckpt")).unwrap_err().to_string();
    assert!(e.contains("vae") && e.contains("meanflow"), "{e}");
}

#[test]
fn ablated_terms_are_zero_in_the_velocity_dump() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small(&dir.path().join("pre"), GeneratorKind::Vae);
    c.pretrain.steps = 0;
    commands::pretrain(&c).unwrap();
    let out = dir.path().join("ft");
    cli(&[
        "finetune",
        "--checkpoint",
        dir.path().join("pre/model.ckpt").to_str().unwrap(),
        "--kind",
        "vae",
        "--out",
        out.to_str().unwrap(),
        "--steps",
        "3",
        "--ablate",
        "reward",
    ])
    .unwrap();
    let (head, rows) = fav_cli::samples::read_csv(&out.join("velocity.csv")).unwrap();
    assert_eq!(head.len(), 8);
    assert_eq!(rows.rows(), ExperimentConfig::default().fav.n_gen);
    assert!(rows.iter_rows().all(|r| r[4] == 0.0 && r[5] == 0.0));
    assert!(rows.iter_rows().any(|r| r[2] != 0.0 && r[6] != 0.0));
}

#[test]
fn plots_are_deterministic_and_handle_empty_samples() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("samples.csv"), "x,y\n").unwrap();
    cli(&["plot", dir.path().to_str().unwrap()]).unwrap();
    let svg = fs::read_to_string(dir.path().join("samples.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    assert!(svg.contains("<path d=\"M") && !svg.contains("<circle"));

    let big = RngStream::new(0).normal_batch(10_000, 2).map(|v| 2.0 * v);
    fav_cli::samples::write_csv(&dir.path().join("samples.csv"), &["x", "y"], &big).unwrap();
    let t0 = Instant::now();
    fav_cli::plot::plot(dir.path()).unwrap();
    assert!(t0.elapsed().as_secs_f64() < 5.0);
    let first = fs::read(dir.path().join("samples.svg")).unwrap();
    fav_cli::plot::plot(dir.path()).unwrap();
    assert_eq!(first, fs::read(dir.path().join("samples.svg")).unwrap());
    assert_eq!(String::from_utf8(first).unwrap().matches("<circle").count(), 10_000);
}

#[test]
fn finetune_run_renders_a_quiver() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small(&dir.path().join("pre"), GeneratorKind::MeanFlow);
    c.pretrain.steps = 0;
    commands::pretrain(&c).unwrap();
    c.run.out_dir = dir.path().join("ft");
    commands::finetune(&c, &dir.path().join("pre/model.ckpt")).unwrap();
    let files = fav_cli::plot::plot(&c.run.out_dir).unwrap();
    assert_eq!(files.len(), 2);
    let q = fs::read_to_string(c.run.out_dir.join("velocity.svg")).unwrap();
    assert!(q.contains("repulsive"));
}

#[test]
fn sweep_runs_every_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small(dir.path(), GeneratorKind::Vae);
    c.sweep.betas = vec![0.5, 2.0];
    c.sweep.taus = vec![];
    c.sweep.seeds = vec![0, 1];
    let points = commands::sweep(&c, SweepTarget::Svgd, None).unwrap();
    assert_eq!(points.len(), 4);
    let lines = fs::read_to_string(dir.path().join("summary.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 4);
    for p in &points {
        let m = read_manifest(&p.run_dir).unwrap();
        assert_eq!(m.config.target.beta, p.beta);
        assert_eq!(m.seed, p.seed);
    }
    assert!(commands::sweep(&c, SweepTarget::Finetune, None).is_err());
}

#[test]
fn samples_round_trip_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let b = RngStream::new(3).normal_batch(50, 2).map(|v| v * 1e-7 + 1.0 / 3.0);
    let p = dir.path().join("s.csv");
    fav_cli::samples::write_csv(&p, &["x", "y"], &b).unwrap();
    let (h, back) = fav_cli::samples::read_csv(&p).unwrap();
    assert_eq!(h, ["x", "y"]);
    assert_eq!(back, b);
    fs::write(&p, "x,y\n1,2,3\n").unwrap();
    assert!(fav_cli::samples::read_csv(&p).is_err());
    let _ = Batch::zeros(0, 2);
}
