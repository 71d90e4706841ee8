use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_perturbrl"));
    c.env_remove("PERTURBRL_SEED");
    c
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(c: &mut Command) -> Output {
    c.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn smoke_train(out: &Path) -> Output {
    run(bin()
        .args(["train", "--config"])
        .arg(configs().join("ci_smoke.cfg"))
        .arg("--output")
        .arg(out))
}

#[test]
fn every_shipped_config_validates() {
    for entry in fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        let o = run(bin().arg("validate-config").arg(&path));
        assert!(o.status.success(), "{}: {}", path.display(), stderr(&o));
        assert!(stdout(&o).contains("fingerprint = "));
    }
}

#[test]
fn invalid_config_lists_every_problem_and_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.cfg");
    fs::write(&path, "task = cartpole\nppo.lr = -1\ndisturbance.site = nowhere\nbogus = 3\n").unwrap();
    let o = run(bin().arg("validate-config").arg(&path));
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    for key in ["ppo.lr", "disturbance.site", "bogus"] {
        assert!(err.contains(key), "missing {key} in {err}");
    }
}

#[test]
fn usage_errors_exit_2() {
    let o = run(bin().arg("train"));
    assert_eq!(o.status.code(), Some(2));
    let cfg = configs().join("ci_smoke.cfg");
    let o = run(bin().args(["validate-config", "--not.a.key", "1"]).arg(&cfg));
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = run(bin().args(["validate-config", "--set", "novalue"]).arg(&cfg));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn overrides_reach_the_resolved_config() {
    let cfg = configs().join("ci_smoke.cfg");
    let o = run(bin()
        .args(["validate-config", "--ppo.lr", "0.001", "--set", "seeds=9"])
        .arg(&cfg));
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("ppo.lr = 0.001"), "{out}");
    assert!(out.contains("seeds = 9"), "{out}");

    let o = run(bin().arg("validate-config").arg(&cfg).env("PERTURBRL_SEED", "5"));
    assert!(stdout(&o).contains("seeds = 1,2"), "config seeds win over the environment");
}

#[test]
fn train_is_byte_reproducible_and_feeds_eval_and_plot() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let o = smoke_train(d.path());
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["results.csv", "episodes.csv", "curve_ppo.csv", "checkpoints/ppo_seed1.ckpt"] {
        assert!(fs::read(a.path().join(f)).unwrap() == fs::read(b.path().join(f)).unwrap(), "{f} differs");
    }
    // manifests differ only in the echoed output directory
    let manifest = |d: &Path| -> Vec<String> {
        fs::read_to_string(d.join("manifest.txt"))
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with("output ="))
            .map(String::from)
            .collect()
    };
    assert_eq!(manifest(a.path()), manifest(b.path()));
    let header = fs::read_to_string(a.path().join("results.csv")).unwrap();
    assert!(header.starts_with("task,agent,seed,site,kind,train_level,test_level,param_overrides,"));

    let ev = tempfile::tempdir().unwrap();
    let o = run(bin()
        .args(["eval", "--config"])
        .arg(configs().join("ci_smoke.cfg"))
        .arg("--checkpoint")
        .arg(a.path().join("checkpoints"))
        .args(["--eval.site", "obs", "--eval.kind", "impulse", "--eval.level", "1", "--seed", "3", "--output"])
        .arg(ev.path()));
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = fs::read_to_string(ev.path().join("results.csv")).unwrap();
    // two checkpoints, one seed
    assert_eq!(rows.lines().count(), 3, "{rows}");
    assert!(rows.lines().skip(1).all(|l| l.contains(",obs,impulse,")), "{rows}");

    let o = run(bin().args(["plot", "--kind", "curve", "--input"]).arg(a.path()));
    assert!(o.status.success(), "{}", stderr(&o));
    let svg = fs::read_to_string(a.path().join("plot_curve.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("polyline"));
}

#[test]
fn ablate_dry_run_lists_grid() {
    let o = run(bin()
        .args(["ablate", "--dry-run", "--config"])
        .arg(configs().join("ablate_cvar_alpha.cfg")));
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    for v in ["variant ppo", "variant wcpg[alpha=0.1]", "variant raac[alpha=1]", "condition tap force"] {
        assert!(out.contains(v), "{out}");
    }
}
