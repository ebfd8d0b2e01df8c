use std::path::Path;
use std::process::{Command, Output};

use pm_robopt::{parse_str, RunManifest};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pm-robopt"));
    c.env_remove("PM_ROBOPT_OUT");
    c
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().unwrap()
}

fn header(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string()
}

#[test]
fn table1_writes_counts_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["table1", "--out", "res"], dir.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let res = dir.path().join("res");
    let table = std::fs::read_to_string(res.join("table1.csv")).unwrap();
    assert_eq!(table, "d,full_tensor,sparse_level3\n5,3125,241\n7,78125,589\n11,48828125,2069\n15,30517578125,5021\n");
    let m = RunManifest::read(&res).unwrap();
    assert_eq!(m.command, "table1");
    assert!(m.succeeded());
    assert_eq!(m.files.len(), 1);
    assert_eq!(m.files[0].path, "table1.csv");
    assert_eq!(m.files[0].bytes, table.len() as u64);
}

#[test]
fn invalid_config_exits_nonzero_and_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "[scenario]\nalpha = 1.5\n").unwrap();
    let out = run(
        &["cycle", "--config", "bad.toml", "--out", "res"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("scenario.alpha"));

    let out = run(&["cycle", "--config", "missing.toml"], dir.path());
    assert!(!out.status.success());
}

#[test]
fn output_directory_precedence() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("c.toml"),
        "[output]\ndir = \"from_config\"\n",
    )
    .unwrap();
    let out = run(&["table1", "--config", "c.toml"], dir.path());
    assert!(out.status.success());
    assert!(dir.path().join("from_config/table1.csv").exists());

    let out = bin()
        .args(["table1", "--config", "c.toml"])
        .env("PM_ROBOPT_OUT", "from_env")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("from_env/table1.csv").exists());

    let out = bin()
        .args(["table1", "--config", "c.toml", "--out", "from_flag"])
        .env("PM_ROBOPT_OUT", "from_env2")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("from_flag/table1.csv").exists());
    assert!(!dir.path().join("from_env2").exists());
}

#[test]
fn failing_stage_is_recorded_and_partial_outputs_kept() {
    let dir = tempfile::tempdir().unwrap();
    let res = dir.path().join("res");
    // a directory where a CSV should go makes the stage fail part-way
    std::fs::create_dir_all(res.join("heatmap.csv")).unwrap();
    let out = run(&["cycle", "--out", "res"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("cycle"));
    let m = RunManifest::read(&res).unwrap();
    assert_eq!(m.failed_stage.as_deref(), Some("cycle"));
    assert!(m.stages[0].error.is_some());
    assert!(m.file("udc.csv").is_some() && res.join("udc.csv").exists());
}

#[test]
fn cycle_and_machine_outputs_carry_their_headers() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run(&["cycle", "--out", "res"], dir.path()).status.success());
    assert!(run(&["solve-machine", "--out", "res2"], dir.path())
        .status
        .success());
    let r = dir.path().join("res");
    let r2 = dir.path().join("res2");
    assert_eq!(header(&r.join("udc.csv")), "t,v");
    assert_eq!(header(&r.join("trajectory.csv")), "t,omega_rpm,torque_nm");
    assert_eq!(header(&r.join("heatmap.csv")), "m_lo,m_hi,w_lo,w_hi,count");
    assert_eq!(
        header(&r.join("cycle_samples.csv")),
        "scenario,sample,t,v,crr,cd"
    );
    assert_eq!(
        header(&r2.join("dq_params.csv")),
        "p1,p2,p3,phi0,ld,lq,rst,npp,m,i_max,max_torque,cycle_efficiency"
    );
    assert_eq!(header(&r2.join("efficiency_map.csv")), "I,omega_rpm,eff");
    assert_eq!(header(&r2.join("current_trajectory.csv")), "t,I,omega_rpm");
    assert_eq!(header(&r2.join("nodes.csv")), "id,x,y,boundary_tag");
    assert_eq!(header(&r2.join("tris.csv")), "n1,n2,n3,region");
    let samples = std::fs::read_to_string(r.join("cycle_samples.csv")).unwrap();
    assert_eq!(samples.lines().count(), 1 + 3 * 5 * 16);
}

#[test]
fn manifest_snapshot_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("c.toml"),
        "[solver]\nmc_samples = 300\nlambda = 1.5\n[scenario]\nkind = \"A\"\n",
    )
    .unwrap();
    let first = run(
        &[
            "validate",
            "--config",
            "c.toml",
            "--out",
            "a",
            "--seed",
            "17",
            "--workers",
            "2",
        ],
        dir.path(),
    );
    assert!(
        first.status.success(),
        "{}",
        String::from_utf8_lossy(&first.stderr)
    );
    let m1 = RunManifest::read(&dir.path().join("a")).unwrap();
    let cfg = parse_str(&m1.config).unwrap();
    assert_eq!(cfg.solver.seed, 17);
    assert_eq!(cfg.solver.mc_samples, 300);

    std::fs::write(dir.path().join("snap.toml"), &m1.config).unwrap();
    let second = run(
        &[
            "validate",
            "--config",
            "snap.toml",
            "--out",
            "b",
            "--workers",
            "1",
        ],
        dir.path(),
    );
    assert!(second.status.success());
    let m2 = RunManifest::read(&dir.path().join("b")).unwrap();
    let sums = |m: &RunManifest| {
        m.files
            .iter()
            .map(|f| (f.path.clone(), f.sha256.clone()))
            .collect::<Vec<_>>()
    };
    assert_eq!(sums(&m1), sums(&m2));
    assert!(m1.file("validation.csv").is_some());
}

#[test]
fn optimize_writes_trace_and_optimum() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("c.toml"),
        "[scenario]\nkind = \"nominal\"\n",
    )
    .unwrap();
    let out = run(
        &["optimize", "--config", "c.toml", "--out", "res"],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let r = dir.path().join("res");
    assert_eq!(
        header(&r.join("sqp_trace_nominal.csv")),
        "iter,f,kkt,maxviol,step_norm"
    );
    let opt = std::fs::read_to_string(r.join("optimum_nominal.csv")).unwrap();
    let row: Vec<&str> = opt.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "nominal");
    assert_eq!(row[10], "converged");
    let area: f64 = row[4].parse().unwrap();
    assert!(area < 133.0);
}

#[test]
fn example_config_lists_the_defaults() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../config.example.toml");
    let cfg = pm_robopt::parse_config(&path).unwrap();
    assert_eq!(cfg, pm_robopt::RunConfig::default());
}
