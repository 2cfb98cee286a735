use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const GAME: &str = "b = 3\nc = 1\neps11 = 0.2\neps12 = 0.1\neps21 = 0.3\neps22 = 0.4\n";
const QUADRATIC: &str =
    "b = 3\nc = 1\nr_A = -0.5, 1, -1\nr_B = -0.5, 1, -1\ngamma_A = 1\ngamma_B = 1\n";

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn coopdyn(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_coopdyn"));
    cmd.args(args).env_remove("COOPDYN_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn run(sub: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        sub,
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    coopdyn(&args, &[])
}

fn lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(str::to_string)
        .collect()
}

#[test]
fn game_from_fixed_point_writes_two_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "g.conf",
        &format!("{GAME}p0 = 1\nq0 = 1\nk_max = 50\n"),
    );
    let out = tmp.path().join("out");
    let res = run("game", &cfg, &out, &[]);
    assert_eq!(
        res.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let rows = lines(&out.join("trajectory.csv"));
    assert_eq!(rows[0], "k,p,q,E_A,E_B,E_avg");
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("0,1,1,2,2,2"));
    assert!(rows[2].starts_with("1,1,1,"));
    let manifest = lines(&out.join("manifest.txt"));
    assert_eq!(manifest, vec!["file,rows", "trajectory.csv,2"]);
}

#[test]
fn coop_with_zero_horizon_writes_one_snapshot() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.conf",
        &format!("{QUADRATIC}t_end = 0\nn_cells = 50\n"),
    );
    let out = tmp.path().join("out");
    let res = run("coop", &cfg, &out, &[]);
    assert_eq!(
        res.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let snaps = lines(&out.join("snapshots.csv"));
    assert_eq!(snaps[0], "t,p,n_A,n_B");
    assert_eq!(snaps.len(), 51);
    assert!(snaps[1..].iter().all(|r| r.starts_with("0,")));
    assert_eq!(
        lines(&out.join("series.csv"))[0],
        "t,rho_A,rho_B,ptilde_A,ptilde_B,E_A,E_B"
    );
    let fate = fs::read_to_string(out.join("fate.txt")).unwrap();
    assert!(fate.contains("A.verdict = BlowUp"));
}

#[test]
fn pde3d_with_forced_unstable_dt_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "p.conf",
        "nx = 10\nny = 10\nntheta = 5\ninitial_radius = 0.2\nt_end = 10\ndt = 100\n",
    );
    let res = run("pde3d", &cfg, &tmp.path().join("out"), &[]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("CflViolation"));
}

#[test]
fn pde3d_writes_declared_schemas() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "p.conf",
        "nx = 10\nny = 10\nntheta = 5\ninitial_radius = 0.2\nt_end = 2\nsnapshot_every = 1\n",
    );
    let out = tmp.path().join("out");
    let res = run("pde3d", &cfg, &out, &[]);
    assert_eq!(
        res.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let summary = lines(&out.join("summary.csv"));
    assert_eq!(
        summary[0],
        "t,rho,mean_x,mean_y,mean_theta,var_x,var_y,var_theta,n_modes"
    );
    assert_eq!(summary.len(), 4);
    assert_eq!(lines(&out.join("snapshots.csv"))[0], "t,x,y,theta,n");
}

#[test]
fn bad_config_exits_1_and_lists_every_problem() {
    let tmp = tempfile::tempdir().unwrap();
    let text = "b = 1\nc = 3\neps11 = 1.5\neps12 = 0.1\neps21 = 0.3\neps22 = 0.4\np0 = 0.5\nq0 = 0.5\nk_max = 1\nspeed = 4\n";
    let cfg = write_config(tmp.path(), "bad.conf", text);
    let res = run("game", &cfg, &tmp.path().join("out"), &[]);
    assert_eq!(res.status.code(), Some(1));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("BadValue: 'b' on line 1"), "{err}");
    assert!(err.contains("BadValue: 'eps11' on line 3"), "{err}");
    assert!(err.contains("UnknownKey: 'speed' on line 10"), "{err}");
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn missing_config_file_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let res = run(
        "game",
        &tmp.path().join("nope.conf"),
        &tmp.path().join("out"),
        &[],
    );
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn classify_prints_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "g.conf",
        &format!("model = game\n{GAME}p0 = 0.5\nq0 = 0.5\nk_max = 1\n"),
    );
    let res = run("classify", &cfg, &tmp.path().join("out"), &[]);
    assert_eq!(res.status.code(), Some(0));
    let text = String::from_utf8_lossy(&res.stdout);
    assert!(text.contains("regime = FullCoopStable"));
    assert!(text.contains("fixed_point.0.lambda2 = 1.0372281323269"));

    let cfg = write_config(
        tmp.path(),
        "c.conf",
        &format!("model = coop\n{QUADRATIC}t_end = 1\n"),
    );
    let res = run("classify", &cfg, &tmp.path().join("out"), &[]);
    assert_eq!(res.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&res.stdout).contains("A.verdict = BlowUp"));
    assert!(!tmp.path().join("out").exists());

    let cfg = write_config(tmp.path(), "n.conf", &format!("{QUADRATIC}t_end = 1\n"));
    assert_eq!(
        run("classify", &cfg, &tmp.path().join("out"), &[])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn sweep_is_reproducible_and_thread_independent() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "s.conf",
        &format!("{GAME}n_points = 64\nk_max = 100000\n"),
    );
    let sweep = |dir: &str, seed: &str, threads: &str| {
        let out = tmp.path().join(dir);
        let res = coopdyn(
            &[
                "game-sweep",
                "--config",
                cfg.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
                "--seed",
                seed,
            ],
            &[("COOPDYN_THREADS", threads)],
        );
        assert_eq!(res.status.code(), Some(0));
        fs::read(out.join("sweep.csv")).unwrap()
    };
    let a = sweep("a", "11", "1");
    let b = sweep("b", "11", "4");
    let c = sweep("c", "12", "4");
    assert_eq!(a, b);
    assert_ne!(a, c);
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().next(), Some("p0,q0,p_star,q_star,converged"));
    assert_eq!(text.lines().count(), 65);
}
