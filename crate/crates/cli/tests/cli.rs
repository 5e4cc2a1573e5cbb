use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_itrdma"))
}

fn example_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/example.toml")
}

fn run(args: &[&str], out: &Path) -> Output {
    let o = bin().args(args).arg("--out-dir").arg(out).output().unwrap();
    if !o.status.success() {
        eprintln!("{}", String::from_utf8_lossy(&o.stderr));
    }
    o
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn csv_body(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).collect()
}

#[test]
fn version_and_defaults() {
    let o = bin().arg("--version").output().unwrap();
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("cir format CIR1 version 1"));
    assert!(text.contains("precoder format PRC1 version 1"));
    let o = bin().arg("--print-defaults").output().unwrap();
    let defaults = String::from_utf8(o.stdout).unwrap();
    let t: toml::Table = toml::from_str(&defaults).unwrap();
    for section in ["channel", "precoder", "link", "experiments", "run"] {
        assert!(t.contains_key(section), "{section}");
    }
}

#[test]
fn gen_channel_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let o = run(&["gen-channel", "--seed", "42", "-s", "channel.n_taps=64"], d);
        assert!(o.status.success());
        assert!(String::from_utf8_lossy(&o.stdout).starts_with("config_hash: "));
    }
    let fa = std::fs::read(a.join("channel.cir")).unwrap();
    assert_eq!(fa, std::fs::read(b.join("channel.cir")).unwrap());
    assert_eq!(&fa[..4], b"CIR1");
    assert_eq!(fa.len(), 36 + 16 * 2 * 8 * 64);
}

#[test]
fn zero_iteration_precoder_evaluates_like_tr() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let cfg = example_config();
    let cfg = cfg.to_str().unwrap();
    assert!(run(&["gen-channel", "-c", cfg], p).status.success());
    let chan = p.join("channel.cir");
    let chan = chan.to_str().unwrap();
    let mut reports = Vec::new();
    for (sub, kind) in [("itr", "precoder.n_max=0"), ("tr", "precoder.kind=tr")] {
        let d = p.join(sub);
        assert!(run(&["precode", "-c", cfg, "-s", kind, "--channel", chan], &d).status.success());
        let prc = d.join("precoder.prc");
        let o = run(
            &["evaluate", "-c", cfg, "--channel", chan, "--precoder", prc.to_str().unwrap()],
            &d,
        );
        assert!(o.status.success());
        let csv = std::fs::read_to_string(d.join("link_report.csv")).unwrap();
        let sir: Vec<String> = csv
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(2).unwrap().to_string())
            .collect();
        reports.push(sir);
    }
    assert_eq!(reports[0], reports[1]);
    let header = std::fs::read_to_string(p.join("tr/link_report.csv")).unwrap();
    assert!(header.starts_with("scenario_id,user,sir_db,sinr_db,sigma,ber,iterations,displacement_m,speed_mps\n"));
}

#[test]
fn precode_writes_traces_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let cfg = example_config();
    let cfg = cfg.to_str().unwrap();
    assert!(run(&["gen-channel", "-c", cfg, "-s", "run.file_format=json"], p).status.success());
    let chan = p.join("channel.json");
    assert!(run(&["precode", "-c", cfg, "--channel", chan.to_str().unwrap()], p).status.success());
    let trace = std::fs::read_to_string(p.join("trace_user0.csv")).unwrap();
    assert!(trace.starts_with("n,i_hat,tau_hat,re,im,max_abs_delta_after\n"));
    assert!(trace.lines().count() > 1);
    assert!(p.join("trace_user1.csv").exists());
    assert!(p.join("precoder.prc").exists());
}

#[test]
fn sweep_iterations_matches_golden_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = example_config();
    let o = run(&["sweep-iterations", "-c", cfg.to_str().unwrap()], dir.path());
    assert!(o.status.success());
    let got = std::fs::read_to_string(dir.path().join("fig3_sir_vs_iter.csv")).unwrap();
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/fig3_sir_vs_iter.csv");
    // regenerate with ITRDMA_BLESS=1 after an intended output change
    if std::env::var_os("ITRDMA_BLESS").is_some() {
        std::fs::write(&golden, &got).unwrap();
    }
    assert_eq!(got, std::fs::read_to_string(&golden).unwrap());
    let hash = String::from_utf8_lossy(&o.stdout).lines().next().unwrap().to_string();
    assert!(got.starts_with(&format!("# {hash}\n")));
    // one row per configured iteration count
    assert_eq!(csv_body(&got).len(), 1 + 5);
    let echo: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("fig3_sir_vs_iter.config.json")).unwrap()).unwrap();
    assert_eq!(format!("config_hash: {}", echo["config_hash"].as_str().unwrap()), hash);
}

#[test]
fn thread_count_does_not_change_sweeps() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = example_config();
    let cfg = cfg.to_str().unwrap();
    for sub in ["sweep-speed", "sweep-displacement", "table1", "profiles"] {
        let mut outputs = Vec::new();
        for threads in ["1", "3"] {
            let d = dir.path().join(format!("{sub}-{threads}"));
            let o = run(&[sub, "-c", cfg, "-s", &format!("run.threads={threads}")], &d);
            assert!(o.status.success(), "{sub}");
            let mut files: Vec<_> = std::fs::read_dir(&d).unwrap().map(|e| e.unwrap().path()).collect();
            files.sort();
            outputs.push(files.iter().map(|f| std::fs::read(f).unwrap()).collect::<Vec<_>>());
        }
        assert_eq!(outputs[0], outputs[1], "{sub}");
    }
    let table = std::fs::read_to_string(dir.path().join("table1-1/table1_speed.csv")).unwrap();
    assert!(table.contains("configured,0.03,0.001,1,30,108\n"));
    assert!(table.contains("configured,0.03,0.05,50,0.6,2.16\n"));
    assert!(table.contains("estimated,"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let o = run(&["gen-channel", "-s", "channel.bogus=1"], p);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error[config]"));
    let o = run(&["gen-channel", "-s", "channel.n_users=0"], p);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["precode", "--channel", "/nonexistent/channel.cir"], p);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).starts_with("error[missing_input]"));

    assert!(run(&["gen-channel", "-s", "channel.n_taps=16"], &p.join("a")).status.success());
    assert!(run(&["gen-channel", "-s", "channel.n_taps=16", "-s", "channel.n_antennas=3"], &p.join("b")).status.success());
    let a = p.join("a/channel.cir");
    let b = p.join("b/channel.cir");
    assert!(run(&["precode", "--channel", a.to_str().unwrap()], &p.join("a")).status.success());
    let o = run(
        &["evaluate", "--channel", b.to_str().unwrap(), "--precoder", p.join("a/precoder.prc").to_str().unwrap()],
        p,
    );
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).starts_with("error[dimension_mismatch]"));

    // zero out user 1 of a valid file
    let mut bytes = std::fs::read(&a).unwrap();
    let per_user = 8 * 16 * 16;
    let start = 36 + per_user;
    bytes[start..start + per_user].fill(0);
    let z = p.join("zero.cir");
    std::fs::write(&z, &bytes).unwrap();
    let o = run(&["precode", "--channel", z.to_str().unwrap()], p);
    assert_eq!(o.status.code(), Some(5));
    assert!(stderr(&o).starts_with("error[numeric]"));

    let o = run(&["precode", "--channel", example_config().to_str().unwrap()], p);
    assert_eq!(o.status.code(), Some(4));
    let o = bin().output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn inputs_are_not_modified() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert!(run(&["gen-channel", "-s", "channel.n_taps=16"], p).status.success());
    let chan = p.join("channel.cir");
    let before = std::fs::read(&chan).unwrap();
    let out = p.join("out");
    assert!(run(&["precode", "--channel", chan.to_str().unwrap()], &out).status.success());
    assert_eq!(std::fs::read(&chan).unwrap(), before);
    let first = std::fs::read(out.join("precoder.prc")).unwrap();
    assert!(run(&["precode", "--channel", chan.to_str().unwrap()], &out).status.success());
    assert_eq!(std::fs::read(out.join("precoder.prc")).unwrap(), first);
}
