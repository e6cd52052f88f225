use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL_BS: &str = "setting = \"bs\"
seed = 11

[simulation]
n_particles = 400
n_steps = 20
n_landmarks = 20
";

fn lsv(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lsv"))
        .args(args)
        .current_dir(dir)
        .env_remove("LSV_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn header(text: &str) -> String {
    text.lines()
        .take_while(|l| l.starts_with('#'))
        .map(|l| l.strip_prefix("# ").unwrap_or(&l[1..]))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn config_errors_exit_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_eq!(lsv(&["simulate"], dir).status.code(), Some(2));
    assert_eq!(lsv(&["simulate", "--setting", "bs", "--lambda", "-1"], dir).status.code(), Some(2));
    assert_eq!(lsv(&["simulate", "--setting", "sabr"], dir).status.code(), Some(2));
    fs::write(dir.join("bad.toml"), "setting = \"bs\"\nn_particles = 10\n").unwrap();
    let out = lsv(&["simulate", "--config", "bad.toml"], dir);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
    fs::write(dir.join("no_setting.toml"), "seed = 1\n").unwrap();
    assert_eq!(lsv(&["surface", "--config", "no_setting.toml"], dir).status.code(), Some(2));
}

#[test]
fn simulate_reruns_bit_exactly_from_the_artifact_header() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("run.toml"), SMALL_BS).unwrap();
    let out = lsv(&["simulate", "--config", "run.toml", "--seed", "5", "--out", "a"], dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let first = fs::read_to_string(dir.join("a/terminal.csv")).unwrap();
    assert!(first.lines().any(|l| l == "# seed = 5"));
    assert_eq!(first.lines().find(|l| !l.starts_with('#')), Some("n,x,y"));
    assert_eq!(first.lines().filter(|l| !l.starts_with('#')).count(), 401);
    for name in ["diagnostics.csv", "smile.csv", "smile.svg"] {
        assert!(dir.join("a").join(name).exists(), "{name} missing");
    }

    fs::write(dir.join("replay.toml"), header(&first).replace("out = \"a\"", "out = \"b\"")).unwrap();
    let out = lsv(&["--threads", "1", "simulate", "--config", "replay.toml"], dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let second = fs::read_to_string(dir.join("b/terminal.csv")).unwrap();
    assert_eq!(first.replace("out = \"a\"", "out = \"b\""), second);
    assert_eq!(
        fs::read(dir.join("a/smile.csv")).unwrap().len(),
        fs::read(dir.join("b/smile.csv")).unwrap().len()
    );
}

#[test]
fn surface_csv_has_the_documented_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("run.toml"), SMALL_BS).unwrap();
    let out = lsv(&["surface", "--config", "run.toml", "--out", "s"], dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.join("s/surface.csv")).unwrap();
    let mut rows = text.lines().filter(|l| !l.starts_with('#'));
    assert_eq!(rows.next(), Some("T,K,call,iv,p_below"));
    let first: Vec<f64> = rows.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(first.len(), 5);
    assert!(header(&text).contains("setting = \"bs\""));
    assert!(dir.join("s/dupire.csv").exists());
}

#[test]
fn path_dump_carries_header_then_raw_floats() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("run.toml"), format!("{SMALL_BS}\n[output]\nrecord_paths = true\n")).unwrap();
    let out = lsv(&["simulate", "--config", "run.toml", "--out", "p"], dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let bytes = fs::read(dir.join("p/paths.bin")).unwrap();
    let marker = b"# end of header\n";
    let start = bytes.windows(marker.len()).position(|w| w == marker).unwrap() + marker.len();
    let data = &bytes[start..];
    assert_eq!(data.len(), 400 * 21 * 8);
    let x0 = f64::from_le_bytes(data[..8].try_into().unwrap());
    assert_eq!(x0, 1.0);
    let text = String::from_utf8_lossy(&bytes[..start]);
    assert!(text.contains("# rows = 400, columns = 21"));
}

#[test]
fn sweep_writes_csv_and_plot() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = format!("{SMALL_BS}\n[sweep]\nkind = \"lambda\"\ngrid = [1e-1, 1e-3]\nreps = 2\nn_steps = 10\n");
    fs::write(dir.join("run.toml"), cfg).unwrap();
    let out = lsv(&["sweep", "--config", "run.toml", "--out", "w"], dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.join("w/sweep_lambda.csv")).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "param,value,mean_err,std_err,reps,seed_base");
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("lambda,") && rows[1].ends_with(",2,11"));
    let svg = fs::read_to_string(dir.join("w/sweep_lambda.svg")).unwrap();
    assert!(svg.contains("<svg") && svg.contains("# seed = 11"));
}

#[test]
fn smoke_check_runs_and_unknown_criteria_fail() {
    let tmp = tempfile::tempdir().unwrap();
    let out = lsv(&["check", "--smoke", "--only", "7,9"], tmp.path());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().count(), 2, "{stdout}");
    assert!(stdout.lines().all(|l| l.starts_with("[PASS]") || l.starts_with("[FAIL]")));
    let out = lsv(&["check", "--smoke", "--only", "42"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}
