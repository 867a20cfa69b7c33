use std::fs;
use std::process::{Command, Output};

fn pssmp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pssmp")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn rho_formula_values() {
    let o = pssmp(&["rho", "formula", "--alpha", "1", "--beta", "0.5", "--q", "0.25"]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("0.84404"), "{}", stdout(&o));
    let o = pssmp(&["rho", "formula", "--alpha", "1", "--beta", "0.5", "--q", "1"]);
    assert_eq!(stdout(&o).trim(), "0.5");
}

#[test]
fn scaling_check_passes_on_any_estimate() {
    let o = pssmp(&["check", "scaling", "--b", "-1", "--sigma2", "1", "--gamma", "1", "--c", "3.7", "--s", "0.4", "--n", "500"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 4);
    assert!(text.lines().skip(1).all(|l| l.contains(",true,")));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(pssmp(&["bogus"]).status.code(), Some(2));
    assert_eq!(pssmp(&["rho", "formula", "--alpha", "1"]).status.code(), Some(2));
    assert_eq!(pssmp(&["check", "pareto", "--gamma", "1", "--f", "{ kind = \"nope\" }"]).status.code(), Some(2));
}

#[test]
fn run_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("empty.toml");
    fs::write(&cfg, "seed = 3\n").unwrap();
    let out = dir.path().join("out");
    let o = pssmp(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(fs::read_to_string(out.join("report.csv")).unwrap().lines().count(), 1);

    fs::write(&cfg, "seed = 3\n[[checks]]\ncheck = \"rho\"\nalpah = 1\n").unwrap();
    let o = pssmp(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("alpah"));
}

#[test]
fn simulated_paths_are_csv() {
    let o = pssmp(&["simulate-pssmp", "--b", "1", "--horizon", "0.01", "--linear-clock"]);
    let text = stdout(&o);
    assert!(text.starts_with("t,X\n"));
    // Pure drift: X_t = 1 + t exactly under the linear clock.
    for line in text.lines().skip(1).filter(|l| !l.starts_with("inf")) {
        let (t, x) = line.split_once(',').unwrap();
        let (t, x): (f64, f64) = (t.parse().unwrap(), x.parse().unwrap());
        assert!((x - (1.0 + t)).abs() < 1e-12);
    }
    let o = pssmp(&["sample-I", "--b", "-1", "--sigma2", "1", "--n", "5", "--seed", "9"]);
    assert_eq!(stdout(&o).lines().count(), 6);
    assert_eq!(stdout(&o), stdout(&pssmp(&["sample-I", "--b", "-1", "--sigma2", "1", "--n", "5", "--seed", "9"])));
}

#[test]
fn extension_specs_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let biv = dir.path().join("biv.toml");
    fs::write(
        &biv,
        "d_z = 0.5\nd_h = 0.5\nlambda = 1.0\n[jumps]\ncoupling = \"independent\"\n\
         z = { name = \"exponential\", params = { rate = 1.0 } }\n\
         h = { name = \"exponential\", params = { rate = 2.0 } }\n",
    )
    .unwrap();
    let o = pssmp(&["ext", "lm-check", biv.to_str().unwrap()]);
    assert!(stdout(&o).lines().nth(1).unwrap().starts_with("Finite,"));
    let o = pssmp(&["ext", "rh", biv.to_str().unwrap(), "--horizon", "0.5", "--step", "0.1"]);
    assert!(stdout(&o).starts_with("t,R,H\n"));

    let multi = dir.path().join("multi.toml");
    fs::write(&multi, "alpha = [1.0, 2.0]\n[[coords]]\nb = 0.5\n[[coords]]\nb = -0.5\n").unwrap();
    let o = pssmp(&["ext", "mssmp", multi.to_str().unwrap(), "--x", "1,1", "--horizon", "0.01"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}
