use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn airisk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_airisk")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Simulated data for `cities` of the preset, with the listed days blanked.
fn simulated_csv(dir: &Path, name: &str, pairs: usize, cities: &[&str], blank: &[u32]) -> PathBuf {
    let o = airisk(&["simulate", "--preset", "paper", "--pairs", &pairs.to_string(), "--seed", "7"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let mut out = String::from("day,city,pm25\n");
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if !cities.contains(&f[1]) {
            continue;
        }
        let day: u32 = f[0].parse().unwrap();
        let v = if blank.contains(&day) { "NA" } else { f[2] };
        out.push_str(&format!("{},{},{}\n", f[0], f[1], v));
    }
    let path = dir.join(name);
    std::fs::write(&path, out).unwrap();
    path
}

/// Pairs of consecutive observed days per city, counted from the CSV text.
fn present_pairs(path: &Path) -> BTreeMap<String, usize> {
    let mut obs: BTreeMap<String, BTreeMap<u32, bool>> = BTreeMap::new();
    for line in std::fs::read_to_string(path).unwrap().lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        obs.entry(f[1].to_string()).or_default().insert(f[0].parse().unwrap(), f[2] != "NA");
    }
    obs.into_iter()
        .map(|(c, days)| {
            let n = days.iter().filter(|(d, ok)| **ok && days.get(&(**d + 1)) == Some(&true)).count();
            (c, n)
        })
        .collect()
}

fn data_rows(text: &str) -> Vec<Vec<String>> {
    text.lines().filter(|l| !l.starts_with('#')).skip(1).map(|l| l.split(',').map(String::from).collect()).collect()
}

#[test]
fn fits_three_cities_with_gaps() {
    let dir = tempfile::tempdir().unwrap();
    let csv = simulated_csv(dir.path(), "three.csv", 420, &["Beijing", "Tianjin", "Hengshui"], &[361, 362]);
    let out = dir.path().join("model.toml");
    let o = airisk(&["fit", "--data", path_str(&csv), "--out", path_str(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    let pairs = present_pairs(&csv);
    assert_eq!(pairs.len(), 3);
    for (city, n) in &pairs {
        assert!(text.contains(&format!("# marginal {city}: n = {n},")), "{city} {n}\n{text}");
    }
    assert!(text.contains("family = \"t\""));
    // the fitted model drives the risk commands
    let o = airisk(&["car", "--model", path_str(&out), "--alpha", "0.05", "--budget", "2000"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(data_rows(&String::from_utf8(o.stdout).unwrap()).len(), 1);
}

#[test]
fn one_city_fit_reports_identity_copula() {
    let dir = tempfile::tempdir().unwrap();
    let csv = simulated_csv(dir.path(), "one.csv", 300, &["Tianjin"], &[]);
    let o = airisk(&["fit", "--data", path_str(&csv)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("family = \"normal\""), "{text}");
    assert!(text.contains("sigma = [[1.0]]"), "{text}");
    assert!(stderr(&o).contains("warning"));
}

#[test]
fn malformed_rows_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bad.csv");
    std::fs::write(&csv, "day,city,pm25\n1,a,10\n2,a,11,12\n").unwrap();
    let out = dir.path().join("model.toml");
    let o = airisk(&["fit", "--data", path_str(&csv), "--out", path_str(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("bad.csv:3") && err.contains("found 4"), "{err}");
    assert!(!out.exists());

    std::fs::write(&csv, "day,city,pm25\n1,a,10\n2,a,0\n").unwrap();
    let o = airisk(&["fit", "--data", path_str(&csv)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.csv:3:3"), "{}", stderr(&o));
}

#[test]
fn empty_input_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("empty.csv");
    std::fs::write(&csv, "").unwrap();
    let out = dir.path().join("model.toml");
    let o = airisk(&["fit", "--data", path_str(&csv), "--out", path_str(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn usage_errors_exit_one() {
    for args in [
        vec!["car", "--preset", "paper", "--alpha", "0.7"],
        vec!["car", "--preset", "paper", "--alpha", "0.01,0.05"],
        vec!["car", "--preset", "nowhere"],
        vec!["car", "--preset", "paper", "--model", "m.toml"],
        vec!["car"],
        vec!["car", "--preset", "paper", "--estimator", "magic"],
        vec!["curve", "--preset", "paper", "--tau-grid", "700:100:20"],
        vec!["frobnicate"],
    ] {
        let o = airisk(&args);
        assert_eq!(o.status.code(), Some(1), "{args:?}: {}", stderr(&o));
        assert!(!stderr(&o).is_empty());
    }
    let o = airisk(&["car", "--model", "/nonexistent/m.toml"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn curve_is_monotone_over_the_default_grid() {
    let o = airisk(&["curve", "--preset", "paper", "--tau-grid", "100:700:20", "--budget", "5000"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("# seed: 1") && text.contains("# model_sha256: "));
    let rows = data_rows(&text);
    assert_eq!(rows.len(), 31);
    let taus: Vec<f64> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(taus[0], 100.0);
    assert_eq!(taus[30], 700.0);
    let ep: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(ep.windows(2).all(|w| w[0] >= w[1]), "{ep:?}");
}

#[test]
fn report_carries_its_configuration() {
    let o = airisk(&["car", "--preset", "paper", "--estimator", "is", "--alpha", "0.05,0.01", "--budget", "5000", "--seed", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    for key in ["# estimator: is", "# seed: 4", "# budget: 5000", "# alpha: 0.05,0.01", "# model_sha256: ", "# config_sha256: "] {
        assert!(text.contains(key), "{key}\n{text}");
    }
    assert!(text.contains("alpha,car,ccar,ccar_lower,ccar_upper,ccar_ci_pct,ep_at_car,vr,iterations,empty_tail"));
    let rows = data_rows(&text);
    assert_eq!(rows.len(), 2);
    for r in &rows {
        let (car, ccar): (f64, f64) = (r[1].parse().unwrap(), r[2].parse().unwrap());
        assert!(ccar >= car);
    }
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let runs: [&[&str]; 3] = [
        &["car", "--preset", "paper", "--alpha", "0.05,0.01", "--budget", "5000", "--seed", "3"],
        &["curve", "--preset", "paper", "--budget", "4000", "--seed", "3"],
        &["simulate", "--preset", "paper", "--pairs", "800", "--seed", "3"],
    ];
    for (k, args) in runs.iter().enumerate() {
        let mut outputs = Vec::new();
        for threads in ["1", "3", "1"] {
            let out = dir.path().join(format!("run{k}_{threads}_{}.csv", outputs.len()));
            let mut full: Vec<&str> = vec!["--threads", threads];
            full.extend_from_slice(args);
            full.extend_from_slice(&["--out", path_str(&out)]);
            let o = airisk(&full);
            assert!(o.status.success(), "{}", stderr(&o));
            outputs.push(std::fs::read(&out).unwrap());
        }
        assert!(outputs.windows(2).all(|w| w[0] == w[1]), "{args:?}");
    }
}
