use std::path::PathBuf;
use std::process::Command;

fn data(path: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(path)
        .to_string_lossy()
        .into_owned()
}

fn run(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_bandshare")).args(args).output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

#[test]
fn missing_network_is_a_usage_error() {
    let (code, _, _) = run(&["pf-solve", "--state", "1,1"]);
    assert_eq!(code, 1);
}

#[test]
fn unknown_file_is_an_input_error() {
    let (code, _, _) = run(&["pf-solve", "--network", "/nonexistent.json", "--state", "1"]);
    assert_eq!(code, 1);
}

#[test]
fn pf_solve_prints_csv() {
    let net = data("networks/single_link.json");
    let (code, out, _) = run(&["pf-solve", "--network", &net, "--state", "2,1", "--no-header"]);
    assert_eq!(code, 0);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "route,n,lambda");
    assert_eq!(lines[1], "r0,2,0.666666667");
    assert_eq!(lines[2], "r1,1,0.333333333");
}

#[test]
fn header_is_present_by_default() {
    let net = data("networks/single_link.json");
    let (code, out, _) = run(&["pf-solve", "--network", &net, "--state", "2,1"]);
    assert_eq!(code, 0);
    assert!(out.starts_with("# bandshare pf-solve"));
}

#[test]
fn divergent_stationary_exits_two() {
    let net = data("networks/single_route.json");
    let (code, _, err) =
        run(&["stationary", "--network", &net, "--rho", "1.1", "--max-shell", "50"]);
    assert_eq!(code, 2);
    assert!(err.contains("divergence suspected"), "{err}");
}

#[test]
fn simulate_is_deterministic_without_header() {
    let net = data("networks/single_route.json");
    let traffic = data("traffic/geom_rho05.json");
    let args = [
        "simulate", "--network", &net, "--traffic", &traffic, "--end-time", "2000",
        "--seed", "5", "--no-header", "--replicas", "2",
    ];
    let (c1, o1, _) = run(&args);
    let (c2, o2, _) = run(&args);
    assert_eq!((c1, c2), (0, 0));
    assert_eq!(o1, o2);
    assert!(o1.starts_with("n,probability"));
}

#[test]
fn every_shipped_data_file_loads() {
    for entry in std::fs::read_dir(data("networks")).unwrap() {
        let path = entry.unwrap().path();
        let region = bandshare::cli::load_network(&path).unwrap();
        let back = region.to_network();
        let text = serde_json::to_string(&back).unwrap();
        let again: bandshare::NetworkFile = serde_json::from_str(&text).unwrap();
        assert_eq!(bandshare::CapacityRegion::from_network(&again).unwrap(), region);
    }
    for entry in std::fs::read_dir(data("traffic")).unwrap() {
        let path = entry.unwrap().path();
        let traffic = bandshare::cli::load_traffic(&path).unwrap();
        let text = serde_json::to_string(&traffic).unwrap();
        let again: bandshare::TrafficSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(again, traffic);
    }
}

#[test]
fn output_file_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("pf.csv");
    let net = data("networks/line.json");
    let (code, _, _) = run(&[
        "pf-solve", "--network", &net, "--state", "1,1,1", "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let text = std::fs::read_to_string(out).unwrap();
    assert!(text.contains("route,n,lambda"));
}
