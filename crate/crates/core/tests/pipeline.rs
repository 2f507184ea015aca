use std::path::Path;

use consensus_core::io;
use consensus_core::pipeline::{self, ErrorMode, RunConfig};
use consensus_core::render::parse_svg_lattice;
use consensus_core::{Error, Signal, SyntheticSpec};

fn small_run(dir: &Path, spec: &SyntheticSpec) -> RunConfig {
    let input = pipeline::simulate_to(spec, &dir.join("sim")).unwrap();
    RunConfig {
        inputs: vec![input],
        out: dir.join("out"),
        iterations: 300,
        burn_in: 150,
        scale_levels: 8,
        time_points: 60,
        error_mode: ErrorMode::Small,
        ..Default::default()
    }
}

#[test]
fn records_round_trip_through_csv() {
    let spec = SyntheticSpec { records: 3, cores: 2, dating_sd_young: 10.0, dating_sd_old: 40.0, ..Default::default() };
    let dir = tempfile::tempdir().unwrap();
    let input = pipeline::simulate_to(&spec, dir.path()).unwrap();
    let records = io::read_records(&input).unwrap();
    assert_eq!(records.len(), 3);
    let mut buf = Vec::new();
    io::write_records(&mut buf, &records).unwrap();
    assert_eq!(io::parse_records(buf.as_slice()).unwrap(), records);
    for name in ["truth.csv", "spec.json"] {
        assert!(dir.path().join(name).exists());
    }
}

#[test]
fn parse_errors_carry_line_numbers() {
    let text = "record_id,age_bp,value\nA,10,1.0\nA,20,oops\n";
    match io::parse_records(text.as_bytes()) {
        Err(Error::Parse { line, message }) => {
            assert_eq!(line, 3);
            assert!(message.contains("value"), "{message}");
        }
        other => panic!("expected a parse error, got {other:?}"),
    }
    assert!(matches!(io::parse_records("record_id,value\nA,1\n".as_bytes()), Err(Error::Parse { line: 1, .. })));
}

#[test]
fn outputs_agree_with_the_returned_map() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_run(dir.path(), &SyntheticSpec { samples_per_record: 25, ..Default::default() });
    let report = pipeline::analyze(&config).unwrap();

    let rows = io::read_map(std::fs::File::open(config.out.join("map.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), report.map.levels() * report.map.points());
    let points = report.map.points();
    for (r, (age, lambda, flag)) in rows.iter().enumerate() {
        let (level, col) = (r / points, points - 1 - r % points);
        assert_eq!(*flag, report.map.flag(level, col));
        assert!((lambda - report.map.scales.lambdas()[level]).abs() <= 1e-12 * lambda);
        assert!((age + report.map.times.points()[col]).abs() < 1e-9);
    }

    let svg = std::fs::read_to_string(config.out.join("map.svg")).unwrap();
    assert_eq!(parse_svg_lattice(&svg).unwrap(), report.map.flags);

    let consensus = std::fs::read_to_string(config.out.join("consensus.csv")).unwrap();
    assert_eq!(consensus.lines().count(), 1 + report.chain.joint().len());
    for line in consensus.lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert!(v[2] <= v[1] && v[1] <= v[3], "{line}");
    }
    let contributions = std::fs::read_to_string(config.out.join("contributions.csv")).unwrap();
    let markers = config.marker_levels(config.scale_levels).len();
    assert_eq!(contributions.lines().count(), 1 + markers * 3 * config.time_points);
}

#[test]
fn pooled_run_skips_contributions() {
    let dir = tempfile::tempdir().unwrap();
    let config = RunConfig {
        extended: true,
        ..small_run(dir.path(), &SyntheticSpec { samples_per_record: 15, ..Default::default() })
    };
    let report = pipeline::analyze(&config).unwrap();
    assert!(config.out.join("map.csv").exists());
    assert!(!config.out.join("contributions.csv").exists());
    assert!(report.chain.samples()[0].contributions.is_none());
}

#[test]
fn manifest_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec {
        signal: Signal::Sine { amplitude: 1.0, period: 5000.0, phase: 0.0 },
        samples_per_record: 20,
        records: 2,
        dating_sd_young: 15.0,
        dating_sd_old: 60.0,
        ..Default::default()
    };
    let config = RunConfig { random_dates: true, seed: 4, ..small_run(dir.path(), &spec) };
    pipeline::analyze(&config).unwrap();
    let first = std::fs::read(config.out.join("map.csv")).unwrap();
    let mut again = pipeline::load_manifest(&config.out.join("manifest.json")).unwrap();
    assert_eq!(again, config);
    again.out = dir.path().join("again");
    pipeline::analyze(&again).unwrap();
    assert_eq!(std::fs::read(again.out.join("map.csv")).unwrap(), first);
}

#[test]
fn configuration_errors_are_reported_as_such() {
    let dir = tempfile::tempdir().unwrap();
    let base = small_run(dir.path(), &SyntheticSpec { samples_per_record: 12, ..Default::default() });

    let no_sd = RunConfig { random_dates: true, ..base.clone() };
    let err = pipeline::analyze(&no_sd).unwrap_err();
    assert!(err.is_config() && err.to_string().contains("age_sd"), "{err}");

    for bad in [
        RunConfig { burn_in: 300, ..base.clone() },
        RunConfig { alpha: 1.0, ..base.clone() },
        RunConfig { error_mode: ErrorMode::Custom, ..base.clone() },
        RunConfig { inputs: vec![], ..base.clone() },
    ] {
        let err = pipeline::analyze(&bad).unwrap_err();
        assert!(err.is_config(), "{err}");
        assert_eq!(err.exit_code(), 2);
    }
    let mut unknown = base.clone();
    unknown.sigma_bar.insert("nope".into(), 0.3);
    assert!(pipeline::analyze(&unknown).unwrap_err().is_config());
}

#[test]
fn bounds_are_reported_per_record() {
    let dir = tempfile::tempdir().unwrap();
    let spec =
        SyntheticSpec { signal: Signal::Line { intercept: 0.0, slope: 0.0 }, noise_sd: 0.5, ..Default::default() };
    let input = pipeline::simulate_to(&spec, dir.path()).unwrap();
    let records = pipeline::load_inputs(&[input]).unwrap();
    let bounds = pipeline::error_bounds(&records).unwrap();
    assert_eq!(bounds.len(), 3);
    for (_, j, b) in bounds {
        assert_eq!(j, 60);
        // upper bound on the noise level, but not wildly so
        assert!(b > 0.4 && b < 0.8, "{b}");
    }
}

#[test]
fn full_size_map_renders_quickly() {
    use consensus_core::render::render_map_svg;
    use consensus_core::{CredibilityMap, Flag, ScaleGrid, TimeGrid};
    // alternating flags give the largest number of runs
    let flags: Vec<Vec<Flag>> = (0..200)
        .map(|l| (0..2000).map(|j| Flag::from_code(((l + j) % 3) as i8 - 1).unwrap()).collect())
        .collect();
    let map = CredibilityMap {
        scales: ScaleGrid::log_spaced(1e2, 1e9, 200).unwrap(),
        times: TimeGrid::uniform(-11_000.0, 0.0, 2000).unwrap(),
        alpha: 0.8,
        flags: flags.clone(),
        mean_smooth: vec![vec![0.0; 2000]; 200],
        mean_derivative: vec![vec![0.0; 2000]; 200],
        clamped_points: 0,
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("map.svg");
    let start = std::time::Instant::now();
    render_map_svg(&map, &[50, 100, 150], &path).unwrap();
    assert!(start.elapsed().as_secs_f64() < 5.0);
    assert_eq!(parse_svg_lattice(&std::fs::read_to_string(&path).unwrap()).unwrap(), flags);
}
