mod common;

use std::sync::LazyLock;

use common::*;
use nccox::experiment::{parse_mc_csv, report_csv, run_mc_experiment, ExperimentSpec};
use nccox::estimators::MpleOptions;
use nccox::io::*;
use nccox::model::{BaselineModel, CovariateModel};
use nccox::sampler::simulate_dataset;
use nccox::Error;
use proptest::prelude::*;

const CONFIG: &str = r#"
baseline = "exponential"
covariate = "normal"
eta = [[5, 1.0]]
m = 2
theta = 0.0
"#;

static DATASET: LazyLock<String> = LazyLock::new(|| {
    let c = parse_config(CONFIG).unwrap();
    serialize_dataset(&simulate_dataset(&c, 6, 3).unwrap())
});

static MC_CSV: LazyLock<String> = LazyLock::new(|| {
    let spec = ExperimentSpec {
        config: parse_config(CONFIG).unwrap(),
        n: 40,
        replications: 3,
        seed: 5,
        grid: vec![(0.5, 1.0)],
        allow_warnings: true,
        options: MpleOptions::default(),
    };
    report_csv(&run_mc_experiment(&spec).unwrap()).unwrap()
});

#[test]
fn config_examples() {
    let c = parse_config(CONFIG).unwrap();
    assert_eq!(c.baseline, BaselineModel::Exponential);
    assert_eq!(c.group_size.support(), &[5]);
    assert_eq!((c.m, c.theta), (2, 0.0));

    let c = parse_config(
        "baseline = \"weibull\"\nweibull_shape = 0.8\ncovariate = \"uniform\"\neta = [[3, 0.25], [6, 0.75]]\nm = 3\ntheta = -0.5\n",
    )
    .unwrap();
    assert_eq!(c.baseline, weibull(0.8));
    assert_eq!(c.covariate, CovariateModel::Uniform);
    assert_eq!(c.group_size.probabilities(), &[0.25, 0.75]);
    assert_eq!(c.theta, -0.5);
}

#[test]
fn config_errors_are_config_errors() {
    for text in [
        "",
        "baseline = \"exponential\"\ncovariate = \"normal\"\nm = 2\n",
        "baseline = \"exponential\"\ncovariate = \"normal\"\neta = [[5, 1.0]]\nm = 2\ntheta = nan\n",
        "baseline = \"weibull\"\nweibull_shape = -1.0\ncovariate = \"normal\"\neta = [[5, 1.0]]\nm = 2\n",
        "baseline = \"exponential\"\ncovariate = \"truncated_normal\"\neta = [[5, 1.0]]\nm = 2\n",
    ] {
        assert!(matches!(parse_config(text), Err(Error::Config(_))), "{text:?}");
    }
}

#[test]
fn fingerprints_follow_the_content() {
    let a = parse_config(CONFIG).unwrap();
    let b = parse_config(&CONFIG.replace("eta = [[5, 1.0]]", "eta = [[5, 1]]")).unwrap();
    assert_eq!(a.fingerprint(), b.fingerprint());
    let c = parse_config(&CONFIG.replace("theta = 0.0", "theta = 0.1")).unwrap();
    assert_ne!(a.fingerprint(), c.fingerprint());
}

#[test]
fn dataset_round_trips_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dataset.csv");
    write_text(&path, &DATASET).unwrap();
    let d = read_dataset(&path).unwrap();
    assert_eq!(serialize_dataset(&d), *DATASET);
    let missing = dir.path().join("nope.csv");
    assert!(matches!(read_dataset(&missing), Err(Error::Io { .. })));
    assert!(matches!(read_config(&missing), Err(Error::Io { .. })));
}

#[test]
fn dataset_values_survive_exactly() {
    let c = config(weibull(1.3), normal(), &[(4, 1.0)], 3, 0.7);
    let d = simulate_dataset(&c, 200, 31).unwrap();
    let back = parse_dataset(&serialize_dataset(&d)).unwrap();
    assert_eq!(back, d);
    assert_eq!(back.fingerprint(), c.fingerprint());
}

#[test]
fn mc_csv_round_trips() {
    let report = parse_mc_csv(&MC_CSV).unwrap();
    assert_eq!(report.rows.len(), 3);
    assert_eq!(report_csv(&report).unwrap(), *MC_CSV);
}

#[test]
fn format_float_round_trips() {
    for x in [0.1, -1.0 / 3.0, 1e-300, 6.02e23, f64::MAX, 0.0] {
        assert_eq!(format_float(x).parse::<f64>().unwrap(), x);
    }
}

/// Replace one byte of `text` with `b`, keeping valid UTF-8.
fn mutate(text: &str, at: usize, b: u8) -> String {
    let mut bytes = text.as_bytes().to_vec();
    if !bytes.is_empty() {
        let k = at % bytes.len();
        bytes[k] = b;
    }
    String::from_utf8_lossy(&bytes).into_owned()
}

fn mangle(text: &str, cut: usize) -> String {
    let mut cut = cut % (text.len() + 1);
    while !text.is_char_boundary(cut) {
        cut -= 1;
    }
    text[..cut].to_string()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn parsers_never_panic_on_noise(text in ".{0,300}") {
        let _ = parse_config(&text);
        let _ = parse_dataset(&text);
        let _ = parse_mc_csv(&text);
        let _ = parse_grid(&text);
    }

    #[test]
    fn parsers_never_panic_on_mutations(at in any::<usize>(), b in 0x20u8..0x7f, cut in any::<usize>()) {
        let _ = parse_config(&mutate(CONFIG, at, b));
        for text in [mutate(&DATASET, at, b), mangle(&DATASET, cut)] {
            // Whatever parses must survive a round trip.
            if let Ok(d) = parse_dataset(&text) {
                prop_assert_eq!(parse_dataset(&serialize_dataset(&d)).unwrap(), d);
            }
        }
        let _ = parse_mc_csv(&mutate(&MC_CSV, at, b));
        let _ = parse_mc_csv(&mangle(&MC_CSV, cut));
    }

    #[test]
    fn grids_round_trip(pairs in prop::collection::vec((0.0f64..1e6, 0.0f64..1e6), 0..8)) {
        let text: Vec<String> = pairs.iter().map(|(s, t)| format!("{s:?}:{t:?}")).collect();
        prop_assert_eq!(parse_grid(&text.join(",")).unwrap(), pairs);
    }
}
