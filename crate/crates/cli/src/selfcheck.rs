use voltavision::eval::{compute_metrics, ConfusionMatrix};
use voltavision::model::{decode_checkpoint, encode_checkpoint};
use voltavision::model::build_voltavision;
use voltavision::train::{gradient_check, GradProbe, NetworkScope};
use voltavision::Shape4;

pub struct CheckLine {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckLine {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

pub const PARAMETER_TABLE: [(usize, usize); 5] =
    [(3, 30_039), (5, 44_441), (10, 80_446), (36, 267_672), (100, 728_536)];

fn gradient_lines(seed: u64) -> Vec<CheckLine> {
    let small = Shape4::new(2, 4, 8, 8);
    let probes: [(&str, GradProbe, Shape4, f64); 7] = [
        (
            "conv",
            GradProbe::Conv { out_channels: 3, kernel: 3, stride: 1, padding: 2 },
            small,
            1e-4,
        ),
        ("batchnorm", GradProbe::BatchNorm, small, 1e-4),
        ("relu", GradProbe::Relu, small, 1e-6),
        ("maxpool", GradProbe::MaxPool { kernel: 3, stride: 3 }, small, 1e-4),
        ("linear", GradProbe::Linear { out_features: 5 }, small, 1e-6),
        (
            "network (head)",
            GradProbe::Network { num_classes: 3, scope: NetworkScope::Head },
            Shape4::new(2, 3, 32, 32),
            1e-4,
        ),
        (
            "network (all)",
            GradProbe::Network { num_classes: 3, scope: NetworkScope::All },
            Shape4::new(2, 3, 32, 32),
            1e-4,
        ),
    ];
    probes
        .into_iter()
        .map(|(name, probe, shape, tol)| {
            let name = format!("gradcheck {name}");
            match gradient_check(probe, shape, seed, 24) {
                Ok(r) => CheckLine::new(
                    name,
                    r.max_relative_error < tol,
                    format!(
                        "max relative error {:.3e} over {} coordinates (limit {tol:e})",
                        r.max_relative_error, r.coordinates
                    ),
                ),
                Err(e) => CheckLine::new(name, false, e.to_string()),
            }
        })
        .collect()
}

fn parameter_lines() -> Vec<CheckLine> {
    PARAMETER_TABLE
        .iter()
        .map(|&(c, expected)| {
            let name = format!("parameters C={c}");
            match build_voltavision(c, 0) {
                Ok(m) => {
                    let got = m.count_parameters().trainable;
                    let size = encode_checkpoint(&m).len();
                    CheckLine::new(
                        name,
                        got == expected,
                        format!("{got} trainable (expected {expected}), checkpoint {size} bytes"),
                    )
                }
                Err(e) => CheckLine::new(name, false, e.to_string()),
            }
        })
        .collect()
}

fn checkpoint_line() -> CheckLine {
    let name = "checkpoint round trip";
    let result = build_voltavision(3, 11).and_then(|mut m| {
        m.set_provenance("selfcheck");
        let first = encode_checkpoint(&m);
        let again = encode_checkpoint(&decode_checkpoint(&first)?);
        Ok((first.len(), first == again))
    });
    match result {
        Ok((len, same)) => CheckLine::new(name, same, format!("{len} bytes, re-encoding identical: {same}")),
        Err(e) => CheckLine::new(name, false, e.to_string()),
    }
}

fn metrics_line() -> CheckLine {
    let name = "metrics oracle";
    let rows = vec![vec![8, 2, 0], vec![1, 9, 0], vec![0, 0, 10]];
    let result = ConfusionMatrix::from_rows(&rows).and_then(|cm| compute_metrics(&cm));
    match result {
        Ok(m) => {
            let expected_f1 = ((16.0 / 19.0) + (18.0 / 21.0) + 1.0) / 3.0;
            let ok = (m.accuracy - 0.9).abs() < 1e-12
                && (m.f1 - expected_f1).abs() < 1e-12
                && format!("{:.4}", m.f1) == "0.8997";
            CheckLine::new(name, ok, format!("accuracy {:.4}, macro F1 {:.4}", m.accuracy, m.f1))
        }
        Err(e) => CheckLine::new(name, false, e.to_string()),
    }
}

pub fn run(seed: u64) -> Vec<CheckLine> {
    let mut lines = gradient_lines(seed);
    lines.extend(parameter_lines());
    lines.push(checkpoint_line());
    lines.push(metrics_line());
    lines
}
