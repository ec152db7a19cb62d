//! Reference network architectures at desk scale.
//!
//! Student models keep their total right context at or below 10 input frames
//! and stay under 400k parameters. The main student reproduces the -150+10
//! input context; the transfer student reproduces -78+10 and shares its lower
//! stack with the transfer acoustic model so weights copy bit-exactly.

use crate::net::{LayerSpec, NetworkConfig};
use crate::synth::SENONE_COUNT;
use crate::topology::DatasetKind;

/// Index of the last lower-stack layer (the 128-dim projection) in student
/// configs; everything at or below it freezes for transfer/distillation.
pub const STUDENT_LOWER_LAYERS: usize = 7;

fn lower_main() -> Vec<LayerSpec> {
    let mut layers = vec![LayerSpec::tdnn(vec![-2, -1, 0, 1, 2], 128)];
    for _ in 0..4 {
        layers.push(LayerSpec::tdnnf(vec![-16, -8, 0, 2], 128, 64, true));
    }
    layers.push(LayerSpec::tdnnf(vec![-16, -8, 0], 128, 64, true));
    layers.push(LayerSpec::linear(128));
    layers
}

fn lower_transfer() -> Vec<LayerSpec> {
    let mut layers = vec![LayerSpec::tdnn(vec![-2, -1, 0, 1, 2], 128)];
    for _ in 0..3 {
        layers.push(LayerSpec::tdnnf(vec![-2, 0, 2], 128, 64, true));
    }
    for _ in 0..2 {
        layers.push(LayerSpec::tdnnf(vec![-1, 0, 1], 128, 64, true));
    }
    layers.push(LayerSpec::linear(128));
    layers
}

fn upper_main(pdf_count: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::tdnnf(vec![-32, -16, 0], 128, 48, true),
        LayerSpec::tdnnf(vec![-32, -16, 0], 128, 48, true),
        LayerSpec::tdnnf(vec![-4, -2, 0], 128, 48, true),
        LayerSpec::output(pdf_count),
    ]
}

fn pdf_count_for(kind: DatasetKind) -> usize {
    match kind {
        DatasetKind::Snips => 18,
        DatasetKind::Fluency => 22,
    }
}

/// Main student: -150+10 input context, ~333k parameters.
pub fn student_main(kind: DatasetKind) -> NetworkConfig {
    let pdf = pdf_count_for(kind);
    let mut layers = lower_main();
    layers.extend(upper_main(pdf));
    NetworkConfig {
        name: format!("student-main-{kind}"),
        input_dim: 64,
        layers,
        pdf_count: pdf,
        bottleneck_tap: Some(STUDENT_LOWER_LAYERS - 1),
    }
}

/// Transfer student: -78+10 input context, lower stack identical to the first
/// six layers of [`am_transfer`].
pub fn student_transfer(kind: DatasetKind) -> NetworkConfig {
    let pdf = pdf_count_for(kind);
    let mut layers = lower_transfer();
    layers.extend(upper_main(pdf));
    NetworkConfig {
        name: format!("student-transfer-{kind}"),
        input_dim: 64,
        layers,
        pdf_count: pdf,
        bottleneck_tap: Some(STUDENT_LOWER_LAYERS - 1),
    }
}

/// Small acoustic model for transfer learning: the transfer student's lower
/// stack, a ReLU layer, nine more factorized layers, a 128-dim projection,
/// and a senone output.
pub fn am_transfer() -> NetworkConfig {
    let mut layers = lower_transfer();
    layers.pop(); // the student's projection is not part of the acoustic model
    layers.push(LayerSpec::relu(128));
    for _ in 0..9 {
        layers.push(LayerSpec::tdnnf(vec![-3, 0], 128, 64, true));
    }
    layers.push(LayerSpec::linear(128));
    let tap = layers.len() - 1;
    layers.push(LayerSpec::output(SENONE_COUNT));
    NetworkConfig {
        name: "am-transfer".into(),
        input_dim: 64,
        layers,
        pdf_count: SENONE_COUNT,
        bottleneck_tap: Some(tap),
    }
}

fn teacher_plan(outer: usize, bottleneck: usize) -> Vec<LayerSpec> {
    let mut layers = vec![LayerSpec::tdnn(vec![-2, -1, 0, 1, 2], outer)];
    for _ in 0..4 {
        layers.push(LayerSpec::tdnnf(vec![-3, 0, 2], outer, bottleneck, true));
    }
    layers.push(LayerSpec::tdnnf(vec![-3, 0], outer, bottleneck, true));
    layers.push(LayerSpec::relu(outer));
    for _ in 0..9 {
        layers.push(LayerSpec::tdnnf(vec![-3, 0], outer, bottleneck, true));
    }
    layers.push(LayerSpec::linear(128)); // penultimate 128-dim bottleneck
    layers
}

/// Reference teacher: the acoustic-model layer plan at larger dims, at least
/// 20x the main student's parameter count.
pub fn teacher_ref() -> NetworkConfig {
    let mut layers = teacher_plan(704, 192);
    let tap = layers.len() - 1;
    layers.push(LayerSpec::output(SENONE_COUNT));
    NetworkConfig {
        name: "teacher-ref".into(),
        input_dim: 64,
        layers,
        pdf_count: SENONE_COUNT,
        bottleneck_tap: Some(tap),
    }
}

/// Reduced teacher for the timed trend experiments.
pub fn teacher_trend() -> NetworkConfig {
    let mut layers = teacher_plan(256, 96);
    let tap = layers.len() - 1;
    layers.push(LayerSpec::output(SENONE_COUNT));
    NetworkConfig {
        name: "teacher-trend".into(),
        input_dim: 64,
        layers,
        pdf_count: SENONE_COUNT,
        bottleneck_tap: Some(tap),
    }
}

/// Index of the projection layer at the top of the trend student's lower stack.
pub const TREND_LOWER_LAYERS: usize = 5;

/// Small student for the timed trend experiments (right context <= 10).
pub fn student_trend(kind: DatasetKind) -> NetworkConfig {
    let pdf = pdf_count_for(kind);
    let layers = vec![
        LayerSpec::tdnn(vec![-2, -1, 0, 1, 2], 64),
        LayerSpec::tdnnf(vec![-6, 0, 2], 64, 32, true),
        LayerSpec::tdnnf(vec![-6, 0, 2], 64, 32, true),
        LayerSpec::tdnnf(vec![-6, 0, 2], 64, 32, true),
        LayerSpec::linear(128),
        LayerSpec::tdnnf(vec![-12, -6, 0], 64, 32, false),
        LayerSpec::tdnnf(vec![-12, -6, 0], 64, 32, true),
        LayerSpec::tdnnf(vec![-4, -2, 0], 64, 32, true),
        LayerSpec::output(pdf),
    ];
    NetworkConfig {
        name: format!("student-trend-{kind}"),
        input_dim: 64,
        layers,
        pdf_count: pdf,
        bottleneck_tap: Some(TREND_LOWER_LAYERS - 1),
    }
}

/// Trend acoustic model: shares the trend student's lower stack.
pub fn am_trend() -> NetworkConfig {
    let student = student_trend(DatasetKind::Snips);
    let mut layers: Vec<LayerSpec> = student.layers[..TREND_LOWER_LAYERS - 1].to_vec();
    layers.push(LayerSpec::relu(64));
    for _ in 0..3 {
        layers.push(LayerSpec::tdnnf(vec![-3, 0], 64, 32, true));
    }
    layers.push(LayerSpec::linear(128));
    let tap = layers.len() - 1;
    layers.push(LayerSpec::output(SENONE_COUNT));
    NetworkConfig {
        name: "am-trend".into(),
        input_dim: 64,
        layers,
        pdf_count: SENONE_COUNT,
        bottleneck_tap: Some(tap),
    }
}

/// The lower stack of a student config as a standalone network whose output
/// is the 128-dim distillation representation.
pub fn lower_stack(student: &NetworkConfig, lower_layers: usize) -> NetworkConfig {
    NetworkConfig {
        name: format!("{}-lower", student.name),
        input_dim: student.input_dim,
        layers: student.layers[..lower_layers].to_vec(),
        pdf_count: student.pdf_count,
        bottleneck_tap: Some(lower_layers - 1),
    }
}

/// Look a config up by name (CLI surface).
pub fn by_name(name: &str, kind: DatasetKind) -> Option<NetworkConfig> {
    match name {
        "student-main" | "reference" => Some(student_main(kind)),
        "student-transfer" => Some(student_transfer(kind)),
        "student-trend" | "trend" => Some(student_trend(kind)),
        "am-transfer" => Some(am_transfer()),
        "am-trend" => Some(am_trend()),
        "teacher-ref" => Some(teacher_ref()),
        "teacher-trend" => Some(teacher_trend()),
        _ => None,
    }
}

/// Number of lower-stack layers for a student config name.
pub fn lower_layers_for(cfg: &NetworkConfig) -> usize {
    if cfg.name.contains("trend") {
        TREND_LOWER_LAYERS
    } else {
        STUDENT_LOWER_LAYERS
    }
}
