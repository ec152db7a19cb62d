//! End-to-end pipelines shared by the command-line driver and the test
//! harness: augmented example sources for every training stage, the four
//! training modes, and decode/tune/score orchestration.

use ndarray::Array2;
use rayon::prelude::*;

use crate::augment::{augment, AugmentSpec};
use crate::decoder::{DecoderConfig, DecoderState, Episode};
use crate::error::{Error, Result};
use crate::eval::{self, EvalReport, PosStream, TunedThreshold};
use crate::features::{FeatureMatrix, LogMelExtractor};
use crate::grammar::{build_decoding, build_denominator, DecodingGraph};
use crate::graph::Graph;
use crate::lfmmi::{lfmmi_graphs, LogProbMatrix};
use crate::net::train::{train, ExampleSource, TrainExample, TrainLog, TrainOpts};
use crate::net::{configs, forward, NetworkConfig, Parameters};
use crate::numerator::{
    build_numerator_aligned, build_numerator_free, to_output_spans, transcript_for,
    unit_spans_from_alignment, DEFAULT_TOLERANCE,
};
use crate::pretrain::{distill_loss, senone_loss};
use crate::seeds;
use crate::synth::{frame_senones, wake_word_phones, AlignSeg, SynthUtterance, UttKind};
use crate::topology::{build_topology, DatasetKind, HmmTopology};

/// Table-2 style training modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Mode {
    #[serde(rename = "e2e")]
    E2e,
    #[serde(rename = "phone-align")]
    PhoneAlign,
    #[serde(rename = "phone-align+transfer")]
    PhoneAlignTransfer,
    #[serde(rename = "phone-align+ts")]
    PhoneAlignTs,
}

impl Mode {
    pub fn aligned(self) -> bool {
        !matches!(self, Mode::E2e)
    }

    pub fn label(self) -> &'static str {
        match self {
            Mode::E2e => "e2e",
            Mode::PhoneAlign => "phone-align",
            Mode::PhoneAlignTransfer => "phone-align+transfer",
            Mode::PhoneAlignTs => "phone-align+ts",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "e2e" => Ok(Mode::E2e),
            "phone-align" => Ok(Mode::PhoneAlign),
            "phone-align+transfer" => Ok(Mode::PhoneAlignTransfer),
            "phone-align+ts" => Ok(Mode::PhoneAlignTs),
            other => Err(Error::BadNetworkConfig(format!("unknown mode `{other}`"))),
        }
    }
}

/// Per-epoch augmentation policy; draws are a pure function of
/// (seed, utterance, round).
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct AugmentPolicy {
    pub speed: bool,
    pub noise_prob: f64,
    pub snr_db: (f64, f64),
    pub reverb_prob: f64,
    pub decay_s: (f64, f64),
    pub seed: u64,
}

impl AugmentPolicy {
    pub fn none(seed: u64) -> Self {
        Self {
            speed: false,
            noise_prob: 0.0,
            snr_db: (10.0, 30.0),
            reverb_prob: 0.0,
            decay_s: (0.05, 0.25),
            seed,
        }
    }

    pub fn train_default(seed: u64) -> Self {
        Self {
            speed: true,
            noise_prob: 0.75,
            snr_db: (10.0, 30.0),
            reverb_prob: 0.4,
            decay_s: (0.05, 0.25),
            seed,
        }
    }

    /// Deployment-like condition baked into dev and eval audio: moderate
    /// noise and light reverberation, identical protocol for positives and
    /// negatives so the tuned operating point transfers.
    pub fn eval_condition(seed: u64) -> Self {
        Self {
            speed: false,
            noise_prob: 0.9,
            snr_db: (8.0, 18.0),
            reverb_prob: 0.4,
            decay_s: (0.08, 0.22),
            seed,
        }
    }

    pub fn draw(&self, utt: usize, round: usize) -> AugmentSpec {
        use rand::Rng;
        use rand::SeedableRng;
        let s = seeds::derive(self.seed, "augment", (utt as u64) << 20 | round as u64);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(s);
        let speed_factor = if self.speed { [0.9, 1.0, 1.1][rng.gen_range(0..3)] } else { 1.0 };
        let noise_snr_db = rng
            .gen_bool(self.noise_prob)
            .then(|| rng.gen_range(self.snr_db.0..=self.snr_db.1));
        let reverb_decay_s = rng
            .gen_bool(self.reverb_prob)
            .then(|| rng.gen_range(self.decay_s.0..=self.decay_s.1));
        AugmentSpec { speed_factor, noise_snr_db, reverb_decay_s, seed: s }
    }
}

/// Rescale alignment boundaries after speed perturbation so they keep tiling
/// the new frame range.
pub fn scale_alignment(align: &[AlignSeg], speed: f64, new_t_in: usize) -> Vec<AlignSeg> {
    if align.is_empty() {
        return Vec::new();
    }
    let n = align.len();
    let mut out = Vec::with_capacity(n);
    let mut start = 0u32;
    for (i, seg) in align.iter().enumerate() {
        let end = if i + 1 == n {
            new_t_in as u32
        } else {
            (((seg.end_frame as f64) / speed).round() as u32).clamp(start + 1, new_t_in as u32)
        };
        let end = end.max(start + 1).min(new_t_in as u32);
        out.push(AlignSeg { unit: seg.unit, start_frame: start, end_frame: end });
        start = end;
    }
    // guarantee the tail tiles exactly
    if let Some(last) = out.last_mut() {
        last.end_frame = new_t_in as u32;
    }
    out.retain(|s| s.end_frame > s.start_frame);
    out
}

/// Shared data plumbing: augment, extract features, rescale the alignment.
fn materialize(
    utt: &SynthUtterance,
    spec: &AugmentSpec,
    extractor: &LogMelExtractor,
) -> Result<(FeatureMatrix, Vec<AlignSeg>)> {
    let audio = augment(&utt.audio, spec)?;
    let feats = extractor.compute(&audio)?;
    let align = scale_alignment(&utt.alignment, spec.speed_factor, feats.num_frames());
    Ok((feats, align))
}

/// Sequence-training source: builds the numerator per utterance (aligned
/// lattice or alignment-free chain) against a shared denominator.
pub struct MmiSource<'a> {
    pub utts: &'a [SynthUtterance],
    pub kind: DatasetKind,
    pub topology: HmmTopology,
    pub den: Graph,
    pub aligned: bool,
    pub tolerance: u32,
    pub policy: AugmentPolicy,
}

impl<'a> MmiSource<'a> {
    pub fn new(
        utts: &'a [SynthUtterance],
        kind: DatasetKind,
        aligned: bool,
        policy: AugmentPolicy,
    ) -> Result<Self> {
        let topology = build_topology(kind);
        let den = build_denominator(kind, &topology)?;
        Ok(Self { utts, kind, topology, den, aligned, tolerance: DEFAULT_TOLERANCE, policy })
    }
}

impl ExampleSource for MmiSource<'_> {
    fn len(&self) -> usize {
        self.utts.len()
    }

    fn example(&self, index: usize, round: usize) -> Result<TrainExample> {
        let utt = &self.utts[index];
        let spec = self.policy.draw(index, round);
        let extractor = crate::features::shared_extractor();
        let (feats, align) = materialize(utt, &spec, extractor)?;
        let t_out = crate::numerator::output_frames(feats.num_frames());
        let num: Graph = if self.aligned {
            let spans = unit_spans_from_alignment(&align, wake_word_phones(self.kind));
            let spec = to_output_spans(&spans, feats.num_frames())?;
            build_numerator_aligned(&spec, &self.topology, self.tolerance)?.graph
        } else {
            let transcript = transcript_for(self.kind, utt.kind == UttKind::Pos);
            build_numerator_free(transcript, &self.topology)?
        };
        let den = self.den.clone();
        let norm = 1.0 / t_out as f64;
        Ok(TrainExample {
            features: feats,
            loss: Box::new(move |out: &Array2<f64>| {
                let logp = LogProbMatrix(out.clone());
                let r = lfmmi_graphs(&num, &den, &logp)?;
                Ok((-r.objective * norm, r.grad.mapv(|g| -g * norm)))
            }),
        })
    }
}

/// Frame cross-entropy source for acoustic-model pretraining.
pub struct SenoneSource<'a> {
    pub utts: &'a [SynthUtterance],
    pub inventory: usize,
    pub policy: AugmentPolicy,
}

impl ExampleSource for SenoneSource<'_> {
    fn len(&self) -> usize {
        self.utts.len()
    }

    fn example(&self, index: usize, round: usize) -> Result<TrainExample> {
        let utt = &self.utts[index];
        let spec = self.policy.draw(index, round);
        let extractor = crate::features::shared_extractor();
        let (feats, align) = materialize(utt, &spec, extractor)?;
        let scaled = SynthUtterance { alignment: align, ..utt.clone() };
        let frame_labels = frame_senones(&scaled);
        let t_out = crate::numerator::output_frames(feats.num_frames());
        let labels: Vec<u32> = (0..t_out)
            .map(|k| frame_labels[(k * crate::numerator::SUBSAMPLE).min(frame_labels.len() - 1)])
            .collect();
        Ok(TrainExample { features: feats, loss: senone_loss(labels, self.inventory) })
    }
}

/// Representation-regression source for teacher-student pretraining. Teacher
/// targets are fixed per utterance; the student sees augmented audio in
/// asymmetric mode (duration-preserving: no speed change, so teacher and
/// student frames pair one-to-one).
pub struct DistillSource<'a> {
    pub utts: &'a [SynthUtterance],
    pub targets: Vec<Array2<f64>>,
    pub policy: AugmentPolicy,
}

impl ExampleSource for DistillSource<'_> {
    fn len(&self) -> usize {
        self.utts.len()
    }

    fn example(&self, index: usize, round: usize) -> Result<TrainExample> {
        let utt = &self.utts[index];
        let mut spec = self.policy.draw(index, round);
        spec.speed_factor = 1.0;
        let extractor = crate::features::shared_extractor();
        let (feats, _) = materialize(utt, &spec, extractor)?;
        Ok(TrainExample { features: feats, loss: distill_loss(self.targets[index].clone()) })
    }
}

/// Teacher bottleneck representations over a corpus; clean audio in
/// asymmetric mode, augmented otherwise.
pub fn teacher_representations(
    cfg: &NetworkConfig,
    params: &Parameters,
    utts: &[SynthUtterance],
    asymmetric: bool,
    policy: &AugmentPolicy,
) -> Result<Vec<Array2<f64>>> {
    if cfg.bottleneck_tap.is_none() {
        return Err(Error::BadNetworkConfig("teacher has no bottleneck tap".into()));
    }
    utts.par_iter()
        .enumerate()
        .map(|(i, utt)| {
            let extractor = crate::features::shared_extractor();
            let feats = if asymmetric {
                extractor.compute(&utt.audio)?
            } else {
                let mut spec = policy.draw(i, 0);
                spec.speed_factor = 1.0;
                let audio = augment(&utt.audio, &spec)?;
                extractor.compute(&audio)?
            };
            let fwd = forward(cfg, params, &feats, false)?;
            fwd.tap.ok_or_else(|| Error::BadNetworkConfig("no tap produced".into()))
        })
        .collect()
}

/// Pretrain an acoustic model with frame cross-entropy over senone targets.
pub fn pretrain_am(
    cfg: &NetworkConfig,
    corpus: &[SynthUtterance],
    inventory: usize,
    policy: AugmentPolicy,
    opts: &TrainOpts,
    init_seed: u64,
) -> Result<(Parameters, TrainLog)> {
    let mut params = Parameters::init(cfg, init_seed)?;
    let source = SenoneSource { utts: corpus, inventory, policy };
    let log = train(cfg, &mut params, &source, opts)?;
    Ok((params, log))
}

/// Distill a student lower stack toward teacher representations.
pub fn distill(
    teacher_cfg: &NetworkConfig,
    teacher_params: &Parameters,
    lower_cfg: &NetworkConfig,
    corpus: &[SynthUtterance],
    asymmetric: bool,
    policy: AugmentPolicy,
    opts: &TrainOpts,
    init_seed: u64,
) -> Result<(Parameters, TrainLog)> {
    let targets =
        teacher_representations(teacher_cfg, teacher_params, corpus, asymmetric, &policy)?;
    let dim = lower_cfg.out_dim();
    for t in &targets {
        if t.ncols() != dim {
            return Err(Error::ArchMismatch(format!(
                "teacher representation dim {} vs student {}",
                t.ncols(),
                dim
            )));
        }
    }
    let mut params = Parameters::init(lower_cfg, init_seed)?;
    let source = DistillSource { utts: corpus, targets, policy };
    let log = train(lower_cfg, &mut params, &source, opts)?;
    Ok((params, log))
}

/// Train a wake-word model (any mode) given initialized parameters; frozen
/// layers are respected. Returns the per-epoch objective (ascending is
/// learning).
pub fn train_wakeword(
    cfg: &NetworkConfig,
    params: &mut Parameters,
    corpus: &[SynthUtterance],
    kind: DatasetKind,
    aligned: bool,
    policy: AugmentPolicy,
    opts: &TrainOpts,
) -> Result<TrainLog> {
    let source = MmiSource::new(corpus, kind, aligned, policy)?;
    train(cfg, params, &source, opts)
}

/// Batch log-probabilities for one utterance.
pub fn model_logp(
    cfg: &NetworkConfig,
    params: &Parameters,
    feats: &FeatureMatrix,
) -> Result<LogProbMatrix> {
    Ok(LogProbMatrix(forward(cfg, params, feats, false)?.output))
}

/// Recorded completion episodes of one feature stream.
pub fn record_episodes(
    cfg: &NetworkConfig,
    params: &Parameters,
    graph: &DecodingGraph,
    feats: &FeatureMatrix,
    dec_cfg: &DecoderConfig,
) -> Result<Vec<Episode>> {
    let logp = model_logp(cfg, params, feats)?;
    let mut state = DecoderState::recording(graph, dec_cfg.clone())?;
    for row in logp.0.rows() {
        state.push_frame(row.as_slice().unwrap())?;
    }
    state.finish();
    Ok(state.episodes().to_vec())
}

/// A trained model bundled with everything needed to decode.
pub struct Model {
    pub cfg: NetworkConfig,
    pub params: Parameters,
    pub kind: DatasetKind,
    pub topology: HmmTopology,
    pub decoding: DecodingGraph,
}

impl Model {
    pub fn new(cfg: NetworkConfig, params: Parameters, kind: DatasetKind) -> Result<Self> {
        let topology = build_topology(kind);
        let decoding = build_decoding(kind, &topology)?;
        Ok(Self { cfg, params, kind, topology, decoding })
    }

    pub fn right_context(&self) -> usize {
        self.cfg.context().1
    }
}

/// Episodes for a set of streams, in parallel, with baked-in eval
/// augmentation applied per stream when a policy is given.
pub fn episodes_for_utts(
    model: &Model,
    utts: &[SynthUtterance],
    dec_cfg: &DecoderConfig,
) -> Result<Vec<Vec<Episode>>> {
    utts.par_iter()
        .map(|utt| {
            let extractor = crate::features::shared_extractor();
            let feats = extractor.compute(&utt.audio)?;
            record_episodes(&model.cfg, &model.params, &model.decoding, &feats, dec_cfg)
        })
        .collect()
}

pub fn hours_of(utts: &[SynthUtterance]) -> f64 {
    utts.iter().map(|u| u.audio.duration_s()).sum::<f64>() / 3600.0
}

/// Tune the operating point on negative dev streams.
pub fn tune_model(
    model: &Model,
    dev_negatives: &[SynthUtterance],
    target_fph: f64,
    dec_cfg: &DecoderConfig,
) -> Result<TunedThreshold> {
    let eps = episodes_for_utts(model, dev_negatives, dec_cfg)?;
    eval::tune_threshold(&eps, hours_of(dev_negatives), target_fph, dec_cfg.refractory_frames)
}

/// Score a model on eval positives (and optionally eval negatives for a DET
/// curve) at a tuned threshold.
pub fn evaluate_model(
    model: &Model,
    threshold: f64,
    eval_positives: &[SynthUtterance],
    eval_negatives: Option<&[SynthUtterance]>,
    dec_cfg: &DecoderConfig,
    dataset_size: usize,
) -> Result<EvalReport> {
    let pos_eps = episodes_for_utts(model, eval_positives, dec_cfg)?;
    let positives: Vec<PosStream> = pos_eps
        .into_iter()
        .zip(eval_positives)
        .map(|(episodes, utt)| PosStream {
            episodes,
            ref_ww_end_s: utt.ww_end_s.unwrap_or(0.0),
        })
        .collect();
    let neg_eps = match eval_negatives {
        Some(negs) => Some((episodes_for_utts(model, negs, dec_cfg)?, hours_of(negs))),
        None => None,
    };
    eval::score(
        &positives,
        threshold,
        dec_cfg.refractory_frames,
        model.right_context(),
        neg_eps.as_ref().map(|(e, h)| (e.as_slice(), *h)),
        dataset_size,
    )
}

/// Count live-mode false positives on negative streams at a threshold.
pub fn count_false_positives(
    model: &Model,
    negatives: &[SynthUtterance],
    threshold: f64,
    dec_cfg: &DecoderConfig,
) -> Result<usize> {
    let counts: Result<Vec<usize>> = negatives
        .par_iter()
        .map(|utt| {
            let extractor = crate::features::shared_extractor();
            let feats = extractor.compute(&utt.audio)?;
            let logp = model_logp(&model.cfg, &model.params, &feats)?;
            let mut cfg = dec_cfg.clone();
            cfg.threshold = threshold;
            let mut state = DecoderState::new(&model.decoding, cfg)?;
            for row in logp.0.rows() {
                state.push_frame(row.as_slice().unwrap())?;
            }
            state.finish();
            Ok(state.events().len())
        })
        .collect();
    Ok(counts?.into_iter().sum())
}

/// Bake evaluation-condition augmentation into utterances (noise, reverb, and
/// optional speed with the reference end rescaled).
pub fn bake_eval_condition(
    utts: &[SynthUtterance],
    policy: &AugmentPolicy,
) -> Result<Vec<SynthUtterance>> {
    utts.iter()
        .enumerate()
        .map(|(i, utt)| {
            let spec = policy.draw(i, 0);
            let audio = augment(&utt.audio, &spec)?;
            let t_in = crate::features::frame_count(audio.len());
            let alignment = scale_alignment(&utt.alignment, spec.speed_factor, t_in);
            let ww_end_s = utt.ww_end_s.map(|s| s / spec.speed_factor);
            Ok(SynthUtterance { audio, alignment, ww_end_s, ..utt.clone() })
        })
        .collect()
}

/// Desk-scale corpora for one dataset kind: train, negative dev (tuning),
/// eval positives/negatives on held-out speakers.
pub struct Corpora {
    pub kind: DatasetKind,
    pub train: Vec<SynthUtterance>,
    pub dev_negatives: Vec<SynthUtterance>,
    pub eval_positives: Vec<SynthUtterance>,
    pub eval_negatives: Vec<SynthUtterance>,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CorporaSpec {
    pub kind: DatasetKind,
    pub seed: u64,
    pub train_positives: usize,
    pub train_negative_hours: f64,
    pub dev_negative_hours: f64,
    pub eval_positives: usize,
    pub eval_negative_hours: f64,
    pub train_speakers: u32,
    pub eval_speakers: u32,
    pub train_confusable_rate: f64,
    pub dev_confusable_rate: f64,
}

impl CorporaSpec {
    pub fn desk_default(kind: DatasetKind, seed: u64) -> Self {
        Self {
            kind,
            seed,
            train_positives: 2200,
            train_negative_hours: 1.6,
            dev_negative_hours: 2.0,
            eval_positives: 220,
            eval_negative_hours: 0.5,
            train_speakers: 440,
            eval_speakers: 60,
            train_confusable_rate: 0.5,
            dev_confusable_rate: 0.6,
        }
    }
}

pub fn build_corpora(spec: &CorporaSpec) -> Corpora {
    use crate::synth::{synth_corpus, CorpusSpec};
    let mut train = CorpusSpec::new(spec.kind, seeds::derive(spec.seed, "train", 0));
    train.num_positives = spec.train_positives;
    train.negative_hours = spec.train_negative_hours;
    train.num_speakers = spec.train_speakers;
    train.speaker_base = 0;
    train.confusable_rate = spec.train_confusable_rate;

    // Tuning negatives: same speakers as training, denser confusables so the
    // tuned operating point is conservative.
    let mut dev = CorpusSpec::new(spec.kind, seeds::derive(spec.seed, "dev", 1));
    dev.num_positives = 0;
    dev.negative_hours = spec.dev_negative_hours;
    dev.num_speakers = spec.train_speakers;
    dev.speaker_base = 0;
    dev.confusable_rate = spec.dev_confusable_rate;

    let mut eval_pos = CorpusSpec::new(spec.kind, seeds::derive(spec.seed, "eval-pos", 2));
    eval_pos.num_positives = spec.eval_positives;
    eval_pos.negative_hours = 0.0;
    eval_pos.num_speakers = spec.eval_speakers;
    eval_pos.speaker_base = 100_000;
    eval_pos.positives_per_speaker = (spec.eval_positives as u32 / spec.eval_speakers.max(1))
        .max(1) as usize;

    let mut eval_neg = CorpusSpec::new(spec.kind, seeds::derive(spec.seed, "eval-neg", 3));
    eval_neg.num_positives = 0;
    eval_neg.negative_hours = spec.eval_negative_hours;
    eval_neg.num_speakers = spec.eval_speakers;
    eval_neg.speaker_base = 100_000;

    Corpora {
        kind: spec.kind,
        train: synth_corpus(&train),
        dev_negatives: synth_corpus(&dev),
        eval_positives: synth_corpus(&eval_pos),
        eval_negatives: synth_corpus(&eval_neg),
    }
}

/// The first `n` positives (stable order) plus all negatives.
pub fn train_subset(train: &[SynthUtterance], n: usize) -> Vec<SynthUtterance> {
    let mut out: Vec<SynthUtterance> =
        train.iter().filter(|u| u.kind == UttKind::Pos).take(n).cloned().collect();
    out.extend(train.iter().filter(|u| u.kind == UttKind::Neg).cloned());
    out
}

/// Train one model in a given mode on a subset of `n` positives.
/// `pretrained` supplies the AM (transfer) or distilled lower stack (T/S).
pub struct TrainedRun {
    pub model: Model,
    pub log: TrainLog,
    pub objective_per_epoch: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
pub fn run_training(
    mode: Mode,
    student_cfg: &NetworkConfig,
    kind: DatasetKind,
    corpus: &[SynthUtterance],
    policy: AugmentPolicy,
    opts: &TrainOpts,
    init_seed: u64,
    pretrained: Option<(&NetworkConfig, &Parameters, usize)>,
) -> Result<TrainedRun> {
    let mut params = match (mode, pretrained) {
        (Mode::E2e | Mode::PhoneAlign, _) => Parameters::init(student_cfg, init_seed)?,
        (Mode::PhoneAlignTransfer, Some((am_cfg, am_params, n_layers))) => {
            crate::pretrain::transfer_init(am_cfg, am_params, student_cfg, n_layers, init_seed)?
        }
        (Mode::PhoneAlignTs, Some((lower_cfg, lower_params, n_layers))) => {
            crate::pretrain::attach_lower_stack(
                student_cfg,
                lower_cfg,
                lower_params,
                n_layers,
                init_seed,
            )?
        }
        (m, None) => {
            return Err(Error::MissingArtifact(format!(
                "{} requires a pretrained checkpoint (acoustic model or distilled lower stack)",
                m.label()
            )))
        }
    };
    let log = train_wakeword(student_cfg, &mut params, corpus, kind, mode.aligned(), policy, opts)?;
    let objective_per_epoch = log.epoch_loss.iter().map(|l| -l).collect();
    let model = Model::new(student_cfg.clone(), params, kind)?;
    Ok(TrainedRun { model, log, objective_per_epoch })
}

/// Run config string in the table's annotation style: "(333k, -150+10)".
pub fn annotation(cfg: &NetworkConfig) -> String {
    let params = crate::net::count_params(cfg);
    let (l, r) = cfg.context();
    format!("({}k, -{l}+{r})", params / 1000)
}

/// Default student config per mode at trend (desk) scale.
pub fn trend_student(mode: Mode, kind: DatasetKind) -> NetworkConfig {
    match mode {
        Mode::PhoneAlignTransfer => {
            // transfer shares the trend AM's lower stack
            configs::student_trend(kind)
        }
        _ => configs::student_trend(kind),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synth_corpus, CorpusSpec};

    #[test]
    fn augment_policy_is_deterministic_and_varied() {
        let p = AugmentPolicy::train_default(7);
        let a = p.draw(3, 1);
        let b = p.draw(3, 1);
        assert_eq!(a, b);
        let c = p.draw(3, 2);
        assert!(a != c || a.seed != c.seed);
    }

    #[test]
    fn scaled_alignment_tiles_the_new_range() {
        let align = vec![
            AlignSeg { unit: 0, start_frame: 0, end_frame: 30 },
            AlignSeg { unit: 5, start_frame: 30, end_frame: 42 },
            AlignSeg { unit: 0, start_frame: 42, end_frame: 100 },
        ];
        for speed in [0.9f64, 1.0, 1.1] {
            let new_t = (100.0 / speed).round() as usize;
            let scaled = scale_alignment(&align, speed, new_t);
            assert_eq!(scaled.first().unwrap().start_frame, 0);
            assert_eq!(scaled.last().unwrap().end_frame, new_t as u32);
            for w in scaled.windows(2) {
                assert_eq!(w[0].end_frame, w[1].start_frame);
            }
        }
    }

    #[test]
    fn mmi_source_builds_trainable_examples() {
        let mut spec = CorpusSpec::new(DatasetKind::Snips, 11);
        spec.num_positives = 2;
        spec.negative_hours = 0.001;
        let corpus = synth_corpus(&spec);
        for aligned in [true, false] {
            let src =
                MmiSource::new(&corpus, DatasetKind::Snips, aligned, AugmentPolicy::none(1))
                    .unwrap();
            for i in 0..corpus.len() {
                let ex = src.example(i, 0).unwrap();
                let t_out = crate::numerator::output_frames(ex.features.num_frames());
                // uniform log-probs: objective must be finite and <= ~0
                let logp = Array2::from_elem((t_out, 18), -(18f64).ln());
                let (loss, grad) = (ex.loss)(&logp).unwrap();
                assert!(loss.is_finite());
                assert!(loss >= -1e-9, "aligned={aligned}: objective above zero: {}", -loss);
                assert_eq!(grad.nrows(), t_out);
                for row in grad.rows() {
                    let s: f64 = row.sum();
                    assert!(s.abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn corpora_speakers_are_disjoint() {
        let mut spec = CorporaSpec::desk_default(DatasetKind::Snips, 3);
        spec.train_positives = 10;
        spec.train_negative_hours = 0.002;
        spec.dev_negative_hours = 0.002;
        spec.eval_positives = 5;
        spec.eval_negative_hours = 0.002;
        let c = build_corpora(&spec);
        let train_speakers: std::collections::HashSet<u32> =
            c.train.iter().map(|u| u.speaker_id).collect();
        let eval_speakers: std::collections::HashSet<u32> = c
            .eval_positives
            .iter()
            .chain(&c.eval_negatives)
            .map(|u| u.speaker_id)
            .collect();
        assert!(train_speakers.is_disjoint(&eval_speakers));
        assert_eq!(c.eval_positives.len(), 5);
    }

    #[test]
    fn subset_takes_first_positives_and_all_negatives() {
        let mut spec = CorpusSpec::new(DatasetKind::Snips, 11);
        spec.num_positives = 8;
        spec.negative_hours = 0.003;
        let corpus = synth_corpus(&spec);
        let sub = train_subset(&corpus, 3);
        let pos: Vec<&str> = sub
            .iter()
            .filter(|u| u.kind == UttKind::Pos)
            .map(|u| u.id.as_str())
            .collect();
        assert_eq!(pos, vec!["pos_000000", "pos_000001", "pos_000002"]);
        let negs = corpus.iter().filter(|u| u.kind == UttKind::Neg).count();
        assert_eq!(sub.iter().filter(|u| u.kind == UttKind::Neg).count(), negs);
    }

    #[test]
    fn annotation_format() {
        let cfg = configs::student_main(DatasetKind::Snips);
        let a = annotation(&cfg);
        assert!(a.starts_with('(') && a.contains("k, -150+10)"), "{a}");
    }
}
