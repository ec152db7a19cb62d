//! Calibration experiments (ignored by default; run with `--ignored --nocapture`).

use wakeforge_core::decoder::DecoderConfig;
use wakeforge_core::net::train::TrainOpts;
use wakeforge_core::net::{configs, Parameters};
use wakeforge_core::pipeline::{self, AugmentPolicy, Mode};
use wakeforge_core::synth::{synth_corpus, CorpusSpec};
use wakeforge_core::topology::DatasetKind;

fn rayon_init() {
    let _ = rayon::ThreadPoolBuilder::new().num_threads(2).build_global();
}

#[test]
#[ignore]
fn overfit_one_utterance() {
    rayon_init();
    let kind = DatasetKind::Snips;
    let mut spec = CorpusSpec::new(kind, 42);
    spec.num_positives = 1;
    let corpus = synth_corpus(&spec);
    let cfg = configs::student_trend(kind);
    let mut params = Parameters::init(&cfg, 1).unwrap();
    let opts = TrainOpts {
        steps: 200,
        batch: 1,
        lr0: 0.01,
        lr_final: 0.002,
        seed: 2,
        log_every: 20,
        ..Default::default()
    };
    let t0 = std::time::Instant::now();
    let log = pipeline::train_wakeword(
        &cfg,
        &mut params,
        &corpus,
        kind,
        true,
        AugmentPolicy::none(3),
        &opts,
    )
    .unwrap();
    let objectives: Vec<f64> = log.epoch_loss.iter().map(|l| -l).collect();
    println!("epochs: {}", objectives.len());
    println!("objective first 5: {:?}", &objectives[..5.min(objectives.len())]);
    println!("objective last 5: {:?}", &objectives[objectives.len().saturating_sub(5)..]);
    println!("took {:?}", t0.elapsed());
    assert!(objectives.last().unwrap() > &-0.05, "failed to overfit");
}

#[test]
#[ignore]
fn trend_cell_phone_align() {
    rayon_init();
    let kind = DatasetKind::Snips;
    let mut cspec = pipeline::CorporaSpec::desk_default(kind, 7);
    cspec.dev_negative_hours = 1.0;
    cspec.eval_positives = 120;
    cspec.eval_negative_hours = 0.2;
    let t0 = std::time::Instant::now();
    let corpora = pipeline::build_corpora(&cspec);
    println!(
        "corpora: {} train ({} pos), {} dev-neg ({:.2} h), {} eval-pos, gen {:?}",
        corpora.train.len(),
        corpora.train.iter().filter(|u| u.kind == wakeforge_core::synth::UttKind::Pos).count(),
        corpora.dev_negatives.len(),
        pipeline::hours_of(&corpora.dev_negatives),
        corpora.eval_positives.len(),
        t0.elapsed()
    );
    // bake eval condition: mild noise & reverb, held-out speakers
    let eval_policy = AugmentPolicy {
        speed: false,
        noise_prob: 0.9,
        snr_db: (5.0, 20.0),
        reverb_prob: 0.5,
        decay_s: (0.1, 0.4),
        seed: 99,
    };
    let eval_pos = pipeline::bake_eval_condition(&corpora.eval_positives, &eval_policy).unwrap();

    let cfg = configs::student_trend(kind);
    let opts = TrainOpts {
        steps: 600,
        batch: 6,
        lr0: 0.01,
        lr_final: 0.001,
        seed: 5,
        log_every: 100,
        ..Default::default()
    };
    let dec_cfg = DecoderConfig { beam: 32.0, ..Default::default() };

    for n in [100usize, 2000] {
        let subset = pipeline::train_subset(&corpora.train, n);
        let t0 = std::time::Instant::now();
        let run = pipeline::run_training(
            Mode::PhoneAlign,
            &cfg,
            kind,
            &subset,
            AugmentPolicy::train_default(13),
            &opts,
            n as u64,
            None,
        )
        .unwrap();
        let train_t = t0.elapsed();
        println!("n={n}: objectives {:?}", &run.objective_per_epoch);
        let t0 = std::time::Instant::now();
        let tuned = pipeline::tune_model(&run.model, &corpora.dev_negatives, 0.1, &dec_cfg).unwrap();
        let tune_t = t0.elapsed();
        let report = pipeline::evaluate_model(
            &run.model,
            tuned.threshold,
            &eval_pos,
            None,
            &dec_cfg,
            n,
        )
        .unwrap();
        println!(
            "n={n}: theta={:.3} (allowed {}), FNR={:.2}% ({}/{}), p90={:?}, train {:?}, tune {:?}",
            tuned.threshold,
            tuned.allowed_fp,
            report.fnr_percent,
            report.num_positives - report.num_detected,
            report.num_positives,
            report.latency_p90_s,
            train_t,
            tune_t
        );
    }
}

#[test]
#[ignore]
fn probe_positive_episodes() {
    rayon_init();
    let kind = DatasetKind::Snips;
    let mut cspec = pipeline::CorporaSpec::desk_default(kind, 7);
    cspec.train_positives = 400;
    cspec.dev_negative_hours = 0.05;
    cspec.eval_positives = 6;
    cspec.eval_negative_hours = 0.0;
    let corpora = pipeline::build_corpora(&cspec);
    let cfg = configs::student_trend(kind);
    let opts = TrainOpts {
        steps: 400, batch: 6, lr0: 0.01, lr_final: 0.001, seed: 5, log_every: 100,
        ..Default::default()
    };
    let subset = pipeline::train_subset(&corpora.train, 400);
    let run = pipeline::run_training(
        Mode::PhoneAlign, &cfg, kind, &subset,
        AugmentPolicy::train_default(13), &opts, 1, None,
    ).unwrap();
    println!("objectives: {:?}", run.objective_per_epoch);
    let dec_cfg = DecoderConfig { beam: 32.0, ..Default::default() };

    // timing breakdown for one dev negative
    let extractor = wakeforge_core::features::LogMelExtractor::new();
    let neg = &corpora.dev_negatives[0];
    let t0 = std::time::Instant::now();
    let feats = extractor.compute(&neg.audio).unwrap();
    let t_feat = t0.elapsed();
    let t0 = std::time::Instant::now();
    let logp = pipeline::model_logp(&run.model.cfg, &run.model.params, &feats).unwrap();
    let t_fwd = t0.elapsed();
    let t0 = std::time::Instant::now();
    let eps = pipeline::record_episodes(&run.model.cfg, &run.model.params, &run.model.decoding, &feats, &dec_cfg).unwrap();
    let t_rec = t0.elapsed();
    println!("neg: {} frames, feat {:?}, fwd {:?}, fwd+record {:?}, {} episodes",
        feats.num_frames(), t_feat, t_fwd, t_rec, eps.len());

    // clean + baked positives
    for (tag, utt) in [("clean", &corpora.eval_positives[0]), ("clean2", &corpora.eval_positives[1])] {
        let feats = extractor.compute(&utt.audio).unwrap();
        let eps = pipeline::record_episodes(&run.model.cfg, &run.model.params, &run.model.decoding, &feats, &dec_cfg).unwrap();
        let ref_end = utt.ww_end_s.unwrap();
        println!("{tag}: ref_end={ref_end:.2}s T_out={} episodes:", wakeforge_core::numerator::output_frames(feats.num_frames()));
        for e in eps.iter().take(12) {
            println!("  completion@{} ({:.2}s) est={:.2}s peak={:.2} first_sample@{:?}",
                e.completion_frame,
                e.completion_frame as f64 * 0.03,
                e.ww_end_estimate_s(),
                e.peak_margin,
                e.samples.first());
        }
    }
    // negatives: strongest episodes
    let mut peaks: Vec<f64> = Vec::new();
    for neg in corpora.dev_negatives.iter().take(60) {
        let feats = extractor.compute(&neg.audio).unwrap();
        let eps = pipeline::record_episodes(&run.model.cfg, &run.model.params, &run.model.decoding, &feats, &dec_cfg).unwrap();
        peaks.extend(eps.iter().map(|e| e.peak_margin));
    }
    peaks.sort_by(|a, b| b.partial_cmp(a).unwrap());
    println!("top-10 negative episode peaks: {:?}", &peaks[..peaks.len().min(10)]);
    println!("num neg episodes (60 utts): {}", peaks.len());
}

#[test]
#[ignore]
fn margin_distributions() {
    rayon_init();
    let kind = DatasetKind::Snips;
    let mut cspec = pipeline::CorporaSpec::desk_default(kind, 7);
    cspec.dev_negative_hours = 0.4;
    cspec.eval_positives = 60;
    cspec.eval_negative_hours = 0.0;
    let corpora = pipeline::build_corpora(&cspec);
    let eval_policy = AugmentPolicy {
        speed: false, noise_prob: 0.9, snr_db: (5.0, 20.0),
        reverb_prob: 0.5, decay_s: (0.1, 0.4), seed: 99,
    };
    let eval_pos = pipeline::bake_eval_condition(&corpora.eval_positives, &eval_policy).unwrap();
    let cfg = configs::student_trend(kind);
    let opts = TrainOpts {
        steps: 900, batch: 6, lr0: 0.01, lr_final: 0.001, seed: 5, log_every: 150,
        ..Default::default()
    };
    let dec_cfg = DecoderConfig { beam: f64::INFINITY, ..Default::default() };

    for n in [100usize, 2000] {
        let subset = pipeline::train_subset(&corpora.train, n);
        let run = pipeline::run_training(
            Mode::PhoneAlign, &cfg, kind, &subset,
            AugmentPolicy::train_default(13), &opts, n as u64, None,
        ).unwrap();
        println!("n={n} objectives: {:?}", &run.objective_per_epoch[run.objective_per_epoch.len().saturating_sub(3)..]);

        // positive detection margins (matched episodes only) + latency candidates
        let pos_eps = pipeline::episodes_for_utts(&run.model, &eval_pos, &dec_cfg).unwrap();
        let mut pos_margins = Vec::new();
        let mut unmatched = 0;
        for (eps, utt) in pos_eps.iter().zip(&eval_pos) {
            let r = utt.ww_end_s.unwrap();
            let best = eps.iter()
                .filter(|e| (e.ww_end_estimate_s() - r).abs() <= 0.5)
                .map(|e| e.peak_margin)
                .fold(f64::NEG_INFINITY, f64::max);
            if best == f64::NEG_INFINITY { unmatched += 1; } else { pos_margins.push(best); }
        }
        pos_margins.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let neg_eps = pipeline::episodes_for_utts(&run.model, &corpora.dev_negatives, &dec_cfg).unwrap();
        let mut neg_margins: Vec<f64> = neg_eps.iter().flatten().map(|e| e.peak_margin).collect();
        neg_margins.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let q = |v: &[f64], p: f64| v[((v.len() as f64 - 1.0) * p) as usize];
        println!(
            "n={n}: pos matched {}/{} margins p10={:.1} p50={:.1} p90={:.1}; neg top: {:?}",
            pos_margins.len(), eval_pos.len(),
            q(&pos_margins, 0.1), q(&pos_margins, 0.5), q(&pos_margins, 0.9),
            &neg_margins[..neg_margins.len().min(8)].iter().map(|v| (v * 10.0).round() / 10.0).collect::<Vec<_>>(),
        );
        println!("n={n}: unmatched positives: {unmatched}; neg episodes: {}", neg_margins.len());
    }
}

#[test]
#[ignore]
fn dissect_worst_negative() {
    rayon_init();
    let kind = DatasetKind::Snips;
    let mut cspec = pipeline::CorporaSpec::desk_default(kind, 7);
    cspec.dev_negative_hours = 0.08;
    cspec.eval_positives = 2;
    cspec.eval_negative_hours = 0.0;
    let corpora = pipeline::build_corpora(&cspec);
    let cfg = configs::student_trend(kind);
    let opts = TrainOpts {
        steps: 500, batch: 6, lr0: 0.01, lr_final: 0.001, seed: 5, log_every: 500,
        ..Default::default()
    };
    let subset = pipeline::train_subset(&corpora.train, 400);
    let run = pipeline::run_training(
        Mode::PhoneAlign, &cfg, kind, &subset,
        AugmentPolicy::train_default(13), &opts, 1, None,
    ).unwrap();
    let dec_cfg = DecoderConfig { beam: f64::INFINITY, ..Default::default() };
    let neg_eps = pipeline::episodes_for_utts(&run.model, &corpora.dev_negatives, &dec_cfg).unwrap();
    // find the worst utterance
    let (worst, peak) = neg_eps.iter().enumerate()
        .map(|(i, eps)| (i, eps.iter().map(|e| e.peak_margin).fold(f64::NEG_INFINITY, f64::max)))
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap()).unwrap();
    println!("worst negative #{worst}: peak {peak:.1}");
    let utt = &corpora.dev_negatives[worst];
    let units: Vec<(u32, u32, u32)> = utt.alignment.iter().map(|s| (s.unit, s.start_frame, s.end_frame)).collect();
    println!("alignment (unit, in-frames): {:?}", units);
    println!("ww phones: {:?}", wakeforge_core::synth::wake_word_phones(kind));
    let eps = &neg_eps[worst];
    let mut sorted: Vec<&wakeforge_core::decoder::Episode> = eps.iter().collect();
    sorted.sort_by(|a, b| b.peak_margin.partial_cmp(&a.peak_margin).unwrap());
    for e in sorted.iter().take(6) {
        let peak_at = e.samples.iter().max_by(|a, b| a.1.partial_cmp(&b.1).unwrap()).unwrap();
        println!("  completion@{} ({:.2}s out) peak={:.1} at frame {} ({:.2}s); {} samples, first {:?}",
            e.completion_frame, e.completion_frame as f64 * 0.03, e.peak_margin, peak_at.0,
            peak_at.0 as f64 * 0.03, e.samples.len(), e.samples.first());
    }
}

#[test]
#[ignore]
fn dissect_frames() {
    rayon_init();
    use wakeforge_core::topology::build_topology;
    let kind = DatasetKind::Snips;
    let mut cspec = pipeline::CorporaSpec::desk_default(kind, 7);
    cspec.dev_negative_hours = 0.15;
    cspec.eval_positives = 3;
    cspec.eval_negative_hours = 0.0;
    let corpora = pipeline::build_corpora(&cspec);
    let cfg = configs::student_trend(kind);
    let opts = TrainOpts {
        steps: 900, batch: 6, lr0: 0.01, lr_final: 0.001, seed: 5, log_every: 900,
        ..Default::default()
    };
    let subset = pipeline::train_subset(&corpora.train, 2000);
    let run = pipeline::run_training(
        Mode::PhoneAlign, &cfg, kind, &subset,
        AugmentPolicy::train_default(13), &opts, 1, None,
    ).unwrap();
    let dec_cfg = DecoderConfig { beam: f64::INFINITY, ..Default::default() };
    let topo = build_topology(kind);
    let name = |pdf: usize| -> String {
        match topo.lookup_pdf(pdf as u32) {
            Some((u, s, l)) => format!("{}{}{}", ["W","S","q"][u], s, if l {"l"} else {"f"}),
            None => "?".into(),
        }
    };
    let neg_eps = pipeline::episodes_for_utts(&run.model, &corpora.dev_negatives, &dec_cfg).unwrap();
    let (worst, peak) = neg_eps.iter().enumerate()
        .map(|(i, eps)| (i, eps.iter().map(|e| e.peak_margin).fold(f64::NEG_INFINITY, f64::max)))
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap()).unwrap();
    let utt = &corpora.dev_negatives[worst];
    println!("worst neg #{worst} peak {peak:.1}; speaker {}", utt.speaker_id);
    println!("alignment: {:?}", utt.alignment.iter().map(|s| (s.unit, s.start_frame/3, s.end_frame/3)).collect::<Vec<_>>());
    let ep = neg_eps[worst].iter().max_by(|a, b| a.peak_margin.partial_cmp(&b.peak_margin).unwrap()).unwrap();
    println!("episode completion@{} samples {:?}", ep.completion_frame,
        ep.samples.iter().map(|(f, m)| (*f, (m * 10.0).round() / 10.0)).collect::<Vec<_>>());
    let extractor = wakeforge_core::features::shared_extractor();
    let feats = extractor.compute(&utt.audio).unwrap();
    let logp = pipeline::model_logp(&run.model.cfg, &run.model.params, &feats).unwrap();
    let c = ep.completion_frame as usize;
    for t in c.saturating_sub(14)..(c + 8).min(logp.0.nrows()) {
        let row = logp.0.row(t);
        let mut idx: Vec<usize> = (0..row.len()).collect();
        idx.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap());
        let top: Vec<String> = idx[..3].iter().map(|&p| format!("{}:{:.1}", name(p), row[p])).collect();
        println!("  out{t} in{}: {}", t * 3, top.join(" "));
    }
}

#[test]
#[ignore]
fn margin_longer_training() {
    rayon_init();
    let kind = DatasetKind::Snips;
    let mut cspec = pipeline::CorporaSpec::desk_default(kind, 7);
    cspec.dev_negative_hours = 0.4;
    cspec.eval_positives = 60;
    cspec.eval_negative_hours = 0.0;
    let corpora = pipeline::build_corpora(&cspec);
    let eval_policy = AugmentPolicy::eval_condition(99);
    let eval_pos = pipeline::bake_eval_condition(&corpora.eval_positives, &eval_policy).unwrap();
    let dev_negs = pipeline::bake_eval_condition(&corpora.dev_negatives, &AugmentPolicy::eval_condition(98)).unwrap();
    let cfg = configs::student_trend(kind);
    let dec_cfg = DecoderConfig { beam: f64::INFINITY, ..Default::default() };

    for (n, steps) in [(2000usize, 3000usize)] {
        let opts = TrainOpts {
            steps, batch: 6, lr0: 0.01, lr_final: 0.001, seed: 5, log_every: 300,
            ..Default::default()
        };
        let subset = pipeline::train_subset(&corpora.train, n);
        let t0 = std::time::Instant::now();
        let run = pipeline::run_training(
            Mode::PhoneAlign, &cfg, kind, &subset,
            AugmentPolicy::train_default(13), &opts, n as u64, None,
        ).unwrap();
        let pos_eps = pipeline::episodes_for_utts(&run.model, &eval_pos, &dec_cfg).unwrap();
        let mut pos_margins = Vec::new();
        for (eps, utt) in pos_eps.iter().zip(&eval_pos) {
            let r = utt.ww_end_s.unwrap();
            let best = eps.iter()
                .filter(|e| (e.ww_end_estimate_s() - r).abs() <= 0.5)
                .map(|e| e.peak_margin)
                .fold(f64::NEG_INFINITY, f64::max);
            pos_margins.push(best);
        }
        pos_margins.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let neg_eps = pipeline::episodes_for_utts(&run.model, &dev_negs, &dec_cfg).unwrap();
        let mut neg_margins: Vec<f64> = neg_eps.iter().flatten().map(|e| e.peak_margin).collect();
        neg_margins.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let q = |v: &[f64], p: f64| v[((v.len() as f64 - 1.0) * p) as usize];
        println!(
            "n={n} steps={steps} ({:?}): pos p10={:.1} p50={:.1} p90={:.1}; neg top {:?}; obj tail {:?}",
            t0.elapsed(),
            q(&pos_margins, 0.1), q(&pos_margins, 0.5), q(&pos_margins, 0.9),
            &neg_margins[..6.min(neg_margins.len())].iter().map(|v| (v * 10.0).round() / 10.0).collect::<Vec<_>>(),
            &run.objective_per_epoch[run.objective_per_epoch.len().saturating_sub(2)..],
        );
    }
}
