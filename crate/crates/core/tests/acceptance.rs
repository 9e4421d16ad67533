//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! fails at the end if any criterion failed.

use std::time::{Duration, Instant};

use graphloc::ablate::{median, run_arm, AblationSpec, Arm};
use graphloc::data::{synthesize_corpus, CorpusSpec, VideoSample};
use graphloc::evaluate::evaluate_model;
use graphloc::localizer::{
    gradcheck_suite, pseudo_labels, relevance_and_topk, train, Localizer, LocalizerConfig, MaskMode, ScoreVariant,
    TrainOptions, GRADCHECK_STEP, GRADCHECK_TOLERANCE,
};
use graphloc::numerics::Stencil;
use graphloc::qa_metrics::{token_accuracy, wup_similarity, wups_at, AnswerPair, Taxonomy};
use graphloc::retrieval_metrics::{average_precision, temporal_iou, Interval, MomentPrediction};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let report = gradcheck_suite(100, 0, GRADCHECK_STEP, Stencil::ThreePoint).unwrap();
    let elapsed = start.elapsed();
    outcome(
        report.max_rel_error < GRADCHECK_TOLERANCE && elapsed < Duration::from_secs(60),
        format!(
            "max rel error {:.3e} over {} cases / {} entries (worst {}), {:.1}s",
            report.max_rel_error,
            report.cases,
            report.entries,
            report.worst_param,
            elapsed.as_secs_f64()
        ),
    )
}

fn mask_semantics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst = 0.0f64;
    let mut maps = 0;
    for i in 0..50 {
        let frames = rng.random_range(2..=12);
        let spec = CorpusSpec {
            videos: 1,
            held_out: 0,
            frames_min: frames,
            frames_max: frames,
            interval_min: 1,
            interval_max: frames.min(4),
            n_query: rng.random_range(1..=5),
            seed: i,
            ..CorpusSpec::default()
        };
        let sample = &synthesize_corpus(&spec).unwrap().train[0];
        let heads = *[1usize, 2, 4].choose(&mut rng).unwrap();
        let cfg = LocalizerConfig {
            d_model: 8 * heads,
            heads,
            layers: rng.random_range(1..=3),
            mask_mode: MaskMode::Blocking,
            ..LocalizerConfig::test_default()
        };
        let model = Localizer::new(cfg, rng.random()).unwrap();
        for layer in model.attention_maps(sample).unwrap() {
            for a in layer {
                maps += 1;
                for r in 0..2 * frames {
                    for c in 0..2 * frames {
                        if (r < frames) != (c < frames) {
                            worst = worst.max(a.get(r, c).abs());
                        }
                    }
                }
            }
        }
    }
    outcome(
        worst == 0.0,
        format!("largest frame/scene-graph weight {worst:e} over {maps} attention maps"),
    )
}

fn trained_model(corpus: &[VideoSample]) -> (Localizer, Duration) {
    let model = Localizer::new(LocalizerConfig::test_default(), 0).unwrap();
    let start = Instant::now();
    let (model, _) = train(model, corpus, &TrainOptions::default(), None).unwrap();
    (model, start.elapsed())
}

fn synthetic_retrieval(model: &Localizer, elapsed: Duration, held_out: &[VideoSample]) -> Outcome {
    let trained = evaluate_model(model, held_out).unwrap();
    let untrained = evaluate_model(&Localizer::new(LocalizerConfig::test_default(), 0).unwrap(), held_out).unwrap();
    let hit = trained.highlight.map_or(0.0, |h| h.hit_at_1);
    outcome(
        trained.r1_05 >= 0.90 && hit >= 0.90 && untrained.r1_05 <= 0.25 && elapsed < Duration::from_secs(120),
        format!(
            "trained R1@0.5 {:.3} HIT@1 {:.3} in {:.1}s; untrained R1@0.5 {:.3}",
            trained.r1_05,
            hit,
            elapsed.as_secs_f64(),
            untrained.r1_05
        ),
    )
}

fn ablation_direction() -> Outcome {
    let spec = AblationSpec::new(
        CorpusSpec::default(),
        LocalizerConfig::test_default(),
        TrainOptions::default(),
        0,
        5,
    );
    let arms = [
        Arm {
            variant: ScoreVariant::Both,
            mask: MaskMode::Blocking,
        },
        Arm {
            variant: ScoreVariant::NoAlignment,
            mask: MaskMode::Blocking,
        },
        Arm {
            variant: ScoreVariant::NoSaliency,
            mask: MaskMode::Blocking,
        },
        Arm {
            variant: ScoreVariant::Both,
            mask: MaskMode::None,
        },
    ];
    let medians: Vec<f64> = arms
        .iter()
        .map(|&arm| {
            let runs: Vec<f64> = spec
                .seeds
                .iter()
                .map(|&s| run_arm(&spec, arm, s).unwrap().map_avg)
                .collect();
            median(&runs)
        })
        .collect();
    let [both, no_align, no_sal, no_mask] = medians[..] else {
        unreachable!()
    };
    outcome(
        both >= no_align && both >= no_sal && both >= no_mask,
        format!(
            "median Avg. mAP over {} seeds: both {both:.4}, no-alignment {no_align:.4}, no-saliency {no_sal:.4}, no-mask {no_mask:.4}",
            spec.seeds.len()
        ),
    )
}

fn random_interval(rng: &mut ChaCha8Rng) -> Interval {
    let s = rng.random_range(0.0..20.0);
    (s, s + rng.random_range(0.5..10.0))
}

/// AP from an exhaustive search over injective prediction-to-truth matchings,
/// keeping the matching that is lexicographically best in rank order.
fn brute_force_ap(pred: &MomentPrediction, gt: &[Interval], theta: f64) -> f64 {
    let mut order: Vec<usize> = (0..pred.intervals.len()).collect();
    order.sort_by(|&a, &b| {
        pred.scores[b]
            .total_cmp(&pred.scores[a])
            .then(pred.intervals[a].0.total_cmp(&pred.intervals[b].0))
    });
    let iou: Vec<Vec<f64>> = order
        .iter()
        .map(|&i| {
            gt.iter()
                .map(|&g| temporal_iou(pred.intervals[i], g).unwrap())
                .collect()
        })
        .collect();

    fn search(
        k: usize,
        iou: &[Vec<f64>],
        theta: f64,
        used: &mut Vec<bool>,
        current: &mut Vec<Option<usize>>,
        best: &mut Option<Vec<Option<usize>>>,
    ) {
        if k == iou.len() {
            let key = |m: &[Option<usize>]| -> Vec<(f64, i64)> {
                m.iter()
                    .enumerate()
                    .map(|(r, x)| x.map_or((-1.0, 0), |j| (iou[r][j], -(j as i64))))
                    .collect()
            };
            let better = match best {
                None => true,
                Some(b) => key(current).partial_cmp(&key(b)) == Some(std::cmp::Ordering::Greater),
            };
            if better {
                *best = Some(current.clone());
            }
            return;
        }
        current.push(None);
        search(k + 1, iou, theta, used, current, best);
        current.pop();
        for j in 0..used.len() {
            if !used[j] && iou[k][j] >= theta {
                used[j] = true;
                current.push(Some(j));
                search(k + 1, iou, theta, used, current, best);
                current.pop();
                used[j] = false;
            }
        }
    }

    let mut best = None;
    search(0, &iou, theta, &mut vec![false; gt.len()], &mut Vec::new(), &mut best);
    let matching = best.unwrap();
    let mut tp = 0.0;
    let mut sum = 0.0;
    for (rank, m) in matching.iter().enumerate() {
        if m.is_some() {
            tp += 1.0;
            sum += tp / (rank + 1) as f64;
        }
    }
    sum / gt.len() as f64
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut map_err = 0.0f64;
    for _ in 0..1000 {
        let n_pred = rng.random_range(0..=5);
        let n_gt = rng.random_range(1..=3);
        let pred = MomentPrediction {
            intervals: (0..n_pred).map(|_| random_interval(&mut rng)).collect(),
            scores: (0..n_pred).map(|_| (rng.random_range(0..4) as f64) / 4.0).collect(),
        };
        let gt: Vec<Interval> = (0..n_gt).map(|_| random_interval(&mut rng)).collect();
        let theta = *[0.3, 0.5, 0.7, 0.9].choose(&mut rng).unwrap();
        let fast = average_precision(&pred, &gt, theta).unwrap().unwrap();
        map_err = map_err.max((fast - brute_force_ap(&pred, &gt, theta)).abs());
    }

    let tax = Taxonomy::bundled();
    let words = [
        "player",
        "person",
        "athlete",
        "ball",
        "basketball",
        "running",
        "walking",
        "standing",
        "chair",
        "7",
        "3",
        "holding",
        "looking",
        "unknown",
        "zebra",
    ];
    let mut wups_err = 0.0f64;
    for _ in 0..500 {
        let phrase = |rng: &mut ChaCha8Rng| -> String {
            let n = rng.random_range(1..=4);
            (0..n)
                .map(|_| *words.choose(rng).unwrap())
                .collect::<Vec<_>>()
                .join(" ")
        };
        let pair = AnswerPair::new(&phrase(&mut rng), &phrase(&mut rng));
        let gamma = *[0.9, 0.5, 1.0].choose(&mut rng).unwrap();
        let w = |a: &str, b: &str| {
            let s = wup_similarity(&tax, a, b);
            if s < gamma {
                0.1 * s
            } else {
                s
            }
        };
        let mut forward = 1.0;
        for a in &pair.ground_truth {
            let mut m = 0.0f64;
            for b in &pair.prediction {
                m = m.max(w(a, b));
            }
            forward *= m;
        }
        let mut backward = 1.0;
        for b in &pair.prediction {
            let mut m = 0.0f64;
            for a in &pair.ground_truth {
                m = m.max(w(b, a));
            }
            backward *= m;
        }
        let oracle = forward.min(backward);
        let got = wups_at(std::slice::from_ref(&pair), &tax, gamma).unwrap();
        wups_err = wups_err.max((got - oracle).abs());
    }

    let acc = |p, g| token_accuracy(&[AnswerPair::new(p, g)]).unwrap();
    let accuracy = [
        acc("basketball player", "basketball player"),
        acc("basketball", "basketball player"),
        acc("player basketball", "basketball player"),
    ];
    outcome(
        map_err <= 1e-9 && wups_err <= 1e-12 && accuracy == [1.0, 0.5, 0.0],
        format!("mAP |Δ| {map_err:e} (1000 cases), WUPS |Δ| {wups_err:e} (500 cases), accuracy {accuracy:?}"),
    )
}

fn pseudo_label_table() -> Outcome {
    let r = 0.5;
    let cases = [
        (true, 0.9, (1.0, 1.0)),
        (true, 0.1, (0.0, -1.0)),
        (false, 0.1, (1.0, 1.0)),
        (false, 0.9, (0.0, -1.0)),
        (true, r, (0.0, -1.0)),
        (false, r, (0.0, -1.0)),
    ];
    let wrong: Vec<_> = cases
        .iter()
        .filter(|&&(c, rel, want)| pseudo_labels(c, rel, r) != want)
        .collect();
    outcome(
        wrong.is_empty(),
        format!(
            "{} of {} cases match, boundary included",
            cases.len() - wrong.len(),
            cases.len()
        ),
    )
}

fn relevance_fusion(model: &Localizer, held_out: &[VideoSample]) -> Outcome {
    let mut frames = 0;
    let mut exact = true;
    let mut top1_stable = true;
    for sample in held_out {
        let out = model.infer(sample).unwrap();
        for i in 0..out.relevance.len() {
            frames += 1;
            let want = model.w_f() * out.foreground[i] + model.w_s() * out.saliency[i];
            exact &= out.relevance[i].to_bits() == want.to_bits();
        }
        for c in [1e-3, 0.5, 3.0, 1e4] {
            let scaled =
                relevance_and_topk(&out.foreground, &out.saliency, c * model.w_f(), c * model.w_s(), 1).unwrap();
            top1_stable &= scaled.top_k[0] == out.top_k[0];
        }
    }
    outcome(
        exact && top1_stable,
        format!("bit-exact on {frames} frames: {exact}; top-1 unchanged under 4 positive scalings: {top1_stable}"),
    )
}

fn determinism(corpus: &[VideoSample]) -> Outcome {
    let opts = TrainOptions {
        steps: 40,
        ..TrainOptions::default()
    };
    let run = || {
        let model = Localizer::new(LocalizerConfig::test_default(), 3).unwrap();
        let mut log = Vec::new();
        let (model, _) = train(model, corpus, &opts, Some(&mut log)).unwrap();
        (log, model.to_json().unwrap().into_bytes())
    };
    let (log_a, ckpt_a) = run();
    let (log_b, ckpt_b) = run();
    outcome(
        log_a == log_b && ckpt_a == ckpt_b,
        format!("{} log bytes, {} checkpoint bytes compared", log_a.len(), ckpt_a.len()),
    )
}

#[test]
fn acceptance() {
    let corpus = synthesize_corpus(&CorpusSpec::default()).unwrap();
    let (model, elapsed) = trained_model(&corpus.train);

    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut record = |name, o: Outcome| {
        println!("[{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((name, o));
    };
    record("gradient correctness", gradient_correctness());
    record("mask semantics", mask_semantics());
    record(
        "synthetic retrieval",
        synthetic_retrieval(&model, elapsed, &corpus.held_out),
    );
    record("ablation direction", ablation_direction());
    record("metric oracles", metric_oracles());
    record("pseudo-label truth table", pseudo_label_table());
    record("relevance fusion", relevance_fusion(&model, &corpus.held_out));
    record("determinism", determinism(&corpus.train));

    let failed: Vec<&str> = results.iter().filter(|(_, o)| !o.pass).map(|(n, _)| *n).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
