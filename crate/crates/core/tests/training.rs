use graphloc::data::{synthesize_corpus, CorpusSpec, VideoSample};
use graphloc::localizer::{train, Localizer, LocalizerConfig, TrainOptions, Trainer};
use graphloc::sg_head::{Detection, DetectionSet, SgConfig, SgHead};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn corpus(videos: usize, frames: usize, seed: u64) -> Vec<VideoSample> {
    let spec = CorpusSpec {
        videos,
        held_out: 0,
        frames_min: frames,
        frames_max: frames,
        interval_min: 2,
        interval_max: frames.min(6),
        seed,
        ..CorpusSpec::default()
    };
    synthesize_corpus(&spec).unwrap().train
}

fn small_config() -> LocalizerConfig {
    LocalizerConfig {
        d_model: 32,
        layers: 2,
        conv_hidden: 16,
        ..LocalizerConfig::test_default()
    }
}

#[test]
fn overfits_a_single_short_video() {
    let data = corpus(1, 8, 3);
    let model = Localizer::new(small_config(), 1).unwrap();
    let mut trainer = Trainer::new(model, 3e-3, 1);
    let trace = trainer.fit(&data, 200, 1, None).unwrap();
    let first = trace[0].total;
    let last = trace.last().unwrap().total;
    assert!(last < 0.1 * first, "{first} -> {last}");
}

#[test]
fn same_seed_same_trace_and_weights() {
    let data = corpus(6, 12, 4);
    let opts = TrainOptions {
        steps: 15,
        batch_size: 3,
        ..TrainOptions::default()
    };
    let run = || {
        let mut log = Vec::new();
        let model = Localizer::new(small_config(), 9).unwrap();
        let (model, trace) = train(model, &data, &opts, Some(&mut log)).unwrap();
        (model.to_json().unwrap(), trace, log)
    };
    let (a, ta, la) = run();
    let (b, tb, lb) = run();
    assert_eq!(a, b);
    assert_eq!(la, lb);
    for (x, y) in ta.iter().zip(&tb) {
        assert_eq!(x.total.to_bits(), y.total.to_bits());
    }
}

#[test]
fn zero_weights_leave_parameters_unchanged() {
    let data = corpus(4, 10, 5);
    let cfg = LocalizerConfig {
        lambda_align: 0.0,
        lambda_intra: 0.0,
        lambda_inter: 0.0,
        ..small_config()
    };
    let model = Localizer::new(cfg, 2).unwrap();
    let before = model.to_json().unwrap();
    let mut trainer = Trainer::new(model, 1e-3, 2);
    let trace = trainer.fit(&data, 5, 2, None).unwrap();
    assert!(trace.iter().all(|t| t.total == 0.0));
    assert_eq!(trainer.model.to_json().unwrap(), before);
}

#[test]
fn scene_graph_head_stays_frozen() {
    let sg = SgConfig {
        d_s: 8,
        ..SgConfig::default()
    };
    let head = SgHead::new(sg, 11).unwrap();
    let snapshot = head.to_json().unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut data = corpus(3, 8, 6);
    for sample in &mut data {
        let frames: Vec<DetectionSet> = (0..sample.n_frames())
            .map(|_| {
                let objects = (0..3)
                    .map(|_| {
                        let mut labels: Vec<f64> = (0..sg.n_classes).map(|_| rng.random_range(0.0..1.0)).collect();
                        let total: f64 = labels.iter().sum();
                        labels.iter_mut().for_each(|p| *p /= total);
                        Detection {
                            feature: (0..sg.d_f).map(|_| rng.random_range(-1.0..1.0)).collect(),
                            labels,
                            bbox: [0.0, 0.0, 1.0, 1.0],
                        }
                    })
                    .collect();
                DetectionSet::new(objects).unwrap()
            })
            .collect();
        let (relations, counts) = head.video_relations(&frames, sample.k_sg()).unwrap();
        sample.relations = relations;
        sample.relation_counts = counts;
        sample.validate().unwrap();
    }

    let model = Localizer::new(small_config(), 3).unwrap();
    let mut trainer = Trainer::new(model, 1e-2, 3);
    trainer.fit(&data, 10, 3, None).unwrap();
    assert_eq!(head.to_json().unwrap(), snapshot);
}
