//! A two-layer model fitted to one synthetic utterance. Slow: about a
//! minute with optimizations.

use artiwave_core::corpus::{make_synthetic_corpus, Split, SynthConfig};
use artiwave_core::frontend::FrontendConfig;
use artiwave_core::generate::DecodeRule;
use artiwave_core::metrics::{correlation, rmse};
use artiwave_core::pipeline::{invert_features, prepare_corpus, Selection};
use artiwave_core::train::{nll_loss, AdamConfig, TrainConfig, Trainer};
use artiwave_core::trajectory::CHANNEL_COUNT;
use artiwave_core::wavenet::{Grid, NetworkConfig, NetworkParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn two_layer_model_overfits_one_utterance() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = make_synthetic_corpus(
        dir.path(),
        &SynthConfig {
            seed: 7,
            ..SynthConfig::default()
        },
    )
    .unwrap();
    let first = manifest.in_split(Split::Train).next().unwrap().id.clone();
    let grid = Grid::new(256);
    let selection = Selection {
        utterances: vec![first],
        ..Selection::default()
    };
    let prepared = prepare_corpus(&manifest, &FrontendConfig::default(), grid, &selection).unwrap();
    let utt = &prepared.utterances[0];

    let net = NetworkConfig {
        layers_per_stack: 2,
        stacks: 1,
        residual_channels: 64,
        gate_channels: 64,
        skip_channels: 64,
        ..NetworkConfig::default()
    };
    let config = TrainConfig {
        steps: 2000,
        minibatch_count: 1,
        adam: AdamConfig {
            learning_rate: 1.5e-3,
            ..AdamConfig::default()
        },
        grad_clip: None,
        seed: 7,
        log_every: 100,
        ..TrainConfig::default()
    };
    let params = NetworkParams::init(&net, &mut ChaCha8Rng::seed_from_u64(7));
    let seq = utt.to_sequence();
    let initial = nll_loss(&params, std::slice::from_ref(&seq), grid).unwrap();
    let mut trainer = Trainer::new(params, config, std::slice::from_ref(&seq)).unwrap();
    trainer.run(|_, _| Ok(())).unwrap();

    let fitted = nll_loss(&trainer.params, std::slice::from_ref(&seq), grid).unwrap();
    assert!((initial - 256f64.ln()).abs() < 0.05, "initial NLL {initial}");
    assert!(fitted < 1.0, "per-scalar NLL after training {fitted}");

    let pred = invert_features(
        &trainer.params,
        &utt.mel,
        &prepared.stats[&utt.speaker],
        DecodeRule::MixtureMean,
    )
    .unwrap();
    for c in 0..CHANNEL_COUNT {
        let p = pred.channels.column(c);
        let r = utt.reference.channels.column(c);
        let corr = correlation(&p, &r).unwrap().unwrap();
        assert!(corr >= 0.99, "channel {c}: correlation {corr}");
        let range = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - r.iter().cloned().fold(f64::INFINITY, f64::min);
        let err = rmse(&p, &r).unwrap();
        assert!(err <= 0.05 * range, "channel {c}: RMSE {err} over range {range}");
    }
}
