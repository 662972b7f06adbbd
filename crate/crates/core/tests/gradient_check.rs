use artiwave_core::train::{backward, nll_loss, Sequence};
use artiwave_core::wavenet::{forward_shifted, shift_inputs, Grid, NetworkConfig, NetworkParams, OpCounter};
use artiwave_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy_config(seed: u64) -> NetworkConfig {
    NetworkConfig {
        layers_per_stack: 2,
        stacks: 1,
        kernel_size: 2 + (seed % 2) as usize,
        residual_channels: 4,
        gate_channels: 4,
        skip_channels: 4,
        mixture_components: 2,
        input_channels: 3,
        cond_channels: 5,
        ..NetworkConfig::default()
    }
}

/// Random parameters with biases chosen so that no ReLU in the head sits
/// near its kink, which would make central differences meaningless.
fn smooth_problem(seed: u64) -> (NetworkParams, Sequence, Grid) {
    let cfg = toy_config(seed);
    let grid = Grid::new(cfg.quantization_levels);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = NetworkParams::random(&cfg, 0.4, &mut rng);
    for layer in &mut params.layers {
        layer.skip_bias.data.iter_mut().for_each(|b| *b = 1.0 + 0.2 * *b);
    }
    params.head_hidden_weight.data.iter_mut().for_each(|w| *w = w.abs());
    params.head_hidden_bias.data.iter_mut().for_each(|b| *b = 0.2 + 0.5 * b.abs());
    params.head_out_weight.data.iter_mut().for_each(|w| *w *= 0.5);
    let frames = 32;
    let x = Matrix::from_fn(frames, cfg.input_channels, |_, _| grid.snap(rng.gen_range(-0.9..0.9)));
    let cond = Matrix::from_fn(frames, cfg.cond_channels, |_, _| rng.gen_range(-1.0..1.0));
    let seq = Sequence::new("toy", x, cond);

    let trace = forward_shifted(&params, &shift_inputs(&seq.x), &seq.cond, &mut OpCounter::default()).unwrap();
    let margin = trace
        .skip_sum
        .as_slice()
        .iter()
        .chain(trace.hidden_pre.as_slice())
        .fold(f64::INFINITY, |m, v| m.min(v.abs()));
    assert!(margin > 0.05, "ReLU margin {margin}");
    (params, seq, grid)
}

#[test]
fn backward_matches_central_differences() {
    let h = 1e-3;
    for seed in [1u64, 2, 3, 4, 5, 6] {
        let (params, seq, grid) = smooth_problem(seed);
        let batch = [seq];
        let (_, grads) = backward(&params, &batch, grid).unwrap();
        let analytic = grads.0.named_tensors();
        let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
        let mut worst = (0.0f64, String::new());
        for (ti, name) in names.iter().enumerate() {
            let len = analytic[ti].1.len();
            for i in 0..len {
                let eval = |delta: f64| {
                    let mut p = params.clone();
                    p.named_tensors_mut()[ti].1.data[i] += delta;
                    nll_loss(&p, &batch, grid).unwrap()
                };
                let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                let a = analytic[ti].1.data[i];
                // Entries below 1e-6 are compared on that scale; their
                // differences are dominated by truncation error.
                let scale = a.abs().max(numeric.abs()).max(1e-6);
                let rel = (a - numeric).abs() / scale;
                if rel > worst.0 {
                    worst = (rel, format!("{name}[{i}] analytic {a:e} numeric {numeric:e}"));
                }
            }
        }
        assert!(worst.0 < 1e-4, "seed {seed}: worst relative error {:e} at {}", worst.0, worst.1);
    }
}

#[test]
fn every_parameter_group_receives_gradient() {
    let (params, seq, grid) = smooth_problem(4);
    let (_, grads) = backward(&params, &[seq], grid).unwrap();
    let last = params.layers.len() - 1;
    for (name, t) in grads.0.named_tensors() {
        // The last block's residual output feeds nothing.
        if name.starts_with(&format!("layers.{last}.residual")) {
            assert!(t.data.iter().all(|&v| v == 0.0));
            continue;
        }
        assert!(t.data.iter().any(|&v| v != 0.0), "{name} has no gradient");
    }
}
