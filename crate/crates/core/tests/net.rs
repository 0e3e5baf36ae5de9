mod common;

use common::{block_oracle, check_param_grads_with, derivative, from_seq, rng, to_seq, uniform};
use mambattention::net::{
    batch_features, count_parameters, load_checkpoint, save_checkpoint, BlockParams, Encoder, Model, ModelConfig, Variant,
};
use mambattention::ssm::bidirectional_mamba;
use mambattention::tensor::relative_error;
use mambattention::train::{RunConfig, Trainer};
use mambattention::{Graph, ParamStore, Tensor};
use rand::Rng;

fn tiny(variant: Variant) -> ModelConfig {
    ModelConfig {
        channels: 8,
        layers: 1,
        heads: 2,
        ssm_state: 4,
        variant,
        ..ModelConfig::default()
    }
}

fn noise(len: usize, seed: u64) -> Tensor {
    uniform(&[1, len], -0.5, 0.5, seed)
}

#[test]
fn encoder_output_shape_for_default_config() {
    let cfg = ModelConfig::default();
    let mut store = ParamStore::new();
    let enc = Encoder::new(&mut store, &cfg, &mut rng(0));
    let (m, p) = batch_features(&cfg, &uniform(&[2, 1600], -0.5, 0.5, 1)).unwrap();
    let mut g = Graph::new();
    let (vm, vp) = (g.constant(m), g.constant(p));
    let z = enc.forward(&mut g, &store, vm, vp).unwrap();
    assert_eq!(g.shape(z), &[2, 64, 17, 100]);
}

#[test]
fn encoder_maps_zero_to_zero() {
    let cfg = tiny(Variant::Shared);
    let mut store = ParamStore::new();
    let enc = Encoder::new(&mut store, &cfg, &mut rng(2));
    let mut g = Graph::new();
    let z0 = g.constant(Tensor::zeros(&[1, 5, 201]));
    let z = enc.forward(&mut g, &store, z0, z0).unwrap();
    assert!(g.value(z).data().iter().all(|&v| v == 0.0));
}

#[test]
fn encoder_size_is_variant_independent() {
    let counts: Vec<usize> = Variant::ALL
        .iter()
        .map(|&v| Encoder::param_count(&ModelConfig::default().with_variant(v)))
        .collect();
    assert!(counts.windows(2).all(|w| w[0] == w[1]));
}

fn block(cfg: &ModelConfig, seed: u64) -> (ParamStore, BlockParams) {
    let mut store = ParamStore::new();
    let b = BlockParams::new(&mut store, "b", cfg, &mut rng(seed)).unwrap();
    (store, b)
}

fn run_block(store: &ParamStore, b: &BlockParams, x: &Tensor) -> Tensor {
    let mut g = Graph::new();
    let v = g.constant(x.clone());
    let y = b.forward(&mut g, store, v).unwrap();
    g.value(y).clone()
}

#[test]
fn blocks_preserve_shape() {
    for v in Variant::ALL {
        let (store, b) = block(&tiny(v), 3);
        for (t, f) in [(1, 1), (3, 5), (6, 2)] {
            let x = uniform(&[2, 8, t, f], -1.0, 1.0, 4);
            assert_eq!(run_block(&store, &b, &x).shape(), x.shape(), "{v}");
        }
    }
}

#[test]
fn attention_after_matches_reordered_composition() {
    let (store, b) = block(&tiny(Variant::AttentionAfter), 5);
    let x = uniform(&[2, 8, 4, 3], -1.0, 1.0, 6);
    let got = run_block(&store, &b, &x);
    assert!(got.max_abs_diff(&block_oracle(&store, &b, &x, false)) < 1e-12);
    // and it is not the attention-first order
    assert!(got.max_abs_diff(&block_oracle(&store, &b, &x, true)) > 1e-6);
}

#[test]
fn shared_block_matches_attention_first_composition() {
    let (store, b) = block(&tiny(Variant::Shared), 7);
    let x = uniform(&[1, 8, 5, 4], -1.0, 1.0, 8);
    assert!(run_block(&store, &b, &x).max_abs_diff(&block_oracle(&store, &b, &x, true)) < 1e-12);
}

#[test]
fn no_attention_block_is_a_pure_mamba_dual_path() {
    let (store, b) = block(&tiny(Variant::NoAttention), 9);
    assert!(b.time.attention.is_none() && b.freq.attention.is_none());
    let x = uniform(&[1, 8, 4, 4], -1.0, 1.0, 10);
    let mut g = Graph::new();
    let xt = g.constant(to_seq(&x, true));
    let yt = bidirectional_mamba(&mut g, &store, &b.time.mamba, xt).unwrap();
    let yt = g.add(xt, yt).unwrap();
    let mid = from_seq(g.value(yt), x.shape(), true);
    let xf = g.constant(to_seq(&mid, false));
    let yf = bidirectional_mamba(&mut g, &store, &b.freq.mamba, xf).unwrap();
    let yf = g.add(xf, yf).unwrap();
    let want = from_seq(g.value(yf), x.shape(), false);
    assert!(run_block(&store, &b, &x).max_abs_diff(&want) < 1e-12);
}

#[test]
fn identity_init_blocks_are_exact_identities() {
    for v in Variant::ALL {
        let cfg = ModelConfig {
            identity_init: true,
            ..tiny(v)
        };
        let (store, b) = block(&cfg, 11);
        let x = uniform(&[2, 8, 3, 5], -1.0, 1.0, 12);
        assert_eq!(run_block(&store, &b, &x), x, "{v}");
    }
}

#[test]
fn mask_range_and_identity_point() {
    let model = Model::new(tiny(Variant::Shared), 13).unwrap();
    let mut g = Graph::new();
    let z = g.constant(uniform(&[1, 8, 6, 100], -3.0, 3.0, 14));
    let m = model.mask.forward(&mut g, &model.store, z, 201).unwrap();
    assert_eq!(g.shape(m), &[1, 6, 201]);
    assert!(g.value(m).data().iter().all(|&v| v > 0.0 && v < 2.0));
    let z0 = g.constant(Tensor::zeros(&[1, 8, 6, 100]));
    let m0 = model.mask.forward(&mut g, &model.store, z0, 201).unwrap();
    assert!(g.value(m0).data().iter().all(|&v| v == 1.0));
}

#[test]
fn phase_range_and_gradients_through_both_branches() {
    let cfg = ModelConfig {
        channels: 4,
        heads: 1,
        ..tiny(Variant::Shared)
    };
    let model = Model::new(cfg, 15).unwrap();
    let z = uniform(&[1, 4, 3, 100], -1.0, 1.0, 16);
    let mut g = Graph::new();
    let zv = g.constant(z.clone());
    let p = model.phase.forward(&mut g, &model.store, zv, 201).unwrap();
    assert_eq!(g.shape(p), &[1, 3, 201]);
    assert!(g.value(p).data().iter().all(|&v| v > -std::f64::consts::PI && v <= std::f64::consts::PI));

    // only the phase decoder's parameters
    let mut store = ParamStore::new();
    let dec = mambattention::net::PhaseDecoder::new(&mut store, &cfg, &mut rng(17));
    let target = uniform(&[1, 3, 201], -3.0, 3.0, 18);
    let (err, name) = check_param_grads_with(
        &store,
        |g, s| {
            let zv = g.constant(z.clone());
            let p = dec.forward(g, s, zv, 201)?;
            let t = g.constant(target.clone());
            mambattention::losses::loss_phase(g, t, p).map(|l| l.total)
        },
        true,
    );
    assert!(err < 1e-4, "worst rel err {err:e} in {name}");
}

#[test]
fn forward_keeps_length_and_is_finite() {
    let model = Model::new(tiny(Variant::Shared), 19).unwrap();
    for len in [400, 1234, 3200] {
        let y = model.enhance(noise(len, len as u64).data()).unwrap();
        assert_eq!(y.len(), len);
        assert!(y.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn shared_and_unshared_agree_bitwise_at_init() {
    let x = noise(2400, 20);
    let a = Model::new(tiny(Variant::Shared), 21).unwrap().enhance(x.data()).unwrap();
    let b = Model::new(tiny(Variant::Unshared), 21).unwrap().enhance(x.data()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn parameter_count_ordering() {
    let c = |v| count_parameters(&ModelConfig::default().with_variant(v));
    assert!(c(Variant::NoAttention) < c(Variant::Shared));
    assert!(c(Variant::Shared) < c(Variant::Unshared));
    assert_eq!(c(Variant::Shared), c(Variant::AttentionAfter));
    assert_eq!(c(Variant::Unshared) - c(Variant::Shared), 4 * 64 * 64 * 4);
    for v in Variant::ALL {
        assert_eq!(Model::new(tiny(v), 0).unwrap().param_count(), count_parameters(&tiny(v)));
    }
}

#[test]
fn end_to_end_generator_gradient_on_sampled_parameters() {
    let mut run = RunConfig::default();
    run.model = tiny(Variant::Shared);
    let mut trainer = Trainer::new(run).unwrap();
    let clean = uniform(&[1, 800], -0.3, 0.3, 22);
    let noisy = Tensor::new(
        vec![1, 800],
        clean.data().iter().zip(noise(800, 23).data()).map(|(c, n)| c + 0.3 * n).collect(),
    )
    .unwrap();
    let mut g = Graph::new();
    let (_, _, total) = trainer.generator_graph(&mut g, &clean, &noisy).unwrap();
    g.backward(total).unwrap();
    let grads: Vec<(mambattention::ParamId, Vec<f64>)> = g
        .param_grads()
        .into_iter()
        .filter(|(id, _)| trainer.model.store.owns(*id))
        .map(|(id, gr)| (id, gr.to_vec()))
        .collect();
    let ids: Vec<_> = trainer.model.store.ids().collect();
    let total_scalars = trainer.model.param_count();
    let samples = total_scalars / 100;
    let mut r = rng(24);
    let mut worst: f64 = 0.0;
    let mut report = String::new();
    for _ in 0..samples {
        let id = ids[r.random_range(0..ids.len())];
        let i = r.random_range(0..trainer.model.store.get(id).numel());
        let x0 = trainer.model.store.get(id).data()[i];
        let num = derivative(
            |v| {
                trainer.model.store.get_mut(id).data_mut()[i] = v;
                trainer.generator_loss(&clean, &noisy).unwrap().0
            },
            x0,
            true,
        );
        trainer.model.store.get_mut(id).data_mut()[i] = x0;
        let ana = grads.iter().find(|(j, _)| *j == id).map_or(0.0, |(_, gr)| gr[i]);
        let e = relative_error(ana, num, 1e-6);
        if e > worst {
            worst = e;
            report = format!("{}[{i}]: analytic {ana:e}, numeric {num:e}", trainer.model.store.name(id));
        }
    }
    assert!(worst < 1e-3, "worst rel err {worst:e} over {samples} sampled parameters at {report}");
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let model = Model::new(tiny(Variant::Unshared), 25).unwrap();
    let p = dir.path().join("m.ckpt");
    save_checkpoint(&model, &p).unwrap();
    let back = load_checkpoint(&p).unwrap();
    assert_eq!(back.config, model.config);
    for ((_, na, a), (_, nb, b)) in model.store.iter().zip(back.store.iter()) {
        assert_eq!(na, nb);
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| (*x as f32) as f64 == *y));
    }
    let q = dir.path().join("again.ckpt");
    save_checkpoint(&back, &q).unwrap();
    assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap());
    let x = noise(1600, 26);
    assert_eq!(back.enhance(x.data()).unwrap(), load_checkpoint(&q).unwrap().enhance(x.data()).unwrap());

    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, b"not a checkpoint").unwrap();
    assert!(load_checkpoint(&bad).is_err());
    let mut bytes = std::fs::read(&p).unwrap();
    bytes.truncate(bytes.len() - 8);
    std::fs::write(&bad, bytes).unwrap();
    assert!(load_checkpoint(&bad).is_err());
}
