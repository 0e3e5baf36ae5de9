use mambattention::datagen::{synth_clips, Split};
use mambattention::net::{load_checkpoint, Variant};
use mambattention::train::{Pair, RunConfig, Trainer};
use mambattention::{Error, Tensor};

fn tiny(variant: &str, seed: u64) -> RunConfig {
    let mut c = RunConfig::default();
    c.apply_text(&format!(
        "channels=8\nlayers=1\nheads=2\nssm_state=4\nvariant={variant}\nlr=5e-3\nbatch_size=2\ncrop=1600\nseed={seed}"
    ))
    .unwrap();
    c
}

fn pairs(split: Split, n: usize, len: usize) -> Vec<Pair> {
    synth_clips(split, n, len, 3)
        .unwrap()
        .into_iter()
        .map(|c| Pair {
            id: c.spec.clean_id,
            clean: c.clean,
            noisy: c.noisy,
        })
        .collect()
}

fn batch(p: &[Pair]) -> (Tensor, Tensor) {
    let n = p[0].clean.len();
    let cat = |f: fn(&Pair) -> &Vec<f64>| Tensor::new(vec![p.len(), n], p.iter().flat_map(|x| f(x).clone()).collect()).unwrap();
    (cat(|x| &x.clean), cat(|x| &x.noisy))
}

#[test]
fn training_is_deterministic_under_a_seed() {
    let data = pairs(Split::Train, 2, 1600);
    let (clean, noisy) = batch(&data);
    let run = || {
        let mut t = Trainer::new(tiny("shared", 11)).unwrap();
        let logs: Vec<String> = (0..20).map(|_| t.train_step(&clean, &noisy).unwrap().to_string()).collect();
        (logs, t.model.enhance(&data[0].noisy).unwrap())
    };
    assert_eq!(run(), run());
    let mut other = Trainer::new(tiny("shared", 12)).unwrap();
    let a = other.train_step(&clean, &noisy).unwrap().to_string();
    assert_ne!(a, run().0[0]);
}

#[test]
fn every_variant_reduces_its_loss_on_a_fixed_batch() {
    let data = pairs(Split::Train, 2, 1600);
    let (clean, noisy) = batch(&data);
    for v in Variant::ALL {
        let mut t = Trainer::new(tiny(&v.to_string(), 1)).unwrap();
        let before = t.generator_loss(&clean, &noisy).unwrap().0;
        for _ in 0..30 {
            t.train_step(&clean, &noisy).unwrap();
        }
        let after = t.generator_loss(&clean, &noisy).unwrap().0;
        assert!(after < before, "{v}: {before} -> {after}");
    }
}

#[test]
fn discriminator_can_be_switched_off() {
    let data = pairs(Split::Train, 2, 1600);
    let (clean, noisy) = batch(&data);
    let mut c = tiny("shared", 2);
    c.set("adversarial", "false").unwrap();
    let mut t = Trainer::new(c).unwrap();
    let disc = t.disc.store.clone();
    let s = t.train_step(&clean, &noisy).unwrap();
    assert!(s.discriminator.is_none());
    assert_eq!(s.terms[5], 0.0);
    assert_eq!(t.disc.store.get(t.disc.store.ids().next().unwrap()), disc.get(disc.ids().next().unwrap()));
}

#[test]
fn step_rejects_mismatched_batches() {
    let mut t = Trainer::new(tiny("shared", 3)).unwrap();
    let a = Tensor::zeros(&[2, 1600]);
    assert!(t.train_step(&a, &Tensor::zeros(&[2, 1500])).is_err());
    assert!(t.train_step(&Tensor::zeros(&[1600]), &Tensor::zeros(&[1600])).is_err());
}

#[test]
fn fit_logs_evaluates_and_keeps_the_best_checkpoint() {
    let train = pairs(Split::Train, 3, 2400);
    let valid = pairs(Split::Valid, 2, 2400);
    let mut c = tiny("shared", 4);
    c.steps = 6;
    c.eval_every = 3;
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("best.ckpt");
    let mut t = Trainer::new(c).unwrap();
    let mut log = Vec::new();
    let best = t.fit(&train, &valid, Some(&ckpt), &mut log).unwrap().unwrap();
    let log = String::from_utf8(log).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert!(lines[0].starts_with("event=start"));
    assert_eq!(lines.iter().filter(|l| l.starts_with("step=")).count(), 6);
    assert_eq!(lines.iter().filter(|l| l.starts_with("event=eval")).count(), 2);
    // 3 pairs in batches of 2: a new epoch every other step or so
    assert!(lines.iter().any(|l| l.starts_with("event=epoch")));
    assert!(best.is_finite());
    let m = load_checkpoint(&ckpt).unwrap();
    assert_eq!(m.config, t.model.config);
    assert!(t.fit(&[], &valid, None, &mut Vec::new()).is_err());
}

#[test]
fn config_errors_are_reported() {
    let mut c = RunConfig::default();
    assert!(matches!(c.set("no_such_key", "1"), Err(Error::Config(_))));
    assert!(c.set("lr", "fast").is_err());
    assert!(c.apply_text("channels 8").is_err());
    c.set("batch_size", "0").unwrap();
    assert!(c.validate().is_err());
    let back = {
        let d = tiny("attention_after", 9);
        let text: String = d.to_pairs().iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        let mut e = RunConfig::default();
        e.apply_text(&text).unwrap();
        (d, e)
    };
    assert_eq!(back.0.to_pairs(), back.1.to_pairs());
}
