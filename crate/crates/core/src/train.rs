//! Training: run configuration, one alternating discriminator/generator
//! step, validation and the epoch loop with best-checkpoint selection.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::{GraphStft, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::losses::{
    discriminator_forward, generator_total, loss_adversarial_generator, loss_complex, loss_discriminator,
    loss_mag, loss_phase, loss_time, DiscriminatorParams, GeneratorTerms, LossWeights, QualityOracle, SiSdrQuality,
};
use crate::metrics::{estoi, si_sdr};
use crate::net::{batch_features, save_checkpoint, ForwardOutput, Model, ModelConfig};
use crate::tensor::{AdamW, AdamWConfig, Graph, Tensor, Var};

/// Validation metric used to pick the best checkpoint.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SelectMetric {
    #[default]
    SiSdr,
    Estoi,
}

impl fmt::Display for SelectMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectMetric::SiSdr => "si_sdr",
            SelectMetric::Estoi => "estoi",
        })
    }
}

impl FromStr for SelectMetric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "si_sdr" => Ok(SelectMetric::SiSdr),
            "estoi" => Ok(SelectMetric::Estoi),
            _ => Err(Error::Config(format!("unknown selection metric `{s}` (si_sdr or estoi)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub weights: LossWeights,
    pub optim: AdamWConfig,
    /// Learning-rate factor applied after every epoch.
    pub lr_decay: f64,
    pub batch_size: usize,
    /// Training crop in samples.
    pub crop: usize,
    pub steps: usize,
    /// Validate (and maybe checkpoint) every this many steps; 0 disables.
    pub eval_every: usize,
    pub seed: u64,
    pub select_metric: SelectMetric,
    /// Train the metric discriminator and use the adversarial term.
    pub adversarial: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            weights: LossWeights::default(),
            optim: AdamWConfig::default(),
            lr_decay: 0.99,
            batch_size: 4,
            crop: 2 * SAMPLE_RATE as usize,
            steps: 1000,
            eval_every: 100,
            seed: 0,
            select_metric: SelectMetric::SiSdr,
            adversarial: true,
        }
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

impl RunConfig {
    /// Set one key; model keys are forwarded to [`ModelConfig::set`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let w = &mut self.weights;
        match key {
            "w_time" => w.time = num(key, value)?,
            "w_mag" => w.mag = num(key, value)?,
            "w_complex" => w.complex = num(key, value)?,
            "w_phase" => w.phase = num(key, value)?,
            "w_consistency" => w.consistency = num(key, value)?,
            "w_adversarial" => w.adversarial = num(key, value)?,
            "lr" => self.optim.lr = num(key, value)?,
            "weight_decay" => self.optim.weight_decay = num(key, value)?,
            "beta1" => self.optim.beta1 = num(key, value)?,
            "beta2" => self.optim.beta2 = num(key, value)?,
            "lr_decay" => self.lr_decay = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "crop" => self.crop = num(key, value)?,
            "steps" => self.steps = num(key, value)?,
            "eval_every" => self.eval_every = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "select_metric" => self.select_metric = value.trim().parse()?,
            "adversarial" => self.adversarial = num(key, value)?,
            _ => {
                if !self.model.set(key, value)? {
                    return Err(Error::Config(format!("unknown key `{key}`")));
                }
            }
        }
        Ok(())
    }

    /// Apply `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", i + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c = Self::default();
        c.apply_text(&text)?;
        Ok(c)
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let w = &self.weights;
        let mut v: Vec<(String, String)> = vec![
            ("w_time", format!("{:?}", w.time)),
            ("w_mag", format!("{:?}", w.mag)),
            ("w_complex", format!("{:?}", w.complex)),
            ("w_phase", format!("{:?}", w.phase)),
            ("w_consistency", format!("{:?}", w.consistency)),
            ("w_adversarial", format!("{:?}", w.adversarial)),
            ("lr", format!("{:?}", self.optim.lr)),
            ("weight_decay", format!("{:?}", self.optim.weight_decay)),
            ("beta1", format!("{:?}", self.optim.beta1)),
            ("beta2", format!("{:?}", self.optim.beta2)),
            ("lr_decay", format!("{:?}", self.lr_decay)),
            ("batch_size", self.batch_size.to_string()),
            ("crop", self.crop.to_string()),
            ("steps", self.steps.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("seed", self.seed.to_string()),
            ("select_metric", self.select_metric.to_string()),
            ("adversarial", self.adversarial.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        v.extend(self.model.to_pairs().into_iter().map(|(k, v)| (k.to_string(), v)));
        v
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.weights.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.crop < self.model.stft.win_length {
            return Err(Error::Config(format!(
                "crop of {} samples is shorter than one window ({})",
                self.crop, self.model.stft.win_length
            )));
        }
        if !(self.optim.lr > 0.0) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config("lr must be positive and lr_decay in (0, 1]".into()));
        }
        Ok(())
    }
}

/// A clean/noisy pair of equal length.
#[derive(Clone, Debug, PartialEq)]
pub struct Pair {
    pub id: String,
    pub clean: Vec<f64>,
    pub noisy: Vec<f64>,
}

/// Random `crop`-sample windows of the selected pairs, zero-padded when a
/// pair is shorter, as `[M, crop]` clean and noisy batches.
pub fn crop_batch<R: Rng + ?Sized>(pairs: &[&Pair], crop: usize, rng: &mut R) -> Result<(Tensor, Tensor)> {
    let mut clean = vec![0.0; pairs.len() * crop];
    let mut noisy = vec![0.0; pairs.len() * crop];
    for (i, p) in pairs.iter().enumerate() {
        if p.clean.len() != p.noisy.len() {
            return Err(Error::shape(
                "batch",
                format!("{}: clean has {} samples, noisy {}", p.id, p.clean.len(), p.noisy.len()),
            ));
        }
        let n = p.clean.len().min(crop);
        let start = if p.clean.len() > crop { rng.random_range(0..=p.clean.len() - crop) } else { 0 };
        clean[i * crop..i * crop + n].copy_from_slice(&p.clean[start..start + n]);
        noisy[i * crop..i * crop + n].copy_from_slice(&p.noisy[start..start + n]);
    }
    let shape = vec![pairs.len(), crop];
    Ok((Tensor::new(shape.clone(), clean)?, Tensor::new(shape, noisy)?))
}

/// Losses of one step. `discriminator` is absent when adversarial training is off.
#[derive(Clone, Debug, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    pub generator: f64,
    pub discriminator: Option<f64>,
    /// time, mag, complex, phase, consistency, adversarial
    pub terms: [f64; 6],
}

impl fmt::Display for StepLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "step={} lr={:e} loss_g={:.6}", self.step, self.lr, self.generator)?;
        if let Some(d) = self.discriminator {
            write!(f, " loss_d={d:.6}")?;
        }
        let names = ["time", "mag", "complex", "phase", "consistency", "adversarial"];
        for (n, v) in names.iter().zip(&self.terms) {
            write!(f, " {n}={v:.6}")?;
        }
        Ok(())
    }
}

/// Floor under the squared magnitude before re-compressing a spectrum.
const MAG_EPS: f64 = 1e-10;

/// Compressed complex spectrum `|X|^c e^{j angle X}` of a batch of waveforms.
fn compressed_spectrum(g: &mut Graph, stft: &GraphStft, wave: Var, c: f64) -> Result<(Var, Var)> {
    let (re, im) = stft.forward(g, wave)?;
    let (r2, i2) = (g.square(re)?, g.square(im)?);
    let p = g.add(r2, i2)?;
    let p = g.add_scalar(p, MAG_EPS)?;
    let f = g.pow(p, (c - 1.0) / 2.0)?;
    Ok((g.mul(re, f)?, g.mul(im, f)?))
}

/// Clean-side constants of a batch.
struct Targets {
    wave: Var,
    mag_c: Var,
    phase: Var,
    re_c: Var,
    im_c: Var,
}

fn targets(g: &mut Graph, cfg: &ModelConfig, clean: &Tensor) -> Result<Targets> {
    let (mag_c, phase) = batch_features(cfg, clean)?;
    let re: Vec<f64> = mag_c.data().iter().zip(phase.data()).map(|(m, p)| m * p.cos()).collect();
    let im: Vec<f64> = mag_c.data().iter().zip(phase.data()).map(|(m, p)| m * p.sin()).collect();
    let shape = mag_c.shape().to_vec();
    Ok(Targets {
        wave: g.constant(clean.clone()),
        re_c: g.constant(Tensor::new(shape.clone(), re)?),
        im_c: g.constant(Tensor::new(shape, im)?),
        mag_c: g.constant(mag_c),
        phase: g.constant(phase),
    })
}

pub struct Trainer {
    pub config: RunConfig,
    pub model: Model,
    pub disc: DiscriminatorParams,
    gen_opt: AdamW,
    disc_opt: AdamW,
    quality: Box<dyn QualityOracle + Send + Sync>,
    pub rng: ChaCha8Rng,
    pub step: usize,
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let model = Model::new(config.model.clone(), config.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        let disc = DiscriminatorParams::new(&mut rng);
        Ok(Self {
            gen_opt: AdamW::new(config.optim),
            disc_opt: AdamW::new(config.optim),
            quality: Box::new(SiSdrQuality),
            config,
            model,
            disc,
            rng,
            step: 0,
        })
    }

    /// Replace the quality score the discriminator is trained to predict.
    pub fn with_quality(mut self, q: Box<dyn QualityOracle + Send + Sync>) -> Self {
        self.quality = q;
        self
    }

    pub fn lr(&self) -> f64 {
        self.gen_opt.config.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.gen_opt.set_lr(lr);
        self.disc_opt.set_lr(lr);
    }

    /// Quality targets of each batch row.
    fn quality_scores(&self, clean: &Tensor, enhanced: &[f64]) -> Vec<f64> {
        let len = clean.shape()[1];
        clean
            .data()
            .chunks(len)
            .zip(enhanced.chunks(len))
            // a silent reference has no defined quality; score it 0
            .map(|(c, e)| self.quality.score(c, e).unwrap_or(0.0).clamp(0.0, 1.0))
            .collect()
    }

    fn generator_terms(&self, g: &mut Graph, t: &Targets, out: &ForwardOutput) -> Result<GeneratorTerms> {
        let cfg = &self.model.config;
        let time = loss_time(g, t.wave, out.wave)?;
        let mag = loss_mag(g, t.mag_c, out.mag_c)?;
        let complex = loss_complex(g, (t.re_c, t.im_c), (out.re_c, out.im_c))?;
        let phase = loss_phase(g, t.phase, out.phase)?.total;
        let (re2, im2) = compressed_spectrum(g, self.model.graph_stft(), out.wave, cfg.compression)?;
        let consistency = loss_complex(g, (out.re_c, out.im_c), (re2, im2))?;
        let adversarial = if self.config.adversarial {
            let d = discriminator_forward(g, &self.disc, t.mag_c, out.mag_c)?;
            loss_adversarial_generator(g, d)?
        } else {
            g.constant(Tensor::scalar(0.0))
        };
        Ok(GeneratorTerms {
            time,
            mag,
            complex,
            phase,
            consistency,
            adversarial,
        })
    }

    /// Forward pass, loss terms and weighted generator total of a batch,
    /// recorded in `g`.
    pub fn generator_graph(
        &self,
        g: &mut Graph,
        clean: &Tensor,
        noisy: &Tensor,
    ) -> Result<(ForwardOutput, GeneratorTerms, Var)> {
        let out = self.model.forward(g, noisy)?;
        let t = targets(g, &self.model.config, clean)?;
        let terms = self.generator_terms(g, &t, &out)?;
        let total = generator_total(g, &terms, &self.config.weights)?;
        Ok((out, terms, total))
    }

    /// Generator loss and its terms on a batch, without updating anything.
    pub fn generator_loss(&self, clean: &Tensor, noisy: &Tensor) -> Result<(f64, [f64; 6])> {
        let mut g = Graph::new();
        let (_, terms, total) = self.generator_graph(&mut g, clean, noisy)?;
        Ok((g.value(total).item()?, terms.as_array().map(|v| g.value(v).item().unwrap_or(f64::NAN))))
    }

    /// One training step: a discriminator update on the detached enhanced
    /// spectra, then a generator update against the updated discriminator.
    pub fn train_step(&mut self, clean: &Tensor, noisy: &Tensor) -> Result<StepLog> {
        if clean.shape() != noisy.shape() || clean.ndim() != 2 {
            return Err(Error::shape(
                "train_step",
                format!("clean {:?} and noisy {:?} must both be [M, len]", clean.shape(), noisy.shape()),
            ));
        }
        self.step += 1;
        let mut g = Graph::new();
        let out = self.model.forward(&mut g, noisy)?;
        let t = targets(&mut g, &self.model.config, clean)?;

        let mut loss_d = None;
        if self.config.adversarial {
            let q = self.quality_scores(clean, g.value(out.wave).data());
            let mut gd = Graph::new();
            let reference = gd.constant(g.value(t.mag_c).clone());
            let enhanced = gd.constant(g.value(out.mag_c).clone());
            let d_clean = discriminator_forward(&mut gd, &self.disc, reference, reference)?;
            let d_enh = discriminator_forward(&mut gd, &self.disc, reference, enhanced)?;
            let l = loss_discriminator(&mut gd, d_clean, d_enh, &q)?;
            let v = gd.value(l).item()?;
            if !v.is_finite() {
                return Err(Error::Numerical(format!("step {}: discriminator loss is {v}", self.step)));
            }
            gd.backward(l)?;
            self.disc_opt.step(&mut self.disc.store, gd.param_grads());
            loss_d = Some(v);
        }

        let terms = self
            .generator_terms(&mut g, &t, &out)
            .map_err(|e| match e {
                Error::Numerical(m) => Error::Numerical(format!("step {}: {m}", self.step)),
                e => e,
            })?;
        let total = generator_total(&mut g, &terms, &self.config.weights)
            .map_err(|e| Error::Numerical(format!("step {}: {e}", self.step)))?;
        let loss_g = g.value(total).item()?;
        if !loss_g.is_finite() {
            return Err(Error::Numerical(format!("step {}: generator loss is {loss_g}", self.step)));
        }
        g.backward(total)?;
        let grads = g.param_grads();
        if let Some((id, _)) = grads.iter().find(|(_, gr)| gr.iter().any(|v| !v.is_finite())) {
            return Err(Error::Numerical(format!(
                "step {}: non-finite gradient for {}",
                self.step,
                self.model.store.name(*id)
            )));
        }
        self.gen_opt.step(&mut self.model.store, grads);
        Ok(StepLog {
            step: self.step,
            lr: self.lr(),
            generator: loss_g,
            discriminator: loss_d,
            terms: terms.as_array().map(|v| g.value(v).item().unwrap_or(f64::NAN)),
        })
    }

    /// Mean validation metric of the current model over full-length pairs.
    pub fn validate(&self, pairs: &[Pair]) -> Result<f64> {
        let scores = crate::parallel::map_slice(pairs, |p| -> Result<f64> {
            let e = self.model.enhance(&p.noisy)?;
            match self.config.select_metric {
                SelectMetric::SiSdr => si_sdr(&p.clean, &e),
                SelectMetric::Estoi => estoi(&p.clean, &e, SAMPLE_RATE),
            }
        });
        let scores = scores.into_iter().collect::<Result<Vec<_>>>()?;
        Ok(scores.iter().sum::<f64>() / scores.len().max(1) as f64)
    }

    /// Train for `config.steps` steps over `train`, shuffling each epoch and
    /// decaying the learning rate between epochs. Every `eval_every` steps
    /// (and at the end) the model is validated on `valid`; the best one is
    /// saved to `checkpoint` when given. Log lines are `key=value` records.
    pub fn fit(&mut self, train: &[Pair], valid: &[Pair], checkpoint: Option<&Path>, log: &mut dyn Write) -> Result<Option<f64>> {
        if train.is_empty() {
            return Err(Error::invalid("train", "no training pairs"));
        }
        let io = |e: std::io::Error| Error::io("<log>", e);
        writeln!(
            log,
            "event=start params={} variant={} steps={} train={} valid={}",
            self.model.param_count(),
            self.model.config.variant,
            self.config.steps,
            train.len(),
            valid.len()
        )
        .map_err(io)?;
        let mut order: Vec<usize> = Vec::new();
        let mut best: Option<f64> = None;
        let mut epoch = 0;
        for _ in 0..self.config.steps {
            if order.len() < self.config.batch_size {
                if !order.is_empty() || self.step > 0 {
                    epoch += 1;
                    let lr = self.lr() * self.config.lr_decay;
                    self.set_lr(lr);
                    writeln!(log, "event=epoch epoch={epoch} lr={lr:e}").map_err(io)?;
                }
                let mut fresh: Vec<usize> = (0..train.len()).collect();
                fresh.shuffle(&mut self.rng);
                order.extend(fresh);
            }
            let idx: Vec<usize> = order.drain(..self.config.batch_size.min(order.len())).collect();
            let pairs: Vec<&Pair> = idx.iter().map(|&i| &train[i]).collect();
            let (clean, noisy) = crop_batch(&pairs, self.config.crop, &mut self.rng)?;
            let s = self.train_step(&clean, &noisy)?;
            writeln!(log, "{s}").map_err(io)?;
            let last = self.step % self.config.steps.max(1) == 0;
            if !valid.is_empty() && ((self.config.eval_every > 0 && self.step % self.config.eval_every == 0) || last) {
                let v = self.validate(valid)?;
                let improved = best.is_none_or(|b| v > b);
                writeln!(
                    log,
                    "event=eval step={} {}={v:.6} best={}",
                    self.step, self.config.select_metric, improved
                )
                .map_err(io)?;
                if improved {
                    best = Some(v);
                    if let Some(p) = checkpoint {
                        save_checkpoint(&self.model, p)?;
                    }
                }
            }
        }
        if valid.is_empty() {
            if let Some(p) = checkpoint {
                save_checkpoint(&self.model, p)?;
            }
        }
        Ok(best)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_text_round_trip() {
        let mut c = RunConfig::default();
        c.apply_text("lr = 0.001  # faster\nchannels=16\n\nvariant = unshared\nselect_metric=estoi").unwrap();
        assert_eq!(c.optim.lr, 0.001);
        assert_eq!(c.model.channels, 16);
        assert_eq!(c.select_metric, SelectMetric::Estoi);
        let text: String = c.to_pairs().iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        let mut d = RunConfig::default();
        d.apply_text(&text).unwrap();
        assert_eq!(c, d);
        assert!(d.apply_text("nonsense = 1").is_err());
        assert!(d.apply_text("no equals sign").is_err());
    }

    #[test]
    fn crops_pad_short_pairs() {
        let p = Pair {
            id: "a".into(),
            clean: vec![1.0; 10],
            noisy: vec![2.0; 10],
        };
        let (c, n) = crop_batch(&[&p], 16, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(c.shape(), &[1, 16]);
        assert_eq!(&c.data()[8..12], &[1.0, 1.0, 0.0, 0.0]);
        assert_eq!(n.data()[0], 2.0);
    }
}
