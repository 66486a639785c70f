//! Losses with condition dropout, Adam, and the training loop shared by both
//! stages.

use ndarray::{s, Array2, Zip};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffusion::{q_sample, DiffusionSchedule};
use crate::error::{Error, Result};
use crate::neural::{DiffusionNet, Grads, Keep, Mat, ParamStore, Stage, Tape};
use crate::roll_codec::RollSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub steps: usize,
    pub cond_dropout_p: f64,
    pub crop_frames: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Steps between log lines; 0 disables logging.
    pub log_every: usize,
    /// Steps between checkpoint callbacks; 0 disables them.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            batch: 8,
            steps: 2000,
            cond_dropout_p: 0.1,
            crop_frames: 256,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            log_every: 50,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    /// Defaults for a stage: 256-frame crops for synthesis, 512 for bend.
    pub fn for_stage(stage: Stage) -> Self {
        TrainConfig {
            crop_frames: match stage {
                Stage::Synthesis => 256,
                Stage::Bend => 512,
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.cond_dropout_p) {
            return Err(Error::Config(format!(
                "cond_dropout_p must lie in [0, 1], got {}",
                self.cond_dropout_p
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch == 0 || self.crop_frames == 0 {
            return Err(Error::Config("batch and crop_frames must be at least 1".into()));
        }
        Ok(())
    }
}

/// One training sequence: rolls, the diffusion target (`C × T`, normalized
/// mel or bend roll) and the performer index.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub rolls: RollSet,
    pub target: Mat,
    pub performer: Option<usize>,
}

/// A fixed-length window of an item; frames past the item end are zero with
/// `valid = 0`.
#[derive(Debug, Clone)]
pub struct Crop {
    pub rolls: RollSet,
    pub target: Mat,
    /// `1 × len` validity per frame.
    pub valid: Mat,
    pub performer: Option<usize>,
    pub start: usize,
}

/// Crop of `len` frames starting at `start`.
pub fn crop_at(item: &TrainItem, start: usize, len: usize) -> Crop {
    let n = item.rolls.n_frames();
    let avail = n.saturating_sub(start).min(len);
    let mut target = Array2::zeros((item.target.nrows(), len));
    let mut valid = Array2::zeros((1, len));
    if avail > 0 {
        target
            .slice_mut(s![.., ..avail])
            .assign(&item.target.slice(s![.., start..start + avail]));
        valid.slice_mut(s![.., ..avail]).fill(1.0);
    }
    Crop {
        rolls: item.rolls.crop(start, len),
        target,
        valid,
        performer: item.performer,
        start,
    }
}

/// Crop with the start drawn uniformly over all offsets that keep it inside
/// the item (offset 0 when the item is shorter than `len`).
pub fn random_crop<R: Rng>(item: &TrainItem, len: usize, rng: &mut R) -> Crop {
    let n = item.rolls.n_frames();
    let start = if n > len { rng.random_range(0..=n - len) } else { 0 };
    crop_at(item, start, len)
}

/// Independent per-condition dropout; a dropped condition uses its null
/// embedding.
pub fn draw_keep<R: Rng>(p: f64, rng: &mut R) -> Keep {
    Keep {
        performer: !rng.random_bool(p),
        roll: !rng.random_bool(p),
        aux: !rng.random_bool(p),
    }
}

/// Loss terms averaged over the items that contributed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossReport {
    pub total: f64,
    pub eps: f64,
    pub aux: f64,
    /// Items that contributed (bend items with an empty mask are skipped).
    pub items: usize,
    /// Conditions used per contributing item.
    #[serde(skip)]
    pub kept: Vec<Keep>,
}

/// Per-item noise draw, fixed ahead of the forward pass.
#[derive(Debug, Clone)]
pub struct NoiseDraw {
    pub step: usize,
    pub eps: Mat,
    pub keep: Keep,
}

impl NoiseDraw {
    pub fn random<R: Rng>(channels: usize, frames: usize, s: &DiffusionSchedule, p_drop: f64, rng: &mut R) -> Self {
        let step = rng.random_range(0..s.n_steps());
        let eps = Array2::from_shape_simple_fn((channels, frames), || StandardNormal.sample(&mut *rng));
        let keep = draw_keep(p_drop, rng);
        NoiseDraw { step, eps, keep }
    }
}

fn add_grads(acc: &mut Grads, g: Grads) {
    for (a, g) in acc.iter_mut().zip(g) {
        match (a.as_mut(), g) {
            (Some(a), Some(g)) => *a += &g,
            (None, Some(g)) => *a = Some(g),
            _ => {}
        }
    }
}

fn scale_grads(g: &mut Grads, k: f64) {
    for m in g.iter_mut().flatten() {
        *m *= k;
    }
}

/// Masked MSE of noise prediction plus MSE of the auxiliary mel against the
/// clean target, unweighted, averaged over the batch. Both terms only count
/// valid frames.
pub fn synthesis_loss(net: &DiffusionNet, batch: &[Crop], draws: &[NoiseDraw], s: &DiffusionSchedule) -> Result<(LossReport, Grads)> {
    if net.stage != Stage::Synthesis {
        return Err(Error::InvalidInput("synthesis_loss needs a synthesis network".into()));
    }
    item_losses(net, batch, draws, s, |c| {
        let mask = Array2::from_shape_fn(c.target.dim(), |(_, t)| c.valid[[0, t]]);
        Some(mask)
    })
}

/// Noise MSE restricted to the frame roll (and valid frames); items whose
/// mask is empty are skipped. No auxiliary term.
pub fn bend_loss(net: &DiffusionNet, batch: &[Crop], draws: &[NoiseDraw], s: &DiffusionSchedule) -> Result<(LossReport, Grads)> {
    if net.stage != Stage::Bend {
        return Err(Error::InvalidInput("bend_loss needs a bend network".into()));
    }
    item_losses(net, batch, draws, s, |c| {
        let mask = Array2::from_shape_fn(c.target.dim(), |(p, t)| c.rolls.frame[[p, t]] * c.valid[[0, t]]);
        (mask.sum() > 0.0).then_some(mask)
    })
}

fn item_losses(
    net: &DiffusionNet,
    batch: &[Crop],
    draws: &[NoiseDraw],
    s: &DiffusionSchedule,
    mask_of: impl Fn(&Crop) -> Option<Mat>,
) -> Result<(LossReport, Grads)> {
    if batch.len() != draws.len() {
        return Err(Error::Dimension(format!(
            "{} crops but {} noise draws",
            batch.len(),
            draws.len()
        )));
    }
    let mut grads: Grads = vec![None; net.params.len()];
    let mut report = LossReport {
        total: 0.0,
        eps: 0.0,
        aux: 0.0,
        items: 0,
        kept: Vec::new(),
    };
    let mut per_item = Vec::new();
    for (crop, draw) in batch.iter().zip(draws) {
        net.check_rolls(&crop.rolls)?;
        net.check_performer(crop.performer)?;
        if crop.target.dim() != (net.channels(), crop.rolls.n_frames()) || draw.eps.dim() != crop.target.dim() {
            return Err(Error::Dimension(format!(
                "target {:?} does not match {} channels x {} frames",
                crop.target.dim(),
                net.channels(),
                crop.rolls.n_frames()
            )));
        }
        let Some(mask) = mask_of(crop) else { continue };
        // bend targets are noised only under the mask; mel targets everywhere
        let noise_mask = (net.stage == Stage::Bend).then_some(&mask);
        let x_t = q_sample(&crop.target, draw.step, &draw.eps, s, noise_mask)?;

        let mut tape = Tape::new(&net.params);
        let enc = net.encode(&mut tape, &crop.rolls);
        let cond = net.condition(&mut tape, enc, crop.performer, draw.keep);
        let x = tape.input(x_t.t().to_owned());
        let eps_hat = net.denoise(&mut tape, x, draw.step, &cond);
        let mask_t = mask.t().to_owned();
        let eps_loss = tape.mse(eps_hat, draw.eps.t().to_owned(), Some(mask_t.clone()));
        let mut parts = vec![eps_loss];
        let mut aux_val = 0.0;
        if let Some(aux) = enc.aux {
            let a = tape.mse(aux, crop.target.t().to_owned(), Some(mask_t));
            aux_val = tape.scalar(a);
            parts.push(a);
        }
        let loss = tape.sum(&parts);
        report.eps += tape.scalar(eps_loss);
        report.aux += aux_val;
        report.total += tape.scalar(loss);
        report.items += 1;
        report.kept.push(draw.keep);
        per_item.push(tape.backward(loss));
    }
    for g in per_item {
        add_grads(&mut grads, g);
    }
    if report.items > 0 {
        let k = 1.0 / report.items as f64;
        scale_grads(&mut grads, k);
        report.total *= k;
        report.eps *= k;
        report.aux *= k;
    }
    Ok((report, grads))
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Mat>,
    v: Vec<Mat>,
    t: u64,
}

impl Adam {
    pub fn new(params: &ParamStore, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Mat> = params.iter().map(|(_, _, v)| Array2::zeros(v.dim())).collect();
        Adam {
            beta1,
            beta2,
            eps,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Applies one update. Returns `false` (and changes nothing) when any
    /// gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Grads, lr: f64) -> bool {
        assert_eq!(grads.len(), params.len(), "gradient list does not match parameters");
        if grads.iter().flatten().any(|g| g.iter().any(|v| !v.is_finite())) {
            log::warn!("non-finite gradient, skipping optimizer step {}", self.t + 1);
            return false;
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let ids: Vec<_> = params.iter().map(|(id, _, _)| id).collect();
        for id in ids {
            let Some(g) = &grads[id.0] else { continue };
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
            Zip::from(params.value_mut(id))
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                });
        }
        true
    }
}

/// One optimizer step's record, also emitted as a JSON log line.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub eps_loss: f64,
    pub aux_loss: f64,
    pub items: usize,
    pub applied: bool,
    pub wall_s: f64,
}

/// Trains `net` in place. `on_checkpoint` runs every `checkpoint_every` steps
/// and after the final step.
pub fn train(
    net: &mut DiffusionNet,
    items: &[TrainItem],
    s: &DiffusionSchedule,
    cfg: &TrainConfig,
    mut on_checkpoint: impl FnMut(usize, &DiffusionNet) -> Result<()>,
) -> Result<Vec<StepRecord>> {
    cfg.validate()?;
    if items.is_empty() {
        return Err(Error::InvalidInput("no training items".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&net.params, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    let started = std::time::Instant::now();
    let mut records = Vec::with_capacity(cfg.steps);
    for step in 1..=cfg.steps {
        let picked: Vec<usize> = if items.len() <= cfg.batch {
            (0..items.len()).collect()
        } else {
            sample(&mut rng, items.len(), cfg.batch).into_vec()
        };
        let crops: Vec<Crop> = picked
            .iter()
            .map(|&i| random_crop(&items[i], cfg.crop_frames, &mut rng))
            .collect();
        let draws: Vec<NoiseDraw> = crops
            .iter()
            .map(|c| NoiseDraw::random(net.channels(), c.rolls.n_frames(), s, cfg.cond_dropout_p, &mut rng))
            .collect();
        let (report, grads) = match net.stage {
            Stage::Synthesis => synthesis_loss(net, &crops, &draws, s)?,
            Stage::Bend => bend_loss(net, &crops, &draws, s)?,
        };
        let applied = report.items > 0 && adam.step(&mut net.params, &grads, cfg.lr);
        let rec = StepRecord {
            step,
            loss: report.total,
            eps_loss: report.eps,
            aux_loss: report.aux,
            items: report.items,
            applied,
            wall_s: started.elapsed().as_secs_f64(),
        };
        if cfg.log_every > 0 && (step % cfg.log_every == 0 || step == 1) {
            log::info!("{}", serde_json::to_string(&rec)?);
        }
        records.push(rec);
        if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) || step == cfg.steps {
            on_checkpoint(step, net)?;
        }
    }
    Ok(records)
}

/// Fixed evaluation set: one crop from offset 0 and one seeded noise draw per
/// item, all conditions kept.
pub fn fixed_eval_set(net: &DiffusionNet, items: &[TrainItem], crop: usize, s: &DiffusionSchedule, draws_per_item: usize, seed: u64) -> (Vec<Crop>, Vec<NoiseDraw>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut crops = Vec::new();
    let mut draws = Vec::new();
    for item in items {
        for _ in 0..draws_per_item {
            let c = crop_at(item, 0, crop.min(item.rolls.n_frames()).max(1));
            let mut d = NoiseDraw::random(net.channels(), c.rolls.n_frames(), s, 0.0, &mut rng);
            d.keep = Keep::ALL;
            crops.push(c);
            draws.push(d);
        }
    }
    (crops, draws)
}

/// Stage loss on fixed crops and draws (no parameter update).
pub fn evaluate_loss(net: &DiffusionNet, crops: &[Crop], draws: &[NoiseDraw], s: &DiffusionSchedule) -> Result<LossReport> {
    Ok(match net.stage {
        Stage::Synthesis => synthesis_loss(net, crops, draws, s)?.0,
        Stage::Bend => bend_loss(net, crops, draws, s)?.0,
    })
}
