//! DDPM machinery shared by both stages: linear-β schedules, forward noising
//! with an optional keep-mask, guided ancestral sampling, and overlapped-window
//! sampling for sequences longer than the training window.
//!
//! Long-form sampling averages the per-window noise predictions over overlapping
//! frames at every reverse step and then applies one joint update to the whole
//! sequence, so neighbouring windows are denoised together rather than
//! crossfaded afterwards.

use std::collections::HashMap;
use std::ops::Range;

use ndarray::{s, Array2, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{CachedEncoding, DiffusionNet, Keep, Mat};
use crate::roll_codec::RollSet;

pub const BETA_START: f64 = 1e-4;
pub const BETA_END: f64 = 0.06;
pub const SYNTHESIS_STEPS: usize = 200;
pub const BEND_STEPS: usize = 100;
pub const SYNTHESIS_GUIDANCE: f64 = 1.25;
pub const BEND_GUIDANCE: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
}

impl DiffusionSchedule {
    /// Linear β from `beta_start` to `beta_end` over `n` steps.
    pub fn linear(n: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::Config(format!("diffusion needs at least 2 steps, got {n}")));
        }
        if !(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0) {
            return Err(Error::Config(format!(
                "beta range must satisfy 0 < start < end < 1, got {beta_start}..{beta_end}"
            )));
        }
        let beta: Vec<f64> = (0..n)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (n - 1) as f64)
            .collect();
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let alpha_bar = alpha
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(DiffusionSchedule { beta, alpha, alpha_bar })
    }

    pub fn synthesis() -> Self {
        Self::linear(SYNTHESIS_STEPS, BETA_START, BETA_END).expect("valid constants")
    }

    pub fn bend() -> Self {
        Self::linear(BEND_STEPS, BETA_START, BETA_END).expect("valid constants")
    }

    pub fn n_steps(&self) -> usize {
        self.beta.len()
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t >= self.n_steps() {
            return Err(Error::InvalidInput(format!(
                "diffusion step {t} out of range 0..{}",
                self.n_steps()
            )));
        }
        Ok(())
    }

    /// `(1 − ᾱ_{t−1}) / (1 − ᾱ_t) · β_t`, zero at `t = 0`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        if t == 0 {
            return 0.0;
        }
        (1.0 - self.alpha_bar[t - 1]) / (1.0 - self.alpha_bar[t]) * self.beta[t]
    }
}

/// Guidance weight; the dropped-condition set is always all conditions jointly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceSpec {
    pub weight: f64,
}

impl GuidanceSpec {
    pub fn new(weight: f64) -> Result<Self> {
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(Error::Config(format!("guidance weight must be finite and >= 0, got {weight}")));
        }
        Ok(GuidanceSpec { weight })
    }
}

/// Forward noising. Entries with `mask = 0` are returned unchanged.
pub fn q_sample(x0: &Mat, t: usize, eps: &Mat, s: &DiffusionSchedule, mask: Option<&Mat>) -> Result<Mat> {
    s.check_step(t)?;
    if x0.dim() != eps.dim() || mask.is_some_and(|m| m.dim() != x0.dim()) {
        return Err(Error::Dimension("q_sample operands differ in shape".into()));
    }
    let a = s.alpha_bar[t].sqrt();
    let b = (1.0 - s.alpha_bar[t]).sqrt();
    let mut out = Array2::zeros(x0.dim());
    match mask {
        Some(m) => Zip::from(&mut out)
            .and(x0)
            .and(eps)
            .and(m)
            .for_each(|o, &x, &e, &k| *o = if k == 0.0 { x } else { a * x + b * e }),
        None => Zip::from(&mut out).and(x0).and(eps).for_each(|o, &x, &e| *o = a * x + b * e),
    }
    Ok(out)
}

/// A noise predictor evaluated on frame windows of the full sequence.
pub trait Denoise {
    /// Channels of the diffused signal.
    fn channels(&self) -> usize;

    /// ε̂ for `x_t` (`C × range.len()`), the window `range` of the sequence.
    /// `conditioned = false` evaluates with every condition nulled.
    fn eps(&mut self, x_t: &Mat, step: usize, range: Range<usize>, conditioned: bool) -> Result<Mat>;
}

/// ε̂ = ε_null + w·(ε_cond − ε_null). `w = 1` and `w = 0` return the plain
/// conditional and unconditional predictions without recombination.
pub fn guided_eps<D: Denoise + ?Sized>(
    model: &mut D,
    x_t: &Mat,
    step: usize,
    range: Range<usize>,
    g: GuidanceSpec,
) -> Result<Mat> {
    let w = g.weight;
    if w == 1.0 {
        return model.eps(x_t, step, range, true);
    }
    if w == 0.0 {
        return model.eps(x_t, step, range, false);
    }
    let cond = model.eps(x_t, step, range.clone(), true)?;
    let null = model.eps(x_t, step, range, false)?;
    Ok(recombine(&cond, &null, w))
}

/// `null + w·(cond − null)` elementwise.
pub fn recombine(cond: &Mat, null: &Mat, w: f64) -> Mat {
    Zip::from(cond).and(null).map_collect(|&c, &n| n + w * (c - n))
}

/// Window starts tiling `[0, total)` with windows of `window` frames and
/// nominal `overlap`. Every frame is covered by one or two windows.
pub fn window_starts(total: usize, window: usize, overlap: usize) -> Result<Vec<usize>> {
    if window == 0 || overlap >= window {
        return Err(Error::Config(format!(
            "window {window} with overlap {overlap} cannot tile a sequence"
        )));
    }
    if total <= window {
        return Ok(vec![0]);
    }
    let span = total - window;
    let stride = window - overlap;
    let mut n = span.div_ceil(stride) + 1;
    // Evenly spread starts closer than half a window would cover some frames
    // three times.
    while n > 2 && 2 * span < window * (n - 1) {
        n -= 1;
    }
    Ok((0..n)
        .map(|i| ((i * span) as f64 / (n - 1) as f64).round() as usize)
        .collect())
}

/// Ancestral sampling over a sequence that fits in one window.
///
/// `mask = 0` entries are held at `init` (zero when absent) at every step;
/// the remaining entries start from standard normal noise.
pub fn p_sample<D: Denoise + ?Sized>(
    model: &mut D,
    n_frames: usize,
    s: &DiffusionSchedule,
    g: GuidanceSpec,
    seed: u64,
    mask: Option<&Mat>,
    init: Option<&Mat>,
) -> Result<Mat> {
    sample_windows(model, n_frames, &[0], n_frames, s, g, seed, mask, init)
}

/// Overlapped-window sampling of `n_frames` frames. Falls back to a single
/// window when `n_frames <= window`, which reproduces [`p_sample`] exactly.
#[allow(clippy::too_many_arguments)]
pub fn long_sample<D: Denoise + ?Sized>(
    model: &mut D,
    n_frames: usize,
    window: usize,
    overlap: usize,
    s: &DiffusionSchedule,
    g: GuidanceSpec,
    seed: u64,
    mask: Option<&Mat>,
    init: Option<&Mat>,
) -> Result<Mat> {
    if n_frames <= window {
        return p_sample(model, n_frames, s, g, seed, mask, init);
    }
    let starts = window_starts(n_frames, window, overlap)?;
    sample_windows(model, n_frames, &starts, window, s, g, seed, mask, init)
}

#[allow(clippy::too_many_arguments)]
fn sample_windows<D: Denoise + ?Sized>(
    model: &mut D,
    n_frames: usize,
    starts: &[usize],
    window: usize,
    s: &DiffusionSchedule,
    g: GuidanceSpec,
    seed: u64,
    mask: Option<&Mat>,
    init: Option<&Mat>,
) -> Result<Mat> {
    let shape = (model.channels(), n_frames);
    if n_frames == 0 {
        return Err(Error::InvalidInput("cannot sample zero frames".into()));
    }
    for (name, m) in [("mask", mask), ("init", init)] {
        if let Some(m) = m {
            if m.dim() != shape {
                return Err(Error::Dimension(format!(
                    "{name} is {:?}, expected {:?}",
                    m.dim(),
                    shape
                )));
            }
        }
    }
    let known = init.cloned().unwrap_or_else(|| Array2::zeros(shape));
    let free = |r: usize, c: usize| mask.is_none_or(|m| m[[r, c]] != 0.0);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| -> Mat {
        Array2::from_shape_simple_fn(shape, || StandardNormal.sample(rng))
    };
    let noise = draw(&mut rng);
    let mut x = Array2::from_shape_fn(shape, |(r, c)| if free(r, c) { noise[[r, c]] } else { known[[r, c]] });

    let mut coverage = vec![0u32; n_frames];
    for &st in starts {
        for c in &mut coverage[st..(st + window).min(n_frames)] {
            *c += 1;
        }
    }

    for t in (0..s.n_steps()).rev() {
        let mut eps = Array2::zeros(shape);
        for &st in starts {
            let end = (st + window).min(n_frames);
            let xw = x.slice(s![.., st..end]).to_owned();
            let e = guided_eps(model, &xw, t, st..end, g)?;
            eps.slice_mut(s![.., st..end]).zip_mut_with(&e, |a, b| *a += b);
        }
        if starts.len() > 1 {
            for (mut col, &c) in eps.columns_mut().into_iter().zip(&coverage) {
                col /= c as f64;
            }
        }

        let ab = s.alpha_bar[t];
        let ab_prev = if t > 0 { s.alpha_bar[t - 1] } else { 1.0 };
        let c0 = s.beta[t] * ab_prev.sqrt() / (1.0 - ab);
        let ct = (1.0 - ab_prev) * s.alpha[t].sqrt() / (1.0 - ab);
        let sigma = s.posterior_variance(t).sqrt();
        let z = if t > 0 { Some(draw(&mut rng)) } else { None };

        let mut next = Array2::zeros(shape);
        for ((r, c), out) in next.indexed_iter_mut() {
            if !free(r, c) {
                *out = known[[r, c]];
                continue;
            }
            let xt = x[[r, c]];
            let x0 = ((xt - (1.0 - ab).sqrt() * eps[[r, c]]) / ab.sqrt()).clamp(-1.0, 1.0);
            let mut v = c0 * x0 + ct * xt;
            if let Some(z) = &z {
                v += sigma * z[[r, c]];
            }
            *out = v;
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: t });
        }
        x = next;
    }
    Ok(x)
}

/// Adapts a [`DiffusionNet`] to [`Denoise`] over one conditioning sequence,
/// caching the encoder output per window.
pub struct NetDenoiser<'a> {
    net: &'a DiffusionNet,
    rolls: &'a RollSet,
    performer: Option<usize>,
    cache: HashMap<(usize, usize), CachedEncoding>,
}

impl<'a> NetDenoiser<'a> {
    pub fn new(net: &'a DiffusionNet, rolls: &'a RollSet, performer: Option<usize>) -> Result<Self> {
        net.check_rolls(rolls)?;
        net.check_performer(performer)?;
        Ok(NetDenoiser {
            net,
            rolls,
            performer,
            cache: HashMap::new(),
        })
    }
}

impl Denoise for NetDenoiser<'_> {
    fn channels(&self) -> usize {
        self.net.channels()
    }

    fn eps(&mut self, x_t: &Mat, step: usize, range: Range<usize>, conditioned: bool) -> Result<Mat> {
        let key = (range.start, range.len());
        if !self.cache.contains_key(&key) {
            let enc = self.net.encode_values(&self.rolls.crop(range.start, range.len()))?;
            self.cache.insert(key, enc);
        }
        self.net
            .predict_eps(x_t, step, &self.cache[&key], self.performer, Keep::all(conditioned))
    }
}
