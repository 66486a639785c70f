use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand::Rng;

use super::layers::{film, step_embedding, BiGru, Conv3, LayerNorm, Linear, TransformerBlock};
use super::params::{Builder, ParamId, ParamStore};
use super::tape::{Mat, Tape, Var};
use super::{ModelConfig, Stage};
use crate::error::{Error, Result};
use crate::roll_codec::RollSet;

/// Which conditions are kept (not replaced by their null embedding).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Keep {
    pub performer: bool,
    pub roll: bool,
    pub aux: bool,
}

impl Keep {
    pub const ALL: Keep = Keep {
        performer: true,
        roll: true,
        aux: true,
    };
    pub const NONE: Keep = Keep {
        performer: false,
        roll: false,
        aux: false,
    };

    pub fn all(conditioned: bool) -> Keep {
        if conditioned {
            Keep::ALL
        } else {
            Keep::NONE
        }
    }
}

/// Roll encoder: one BiGRU per input roll, summed, then transformer blocks.
#[derive(Debug, Clone)]
pub struct Encoder {
    grus: Vec<BiGru>,
    proj: Option<Linear>,
    blocks: Vec<TransformerBlock>,
    ln_out: LayerNorm,
    aux_head: Option<Linear>,
    use_bend: bool,
}

/// Encoder outputs on a tape.
#[derive(Debug, Clone, Copy)]
pub struct Encoded {
    /// `T × D`
    pub e_r: Var,
    /// `T × F`, synthesis stage only.
    pub aux: Option<Var>,
}

impl Encoder {
    fn new<R: Rng>(b: &mut Builder<R>, cfg: &ModelConfig, stage: Stage) -> Self {
        let use_bend = stage == Stage::Synthesis && !cfg.no_bend;
        let n_rolls = if use_bend { 4 } else { 3 };
        b.scoped("enc", |b| {
            let grus = (0..n_rolls)
                .map(|i| BiGru::new(b, &format!("gru{i}"), cfg.n_pitches, cfg.gru_hidden, cfg.gru_layers))
                .collect();
            let proj = (2 * cfg.gru_hidden != cfg.d_model)
                .then(|| Linear::new(b, "proj", 2 * cfg.gru_hidden, cfg.d_model));
            let blocks = (0..cfg.transformer_layers)
                .map(|l| TransformerBlock::new(b, &format!("tf{l}"), cfg.d_model, cfg.attention_heads, cfg.ffn_hidden))
                .collect();
            let ln_out = LayerNorm::new(b, "ln_out", cfg.d_model);
            let aux_head = (stage == Stage::Synthesis).then(|| Linear::new(b, "aux", cfg.d_model, cfg.n_mels));
            Encoder {
                grus,
                proj,
                blocks,
                ln_out,
                aux_head,
                use_bend,
            }
        })
    }

    pub fn forward(&self, tape: &mut Tape, rolls: &RollSet) -> Encoded {
        let mut inputs = vec![&rolls.frame, &rolls.onset, &rolls.offset];
        if self.use_bend {
            inputs.push(&rolls.bend);
        }
        let mut acc: Option<Var> = None;
        for (gru, roll) in self.grus.iter().zip(inputs) {
            let x = tape.input(roll.t().to_owned());
            let h = gru.forward(tape, x);
            acc = Some(match acc {
                Some(a) => tape.add(a, h),
                None => h,
            });
        }
        let mut h = acc.expect("at least one roll");
        if let Some(p) = &self.proj {
            h = p.forward(tape, h);
        }
        for blk in &self.blocks {
            h = blk.forward(tape, h);
        }
        let e_r = self.ln_out.forward(tape, h);
        let aux = self.aux_head.as_ref().map(|a| a.forward(tape, e_r));
        Encoded { e_r, aux }
    }
}

#[derive(Debug, Clone)]
struct ResidualBlock {
    t_proj: Linear,
    conv: Conv3,
    cond: Linear,
    film_g: Linear,
    film_b: Linear,
    out: Linear,
}

/// Non-causal dilation-free WaveNet-style denoiser over `T × C` frames.
///
/// The input and skip projections are linear: a rectifier there discards half
/// of each noise channel, which the output head then cannot recover.
#[derive(Debug, Clone)]
pub struct Denoiser {
    step1: Linear,
    step2: Linear,
    t_in: Linear,
    aux_g: Option<Linear>,
    aux_b: Option<Linear>,
    in_proj: Linear,
    blocks: Vec<ResidualBlock>,
    skip_proj: Linear,
    out_proj: Linear,
    d_model: usize,
    residual: usize,
}

impl Denoiser {
    fn new<R: Rng>(b: &mut Builder<R>, cfg: &ModelConfig, stage: Stage) -> Self {
        let d = cfg.d_model;
        let c = cfg.channels(stage);
        let r = cfg.residual_channels;
        b.scoped("den", |b| {
            let (aux_g, aux_b) = if stage == Stage::Synthesis {
                (
                    Some(Linear::with_bias(b, "aux_g", cfg.n_mels, c, 0.01, 1.0)),
                    Some(Linear::with_bias(b, "aux_b", cfg.n_mels, c, 0.01, 0.0)),
                )
            } else {
                (None, None)
            };
            let blocks = (0..cfg.residual_layers)
                .map(|l| {
                    b.scoped(&format!("res{l}"), |b| ResidualBlock {
                        t_proj: Linear::new(b, "t", d, r),
                        conv: Conv3::new(b, "conv", r, 2 * r),
                        cond: Linear::new(b, "cond", d, 2 * r),
                        film_g: Linear::with_bias(b, "film_g", d, 2 * r, 0.01, 1.0),
                        film_b: Linear::with_bias(b, "film_b", d, 2 * r, 0.01, 0.0),
                        out: Linear::new(b, "out", r, 2 * r),
                    })
                })
                .collect();
            Denoiser {
                step1: Linear::new(b, "step1", d, 4 * d),
                step2: Linear::new(b, "step2", 4 * d, d),
                t_in: Linear::new(b, "t_in", d, c),
                aux_g,
                aux_b,
                in_proj: Linear::new(b, "in", c, r),
                blocks,
                skip_proj: Linear::new(b, "skip", r, r),
                out_proj: Linear::zeros(b, "out", r, c),
                d_model: d,
                residual: r,
            }
        })
    }

    /// Predicts the noise in `x_t` (`T × C`).
    pub fn forward(&self, tape: &mut Tape, x_t: Var, step: usize, cond: &Conditioning) -> Var {
        let e = tape.input(step_embedding(step, self.d_model));
        let e = self.step1.forward(tape, e);
        let e = tape.gelu(e);
        let e_t = self.step2.forward(tape, e);

        let f = self.t_in.forward(tape, e_t);
        let mut x = tape.add_row(x_t, f);
        if let (Some(g), Some(b), Some(aux)) = (&self.aux_g, &self.aux_b, cond.aux) {
            let gamma = g.forward(tape, aux);
            let beta = b.forward(tape, aux);
            x = film(tape, x, gamma, beta);
        }
        let mut h = self.in_proj.forward(tape, x);

        let r = self.residual;
        let mut skips = Vec::with_capacity(self.blocks.len());
        for blk in &self.blocks {
            let tp = blk.t_proj.forward(tape, e_t);
            let y = tape.add_row(h, tp);
            let y = blk.conv.forward(tape, y);
            let c = blk.cond.forward(tape, cond.e_r);
            let y = tape.add(y, c);
            let gamma = blk.film_g.forward(tape, cond.e_p);
            let beta = blk.film_b.forward(tape, cond.e_p);
            let y = film(tape, y, gamma, beta);
            let gate = tape.slice_cols(y, 0, r);
            let filt = tape.slice_cols(y, r, 2 * r);
            let gate = tape.sigmoid(gate);
            let filt = tape.tanh(filt);
            let z = tape.mul(gate, filt);
            let z = blk.out.forward(tape, z);
            let res = tape.slice_cols(z, 0, r);
            let skip = tape.slice_cols(z, r, 2 * r);
            let sum = tape.add(h, res);
            h = tape.scale(sum, std::f64::consts::FRAC_1_SQRT_2);
            skips.push(skip);
        }
        let mut s = skips[0];
        for &k in &skips[1..] {
            s = tape.add(s, k);
        }
        let s = tape.scale(s, 1.0 / (skips.len() as f64).sqrt());
        let s = self.skip_proj.forward(tape, s);
        self.out_proj.forward(tape, s)
    }
}

/// Conditioning actually fed to the denoiser, after null substitution.
#[derive(Debug, Clone, Copy)]
pub struct Conditioning {
    /// `T × D`
    pub e_r: Var,
    /// `1 × D`
    pub e_p: Var,
    /// `T × F`
    pub aux: Option<Var>,
}

/// Encoder outputs detached from any tape, for repeated sampling calls.
#[derive(Debug, Clone, PartialEq)]
pub struct CachedEncoding {
    pub e_r: Mat,
    pub aux: Option<Mat>,
}

/// Encoder, denoiser, performer table and null embeddings for one stage.
#[derive(Debug, Clone)]
pub struct DiffusionNet {
    pub cfg: ModelConfig,
    pub stage: Stage,
    pub params: ParamStore,
    encoder: Encoder,
    denoiser: Denoiser,
    performers: ParamId,
    null_performer: ParamId,
    null_roll: ParamId,
    null_aux: Option<ParamId>,
}

impl DiffusionNet {
    pub fn new(cfg: &ModelConfig, stage: Stage) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        let mut b = Builder::new(&mut params, &mut rng);
        let encoder = Encoder::new(&mut b, cfg, stage);
        let denoiser = Denoiser::new(&mut b, cfg, stage);
        let performers = b.normal("performers", cfg.n_performers, cfg.d_model, 1.0);
        let null_performer = b.normal("null.performer", 1, cfg.d_model, 1.0);
        let null_roll = b.normal("null.roll", 1, cfg.d_model, 1.0);
        let null_aux = (stage == Stage::Synthesis).then(|| b.constant("null.aux", 1, cfg.n_mels, 0.0));
        Ok(DiffusionNet {
            cfg: cfg.clone(),
            stage,
            params,
            encoder,
            denoiser,
            performers,
            null_performer,
            null_roll,
            null_aux,
        })
    }

    pub fn channels(&self) -> usize {
        self.cfg.channels(self.stage)
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn check_rolls(&self, rolls: &RollSet) -> Result<()> {
        if rolls.frame.nrows() != self.cfg.n_pitches {
            return Err(Error::Dimension(format!(
                "rolls have {} pitch rows, model expects {}",
                rolls.frame.nrows(),
                self.cfg.n_pitches
            )));
        }
        if rolls.n_frames() == 0 {
            return Err(Error::InvalidInput("rolls have no frames".into()));
        }
        Ok(())
    }

    pub fn check_performer(&self, performer: Option<usize>) -> Result<()> {
        match performer {
            Some(p) if p >= self.cfg.n_performers => Err(Error::InvalidInput(format!(
                "performer index {p} out of range for {} performers",
                self.cfg.n_performers
            ))),
            _ => Ok(()),
        }
    }

    pub fn encode(&self, tape: &mut Tape, rolls: &RollSet) -> Encoded {
        self.encoder.forward(tape, rolls)
    }

    /// Encodes without keeping a tape around.
    pub fn encode_values(&self, rolls: &RollSet) -> Result<CachedEncoding> {
        self.check_rolls(rolls)?;
        let mut tape = Tape::new(&self.params);
        let enc = self.encode(&mut tape, rolls);
        Ok(CachedEncoding {
            e_r: tape.value(enc.e_r).clone(),
            aux: enc.aux.map(|a| tape.value(a).clone()),
        })
    }

    /// Substitutes null embeddings for dropped conditions. A missing performer
    /// always uses the null embedding.
    pub fn condition(&self, tape: &mut Tape, enc: Encoded, performer: Option<usize>, keep: Keep) -> Conditioning {
        let n_frames = tape.shape(enc.e_r).0;
        let e_p = match performer {
            Some(p) if keep.performer => {
                let mut one_hot = Array2::zeros((1, self.cfg.n_performers));
                one_hot[[0, p]] = 1.0;
                let sel = tape.input(one_hot);
                let table = tape.param(self.performers);
                tape.matmul(sel, table)
            }
            _ => tape.param(self.null_performer),
        };
        let e_r = if keep.roll {
            enc.e_r
        } else {
            let n = tape.param(self.null_roll);
            tape.broadcast_rows(n, n_frames)
        };
        let aux = match (enc.aux, self.null_aux) {
            (Some(a), _) if keep.aux => Some(a),
            (Some(_), Some(null)) => {
                let n = tape.param(null);
                Some(tape.broadcast_rows(n, n_frames))
            }
            _ => None,
        };
        Conditioning { e_r, e_p, aux }
    }

    /// Noise prediction for `x_t` (`T × C`).
    pub fn denoise(&self, tape: &mut Tape, x_t: Var, step: usize, cond: &Conditioning) -> Var {
        self.denoiser.forward(tape, x_t, step, cond)
    }

    /// Noise prediction for a channel-major window `x_t` (`C × W`) given a
    /// cached encoding of the same `W` frames.
    pub fn predict_eps(
        &self,
        x_t: &Mat,
        step: usize,
        enc: &CachedEncoding,
        performer: Option<usize>,
        keep: Keep,
    ) -> Result<Mat> {
        let (c, w) = x_t.dim();
        if c != self.channels() || enc.e_r.nrows() != w {
            return Err(Error::Dimension(format!(
                "x_t is {c}x{w}, expected {}x{}",
                self.channels(),
                enc.e_r.nrows()
            )));
        }
        self.check_performer(performer)?;
        let mut tape = Tape::new(&self.params);
        let e_r = tape.input(enc.e_r.clone());
        let aux = enc.aux.clone().map(|a| tape.input(a));
        let cond = self.condition(&mut tape, Encoded { e_r, aux }, performer, keep);
        let x = tape.input(x_t.t().to_owned());
        let eps = self.denoise(&mut tape, x, step, &cond);
        Ok(tape.value(eps).t().to_owned())
    }
}
