//! The pipeline commands as library functions. Each one reads and writes
//! files only, so commands compose through the file system.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use violindiff::config::PipelineConfig;
use violindiff::diffusion::{long_sample, NetDenoiser};
use violindiff::dsp::{read_wav_file, write_wav_file, AudioClip, MelNorm, MelProcessor, MelSpec};
use violindiff::evaluation::{
    embed_clip, extract_f0_with, fad_suite, perf_mae, vibrato_f1, vibrato_value, FadReport, Grouping, LabelPair,
    SharedNote, TaggedEmbedding, VibratoLabel,
};
use violindiff::midi_io::{parse_smf, NoteEvent, Performance};
use violindiff::neural::{DiffusionNet, Mat, Stage};
use violindiff::roll_codec::{encode_rolls, note_f0, FrameGrid, RollSet, N_PITCHES};
use violindiff::synth_data::{gen_corpus, write_corpus, Manifest, ManifestItem, RELEASE_TAIL_S};
use violindiff::tensor_file::{
    load_checkpoint, rolls_from_tensor, rolls_to_tensor, save_checkpoint, CheckpointMeta, TensorFile,
};
use violindiff::training::{train, StepRecord, TrainItem};
use violindiff::{Error, Result};

/// Suffix of stage-1 bend tensors next to generated audio.
pub const BEND_SUFFIX: &str = ".bend.vdt";

/// Frame grid for a performance: the rendered length (last offset plus the
/// release tail) in whole hops.
pub fn grid_for(p: &Performance, cfg: &PipelineConfig) -> FrameGrid {
    let sr = cfg.mel.sample_rate;
    let samples = ((p.end_time() + RELEASE_TAIL_S) * sr as f64).ceil() as usize;
    FrameGrid::new(sr, cfg.mel.hop, samples.div_ceil(cfg.mel.hop).max(1))
}

pub fn read_midi(path: &Path) -> Result<Performance> {
    let p = parse_smf(&fs::read(path)?)?;
    for w in &p.warnings {
        log::warn!("{}: {w:?}", path.display());
    }
    Ok(p)
}

pub fn gen_data(cfg: &PipelineConfig, out_dir: &Path) -> Result<Manifest> {
    let mut corpus_cfg = cfg.corpus.clone();
    corpus_cfg.seed = cfg.seed;
    let corpus = gen_corpus(&corpus_cfg)?;
    let manifest = write_corpus(&corpus, out_dir)?;
    log::info!("wrote {} renditions to {}", manifest.items.len(), out_dir.display());
    Ok(manifest)
}

pub fn encode(cfg: &PipelineConfig, midi_in: &Path, rolls_out: &Path) -> Result<RollSet> {
    let p = read_midi(midi_in)?;
    let rolls = encode_rolls(&p, grid_for(&p, cfg));
    rolls_to_tensor(&rolls).save(rolls_out)?;
    Ok(rolls)
}

pub fn load_rolls(cfg: &PipelineConfig, path: &Path) -> Result<RollSet> {
    rolls_from_tensor(&TensorFile::load(path)?, cfg.mel.sample_rate, cfg.mel.hop)
}

/// One corpus rendition prepared for training.
pub struct PreparedItem {
    pub meta: ManifestItem,
    pub performance: Performance,
    pub rolls: RollSet,
    pub mel: MelSpec,
}

pub fn prepare_corpus(cfg: &PipelineConfig, data_dir: &Path) -> Result<(Manifest, Vec<PreparedItem>)> {
    let manifest = Manifest::load(data_dir)?;
    if manifest.items.is_empty() {
        return Err(Error::InvalidInput(format!("{} lists no renditions", data_dir.display())));
    }
    let proc = MelProcessor::new(cfg.mel);
    let mut items = Vec::with_capacity(manifest.items.len());
    for meta in &manifest.items {
        let performance = read_midi(&data_dir.join(&meta.midi))?;
        let audio = read_wav_file(data_dir.join(&meta.wav))?;
        let mel = proc.mel_spectrogram(&audio)?;
        let rolls = encode_rolls(&performance, mel.grid);
        items.push(PreparedItem {
            meta: meta.clone(),
            performance,
            rolls,
            mel,
        });
    }
    Ok((manifest, items))
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Train the synthesis stage without the bend roll.
    pub no_bend: bool,
    pub steps: Option<usize>,
}

pub fn train_stage(
    cfg: &PipelineConfig,
    stage: Stage,
    data_dir: &Path,
    ckpt_out: &Path,
    opts: &TrainOptions,
) -> Result<Vec<StepRecord>> {
    let (manifest, prepared) = prepare_corpus(cfg, data_dir)?;
    let sc = cfg.stage(stage);
    let mut model = sc.model.clone();
    model.n_performers = manifest.performers.len().max(1);
    model.no_bend = stage == Stage::Synthesis && (opts.no_bend || model.no_bend);
    let mut tcfg = sc.train.clone();
    tcfg.seed = cfg.seed;
    if let Some(s) = opts.steps {
        tcfg.steps = s;
    }
    let norm = MelNorm::fit(prepared.iter().map(|p| &p.mel));
    let items: Vec<TrainItem> = prepared
        .into_iter()
        .map(|p| TrainItem {
            target: match stage {
                Stage::Synthesis => norm.normalize(&p.mel.values),
                Stage::Bend => p.rolls.bend.clone(),
            },
            rolls: p.rolls,
            performer: Some(p.meta.performer_index),
        })
        .collect();
    let schedule = sc.diffusion.schedule()?;
    let mut net = DiffusionNet::new(&model, stage)?;
    let meta = CheckpointMeta {
        stage,
        model: model.clone(),
        performers: manifest.performer_ids(),
        mel_norm: (stage == Stage::Synthesis).then_some(norm),
        step: 0,
        tensors: Vec::new(),
    };
    let records = train(&mut net, &items, &schedule, &tcfg, |step, net| {
        save_checkpoint(ckpt_out, net, CheckpointMeta { step, ..meta.clone() })
    })?;
    let log_path = with_suffix(ckpt_out, ".log.jsonl");
    let mut lines = String::new();
    for r in &records {
        lines.push_str(&serde_json::to_string(r)?);
        lines.push('\n');
    }
    fs::write(log_path, lines)?;
    Ok(records)
}

fn with_suffix(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn performer_index(meta: &CheckpointMeta, id: Option<&str>) -> Result<Option<usize>> {
    match id {
        None => Ok(None),
        Some(id) => meta.performers.iter().position(|p| p == id).map(Some).ok_or_else(|| {
            Error::InvalidInput(format!("unknown performer {id:?}; known: {:?}", meta.performers))
        }),
    }
}

fn expect_stage(meta: &CheckpointMeta, stage: Stage, path: &Path) -> Result<()> {
    if meta.stage != stage {
        return Err(Error::InvalidInput(format!(
            "{} holds a {:?} model, expected {:?}",
            path.display(),
            meta.stage,
            stage
        )));
    }
    Ok(())
}

/// Stage-1 sampling of the bend roll on the frame-roll support. The result is
/// clamped to the open interval and rounded through the tensor format, so it
/// equals what a round trip through a bend file yields.
pub fn sample_bend(cfg: &PipelineConfig, net: &DiffusionNet, meta: &CheckpointMeta, rolls: &RollSet, performer: Option<&str>, seed: u64) -> Result<Mat> {
    let performer = performer_index(meta, performer)?;
    let mut cond = rolls.clone();
    cond.bend.fill(0.0);
    let mask = cond.frame.clone();
    let n = cond.n_frames();
    if mask.iter().all(|&m| m == 0.0) {
        return Ok(Mat::zeros((N_PITCHES, n)));
    }
    let sc = &cfg.bend;
    let mut den = NetDenoiser::new(net, &cond, performer)?;
    let raw = long_sample(
        &mut den,
        n,
        sc.train.crop_frames,
        cfg.sampling.overlap_frames.min(sc.train.crop_frames - 1),
        &sc.diffusion.schedule()?,
        sc.diffusion.guidance()?,
        seed,
        Some(&mask),
        None,
    )?;
    let lim = 1.0 - cfg.sampling.bend_clamp_eps;
    let clamped = raw.mapv(|v| v.clamp(-lim, lim));
    TensorFile::from_mat(&clamped).to_mat()
}

pub fn estimate_bend(cfg: &PipelineConfig, ckpt: &Path, midi_in: &Path, bend_out: &Path, performer: Option<&str>) -> Result<Mat> {
    let (net, meta) = load_checkpoint(ckpt)?;
    expect_stage(&meta, Stage::Bend, ckpt)?;
    let p = read_midi(midi_in)?;
    let rolls = encode_rolls(&p, grid_for(&p, cfg));
    let bend = sample_bend(cfg, &net, &meta, &rolls, performer, cfg.seed)?;
    TensorFile::from_mat(&bend).save(bend_out)?;
    Ok(bend)
}

/// Where stage 2 takes its bend roll from.
#[derive(Debug, Clone, PartialEq)]
pub enum BendSource {
    /// Bend events written in the input MIDI.
    Midi,
    /// A bend tensor file as written by `estimate-bend`.
    File(PathBuf),
    /// Run stage 1 in-process with this bend checkpoint.
    Stage1(PathBuf),
    /// NoBend baseline: the bend roll is withheld.
    Withheld,
}

pub fn load_bend(path: &Path, n_frames: usize) -> Result<Mat> {
    let m = TensorFile::load(path)?.to_mat()?;
    if m.dim() != (N_PITCHES, n_frames) {
        return Err(Error::Dimension(format!(
            "bend roll {} is {:?}, expected ({N_PITCHES}, {n_frames})",
            path.display(),
            m.dim()
        )));
    }
    Ok(m)
}

pub fn synthesize(
    cfg: &PipelineConfig,
    ckpt: &Path,
    midi_in: &Path,
    performer_id: &str,
    wav_out: &Path,
    source: &BendSource,
) -> Result<AudioClip> {
    let (net, meta) = load_checkpoint(ckpt)?;
    expect_stage(&meta, Stage::Synthesis, ckpt)?;
    let performer = performer_index(&meta, Some(performer_id))?;
    let p = read_midi(midi_in)?;
    let mut rolls = encode_rolls(&p, grid_for(&p, cfg));
    let n = rolls.n_frames();
    match source {
        BendSource::Midi => {}
        BendSource::File(path) => rolls.bend = load_bend(path, n)?,
        BendSource::Stage1(bend_ckpt) => {
            let (bnet, bmeta) = load_checkpoint(bend_ckpt)?;
            expect_stage(&bmeta, Stage::Bend, bend_ckpt)?;
            rolls.bend = sample_bend(cfg, &bnet, &bmeta, &rolls, Some(performer_id), cfg.seed)?;
        }
        BendSource::Withheld => rolls.bend.fill(0.0),
    }
    if net.cfg.no_bend {
        rolls.bend.fill(0.0);
    }
    let norm = meta
        .mel_norm
        .ok_or_else(|| Error::InvalidInput(format!("{} has no mel normalization", ckpt.display())))?;
    let sc = &cfg.synthesis;
    let mut den = NetDenoiser::new(&net, &rolls, performer)?;
    let x = long_sample(
        &mut den,
        n,
        cfg.sampling.window_frames,
        cfg.sampling.overlap_frames,
        &sc.diffusion.schedule()?,
        sc.diffusion.guidance()?,
        cfg.seed,
        None,
        None,
    )?;
    let mel = MelSpec {
        values: norm.denormalize(&x),
        grid: rolls.grid,
    };
    let mut audio = MelProcessor::new(cfg.mel).griffin_lim(&mel, cfg.sampling.griffin_lim_iters, cfg.seed);
    let peak = audio.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 1.0 {
        audio.samples.iter_mut().for_each(|v| *v /= peak);
    }
    write_wav_file(wav_out, &audio)?;
    Ok(audio)
}

/// How predicted vibrato labels are obtained from generated material.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VibratoSource {
    /// F0 tracked from the generated audio; ground truth tracked from the
    /// reference audio.
    Audio,
    /// F0 decoded from the generated bend roll; ground truth decoded from the
    /// reference MIDI's bend roll.
    Bend,
    /// `Bend` when every generated clip has a bend tensor, else `Audio`.
    Auto,
}

impl std::str::FromStr for VibratoSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "audio" => Ok(VibratoSource::Audio),
            "bend" => Ok(VibratoSource::Bend),
            "auto" => Ok(VibratoSource::Auto),
            other => Err(Error::InvalidInput(format!("unknown vibrato source {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoteRecord {
    pub piece: String,
    pub performer: String,
    pub score_index: usize,
    pub gt: VibratoLabel,
    pub pred: VibratoLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_reference: usize,
    pub n_generated: usize,
    pub vibrato_source: VibratoSource,
    pub fad_all: FadReport,
    pub fad_performer: FadReport,
    pub fad_piece: FadReport,
    pub vibrato_f1: f64,
    pub perf_mae: f64,
    pub n_notes: usize,
    pub n_shared_notes: usize,
    pub notes: Vec<NoteRecord>,
}

impl EvalReport {
    /// Per-note labels as CSV.
    pub fn notes_csv(&self) -> String {
        let mut s = String::from("piece,performer,score_index,gt_present,gt_rate_hz,gt_extent_cents,pred_present,pred_rate_hz,pred_extent_cents\n");
        for n in &self.notes {
            s.push_str(&format!(
                "{},{},{},{},{:.4},{:.4},{},{:.4},{:.4}\n",
                n.piece,
                n.performer,
                n.score_index,
                n.gt.present,
                n.gt.rate_hz,
                n.gt.extent_cents,
                n.pred.present,
                n.pred.rate_hz,
                n.pred.extent_cents
            ));
        }
        s
    }
}

fn stem(meta: &ManifestItem) -> String {
    meta.wav.trim_end_matches(".wav").to_string()
}

fn labels_from_track(cfg: &PipelineConfig, audio: &AudioClip, meta: &ManifestItem) -> Vec<Option<VibratoLabel>> {
    let track = extract_f0_with(audio, &cfg.yin);
    let frame_rate = cfg.mel.sample_rate as f64 / cfg.mel.hop as f64;
    meta.notes
        .iter()
        .map(|a| {
            if a.polyphonic {
                return None;
            }
            let range = track.grid.frames_overlapping(a.onset_s, a.offset_s);
            vibrato_value(track.segment(range), frame_rate, a.score_index, &cfg.vibrato)
        })
        .collect()
}

fn labels_from_bend(cfg: &PipelineConfig, rolls: &RollSet, meta: &ManifestItem) -> Vec<Option<VibratoLabel>> {
    let frame_rate = rolls.grid.sample_rate as f64 / rolls.grid.hop as f64;
    meta.notes
        .iter()
        .map(|a| {
            if a.polyphonic {
                return None;
            }
            let f0 = note_f0(rolls, &NoteEvent::new(a.pitch, a.onset_s, a.offset_s), cfg.bend_range_semitones);
            vibrato_value(&f0, frame_rate, a.score_index, &cfg.vibrato)
        })
        .collect()
}

/// FAD under all three groupings plus vibrato F1 and Perf-MAE. Generated
/// clips are matched to corpus renditions by file stem.
pub fn evaluate(
    cfg: &PipelineConfig,
    corpus_dir: &Path,
    generated_dir: &Path,
    report_out: &Path,
    source: VibratoSource,
) -> Result<EvalReport> {
    let manifest = Manifest::load(corpus_dir)?;
    let proc = MelProcessor::new(cfg.mel);
    let mut reference = Vec::new();
    let mut generated = Vec::new();
    let mut pairs: Vec<(ManifestItem, Performance, AudioClip, AudioClip, Option<PathBuf>)> = Vec::new();
    for meta in &manifest.items {
        let ref_audio = read_wav_file(corpus_dir.join(&meta.wav))?;
        reference.push(TaggedEmbedding {
            performer: meta.performer.clone(),
            piece: meta.piece.clone(),
            embedding: embed_clip(&proc, &ref_audio)?,
        });
        let gen_path = generated_dir.join(&meta.wav);
        if !gen_path.exists() {
            continue;
        }
        let gen_audio = read_wav_file(&gen_path)?;
        generated.push(TaggedEmbedding {
            performer: meta.performer.clone(),
            piece: meta.piece.clone(),
            embedding: embed_clip(&proc, &gen_audio)?,
        });
        let bend_path = generated_dir.join(format!("{}{BEND_SUFFIX}", stem(meta)));
        let perf = read_midi(&corpus_dir.join(&meta.midi))?;
        pairs.push((meta.clone(), perf, ref_audio, gen_audio, bend_path.exists().then_some(bend_path)));
    }
    if pairs.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no generated clips in {} match the corpus",
            generated_dir.display()
        )));
    }
    let source = match source {
        VibratoSource::Auto if pairs.iter().all(|p| p.4.is_some()) => VibratoSource::Bend,
        VibratoSource::Auto => VibratoSource::Audio,
        s => s,
    };

    let mut notes = Vec::new();
    for (meta, perf, ref_audio, gen_audio, bend_path) in &pairs {
        let (gt, pred) = match source {
            VibratoSource::Bend => {
                let path = bend_path.as_ref().ok_or_else(|| {
                    Error::InvalidInput(format!("missing {}{BEND_SUFFIX} in {}", stem(meta), generated_dir.display()))
                })?;
                let ref_rolls = encode_rolls(perf, grid_for(perf, cfg));
                let mut gen_rolls = ref_rolls.clone();
                gen_rolls.bend = load_bend(path, ref_rolls.n_frames())?;
                (labels_from_bend(cfg, &ref_rolls, meta), labels_from_bend(cfg, &gen_rolls, meta))
            }
            _ => (labels_from_track(cfg, ref_audio, meta), labels_from_track(cfg, gen_audio, meta)),
        };
        // notes without a ground-truth decision are skipped; an undecidable
        // generated note (too little voicing) counts as no vibrato
        for (g, p) in gt.into_iter().zip(pred) {
            if let Some(g) = g {
                let p = p.unwrap_or(VibratoLabel {
                    note: g.note,
                    rate_hz: 0.0,
                    extent_cents: 0.0,
                    present: false,
                });
                notes.push(NoteRecord {
                    piece: meta.piece.clone(),
                    performer: meta.performer.clone(),
                    score_index: g.note,
                    gt: g,
                    pred: p,
                });
            }
        }
    }
    let label_pairs: Vec<LabelPair> = notes
        .iter()
        .map(|n| LabelPair {
            piece: n.piece.clone(),
            gt: n.gt.present,
            pred: n.pred.present,
        })
        .collect();
    let mut by_note: BTreeMap<(&str, usize), SharedNote> = BTreeMap::new();
    for n in &notes {
        let e = by_note.entry((&n.piece, n.score_index)).or_insert(SharedNote { gt: vec![], pred: vec![] });
        e.gt.push(n.gt.present);
        e.pred.push(n.pred.present);
    }
    let shared: Vec<SharedNote> = by_note.into_values().filter(|s| s.gt.len() >= 2).collect();

    let report = EvalReport {
        n_reference: reference.len(),
        n_generated: generated.len(),
        vibrato_source: source,
        fad_all: fad_suite(&reference, &generated, Grouping::All)?,
        fad_performer: fad_suite(&reference, &generated, Grouping::Performer)?,
        fad_piece: fad_suite(&reference, &generated, Grouping::Piece)?,
        vibrato_f1: vibrato_f1(&label_pairs)?,
        perf_mae: perf_mae(&shared)?,
        n_notes: notes.len(),
        n_shared_notes: shared.len(),
        notes,
    };
    fs::write(report_out, serde_json::to_string_pretty(&report)?)?;
    fs::write(report_out.with_extension("csv"), report.notes_csv())?;
    Ok(report)
}
