use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::dsp::{AudioClip, MelProcessor};
use crate::error::{Error, Result};

/// Added to covariance diagonals whose smallest eigenvalue is below it.
pub const COV_REGULARIZER: f64 = 1e-6;
const NEG_EIG_TOL: f64 = 1e-6;

/// Per-band mean, standard deviation and mean absolute frame-to-frame delta
/// of the log-mel spectrogram; `3 · n_mels` values.
pub fn embed_clip(mel: &MelProcessor, a: &AudioClip) -> Result<Vec<f64>> {
    let m = mel.mel_spectrogram(a)?.values;
    let (bands, frames) = m.dim();
    if frames < 3 {
        return Err(Error::InvalidInput(format!(
            "embedding needs at least 3 frames, clip has {frames}"
        )));
    }
    let mut out = vec![0.0; 3 * bands];
    for (b, row) in m.rows().into_iter().enumerate() {
        let mean = row.mean().unwrap_or(0.0);
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / frames as f64;
        let delta = row
            .windows(2)
            .into_iter()
            .map(|w| (w[1] - w[0]).abs())
            .sum::<f64>()
            / (frames - 1) as f64;
        out[b] = mean;
        out[bands + b] = var.sqrt();
        out[2 * bands + b] = delta;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianStats {
    /// Sample mean and unbiased covariance (zero covariance for one sample).
    pub fn fit(samples: &[Vec<f64>]) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(Error::InvalidInput("cannot fit a Gaussian to zero samples".into()));
        };
        let d = first.len();
        if samples.iter().any(|s| s.len() != d) {
            return Err(Error::Dimension("embeddings differ in dimension".into()));
        }
        let n = samples.len();
        let x = DMatrix::from_fn(n, d, |i, j| samples[i][j]);
        let mean = DVector::from_fn(d, |j, _| x.column(j).mean());
        let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
        let cov = if n > 1 {
            centered.transpose() * &centered / (n - 1) as f64
        } else {
            DMatrix::zeros(d, d)
        };
        Ok(GaussianStats { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn regularized(c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let scale = c.amax().max(1.0);
    if (c - c.transpose()).amax() > 1e-9 * scale {
        return Err(Error::InvalidInput("covariance is not symmetric".into()));
    }
    let sym = (c + c.transpose()) * 0.5;
    let min_eig = SymmetricEigen::new(sym.clone()).eigenvalues.min();
    if min_eig < COV_REGULARIZER {
        Ok(sym + DMatrix::identity(c.nrows(), c.ncols()) * COV_REGULARIZER)
    } else {
        Ok(sym)
    }
}

fn sqrt_psd(m: DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let eig = SymmetricEigen::new(m);
    let mut trace = 0.0;
    let mut roots = eig.eigenvalues.clone();
    for v in roots.iter_mut() {
        if *v < -NEG_EIG_TOL {
            return Err(Error::InvalidInput(format!("matrix has negative eigenvalue {v}")));
        }
        *v = v.max(0.0).sqrt();
        trace += *v;
    }
    let q = &eig.eigenvectors;
    Ok((q * DMatrix::from_diagonal(&roots) * q.transpose(), trace))
}

/// ‖μ₁−μ₂‖² + Tr(Σ₁ + Σ₂ − 2(Σ₁Σ₂)^½). Both square roots Σᵢ^½ come from
/// symmetric eigendecompositions; Tr (Σ₁Σ₂)^½, the trace of the square root
/// of Σ₁^½ Σ₂ Σ₁^½, is taken as the sum of singular values of Σ₂^½ Σ₁^½,
/// which avoids squaring small eigenvalues. A covariance gets
/// `COV_REGULARIZER · I` added when it is (near) singular.
pub fn frechet_distance(g1: &GaussianStats, g2: &GaussianStats) -> Result<f64> {
    if g1.dim() != g2.dim() || g1.cov.nrows() != g1.dim() || g2.cov.nrows() != g2.dim() {
        return Err(Error::Dimension(format!(
            "Gaussian dimensions differ: {} vs {}",
            g1.dim(),
            g2.dim()
        )));
    }
    let s1 = regularized(&g1.cov)?;
    let s2 = regularized(&g2.cov)?;
    let (r1, _) = sqrt_psd(s1.clone())?;
    let (r2, _) = sqrt_psd(s2.clone())?;
    let tr_sqrt = (&r2 * &r1).singular_values().sum();
    let diff = &g1.mean - &g2.mean;
    Ok(diff.norm_squared() + s1.trace() + s2.trace() - 2.0 * tr_sqrt)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grouping {
    All,
    Performer,
    Piece,
}

/// An embedded clip with its tags.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggedEmbedding {
    pub performer: String,
    pub piece: String,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDistance {
    pub group: String,
    pub distance: f64,
    pub n_reference: usize,
    pub n_generated: usize,
    /// Fewer than d/2 clips on either side.
    pub low_sample: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FadReport {
    pub grouping: Grouping,
    /// Mean over groups (the single distance for `All`).
    pub value: f64,
    pub groups: Vec<GroupDistance>,
}

fn key(e: &TaggedEmbedding, g: Grouping) -> &str {
    match g {
        Grouping::All => "all",
        Grouping::Performer => &e.performer,
        Grouping::Piece => &e.piece,
    }
}

/// Fréchet distance between reference and generated embeddings, per group.
/// Groups are keyed by the generated clips' tags; a group with no reference
/// clips is an error.
pub fn fad_suite(reference: &[TaggedEmbedding], generated: &[TaggedEmbedding], grouping: Grouping) -> Result<FadReport> {
    if generated.is_empty() || reference.is_empty() {
        return Err(Error::InvalidInput("FAD needs reference and generated clips".into()));
    }
    let mut groups: BTreeMap<&str, (Vec<Vec<f64>>, Vec<Vec<f64>>)> = BTreeMap::new();
    for g in generated {
        groups.entry(key(g, grouping)).or_default().1.push(g.embedding.clone());
    }
    for r in reference {
        if let Some(entry) = groups.get_mut(key(r, grouping)) {
            entry.0.push(r.embedding.clone());
        }
    }
    let mut out = Vec::with_capacity(groups.len());
    for (name, (refs, gens)) in groups {
        if refs.is_empty() {
            return Err(Error::InvalidInput(format!("group {name:?} has no reference clips")));
        }
        let d = refs[0].len();
        let distance = frechet_distance(&GaussianStats::fit(&refs)?, &GaussianStats::fit(&gens)?)?;
        out.push(GroupDistance {
            group: name.to_string(),
            distance,
            n_reference: refs.len(),
            n_generated: gens.len(),
            low_sample: 2 * refs.len().min(gens.len()) < d,
        });
    }
    let value = out.iter().map(|g| g.distance).sum::<f64>() / out.len() as f64;
    Ok(FadReport {
        grouping,
        value,
        groups: out,
    })
}
