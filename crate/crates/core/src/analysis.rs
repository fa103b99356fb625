//! Server/client data similarity and rank statistics.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{ensure, Result};
use crate::model::Batch;
use crate::tasks::{ClientPartition, ServerDataset, SuiteKind, TaskSuite, GLYPH_SIDE};

pub const SSIM_C1: f64 = 1e-4;
pub const SSIM_C2: f64 = 9e-4;

/// Global (single-window) SSIM of two equally sized images.
pub fn ssim(a: &[f64], b: &[f64], c1: f64, c2: f64) -> Result<f64> {
    ensure!(a.len() == b.len(), "images differ in size: {} vs {}", a.len(), b.len());
    ensure!(!a.is_empty(), "images are empty");
    ensure!(c1 > 0.0 && c2 > 0.0, "SSIM constants must be positive");
    let n = a.len() as f64;
    let mu_a = a.iter().sum::<f64>() / n;
    let mu_b = b.iter().sum::<f64>() / n;
    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - mu_a, y - mu_b);
        va += dx * dx;
        vb += dy * dy;
        cov += dx * dy;
    }
    va /= n;
    vb /= n;
    cov /= n;
    Ok(((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) / ((mu_a * mu_a + mu_b * mu_b + c1) * (va + vb + c2)))
}

/// Per-pixel mean of the inputs of a batch.
pub fn mean_image(batch: &Batch) -> Result<Vec<f64>> {
    ensure!(!batch.is_empty(), "cannot average an empty batch");
    let mut m = vec![0.0; batch.input_dim()];
    for i in 0..batch.len() {
        for (acc, x) in m.iter_mut().zip(batch.input(i)) {
            *acc += x;
        }
    }
    let n = batch.len() as f64;
    m.iter_mut().for_each(|x| *x /= n);
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SimilarityMode {
    /// Server mean image against each client's mean image.
    MeanImage,
    /// Mean SSIM over every (server sample, client sample) pair.
    Pairwise,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimilarityReport {
    /// `(client_id, ssim)` in client order.
    pub per_client_ssim: Vec<(usize, f64)>,
    /// Population variance of the per-client scores.
    pub ssim_variance: f64,
    /// Reserved partitions over all partitions.
    pub server_fraction: f64,
    /// Filled in from simulation results before correlating.
    pub accuracy_mean: Option<f64>,
}

impl SimilarityReport {
    pub fn mean_ssim(&self) -> f64 {
        self.per_client_ssim.iter().map(|p| p.1).sum::<f64>() / self.per_client_ssim.len() as f64
    }
}

fn check_image_batch(batch: &Batch) -> Result<()> {
    ensure!(
        batch.input_dim() == GLYPH_SIDE * GLYPH_SIDE,
        "similarity needs {GLYPH_SIDE}x{GLYPH_SIDE} images, got {} inputs",
        batch.input_dim()
    );
    ensure!(
        (0..batch.len()).all(|i| batch.input(i).iter().all(|x| (0.0..=1.0).contains(x))),
        "image pixels must lie in [0, 1]"
    );
    Ok(())
}

/// SSIM between the server data and every client's training inputs.
pub fn server_client_similarity(
    server: &ServerDataset,
    clients: &[ClientPartition],
    mode: SimilarityMode,
) -> Result<SimilarityReport> {
    ensure!(!server.is_empty(), "no server data");
    ensure!(!clients.is_empty(), "no clients");
    check_image_batch(&server.pooled)?;
    for c in clients {
        check_image_batch(&c.train)?;
    }
    let scores = match mode {
        SimilarityMode::MeanImage => {
            let s = mean_image(&server.pooled)?;
            let mut out = Vec::with_capacity(clients.len());
            for c in clients {
                out.push(ssim(&s, &mean_image(&c.train)?, SSIM_C1, SSIM_C2)?);
            }
            out
        }
        SimilarityMode::Pairwise => {
            let server_n = server.pooled.len();
            let mut out = Vec::with_capacity(clients.len());
            for c in clients {
                let mut total = 0.0;
                for i in 0..server_n {
                    for j in 0..c.train.len() {
                        total += ssim(server.pooled.input(i), c.train.input(j), SSIM_C1, SSIM_C2)?;
                    }
                }
                out.push(total / (server_n * c.train.len()) as f64);
            }
            out
        }
    };
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let ssim_variance = scores.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let reserved = server.reserved_ids.len();
    Ok(SimilarityReport {
        per_client_ssim: clients.iter().map(|c| c.client_id).zip(scores).collect(),
        ssim_variance,
        server_fraction: reserved as f64 / (reserved + clients.len()) as f64,
        accuracy_mean: None,
    })
}

/// [`server_client_similarity`] on a whole suite.
pub fn suite_similarity(suite: &TaskSuite, mode: SimilarityMode) -> Result<SimilarityReport> {
    ensure!(suite.kind == SuiteKind::GlyphImages, "similarity analysis needs an image suite");
    let mut report = server_client_similarity(&suite.server, &suite.clients, mode)?;
    report.server_fraction = suite.server_fraction;
    Ok(report)
}

/// Pearson correlation; `None` when either side is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    ensure!(x.len() == y.len(), "samples differ in length: {} vs {}", x.len(), y.len());
    ensure!(x.len() >= 2, "correlation needs at least two points");
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some(sxy / libm::sqrt(sxx * syy)))
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with tie correction; `None` when either side
/// is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    ensure!(x.len() == y.len(), "samples differ in length: {} vs {}", x.len(), y.len());
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Pearson correlation between SSIM variance and accuracy across reports.
/// `None` when either series is constant.
pub fn correlate_variance_accuracy(reports: &[SimilarityReport]) -> Result<Option<f64>> {
    ensure!(reports.len() >= 3, "need at least three reports, got {}", reports.len());
    let mut variances = Vec::with_capacity(reports.len());
    let mut accuracies = Vec::with_capacity(reports.len());
    for r in reports {
        let acc = r
            .accuracy_mean
            .ok_or_else(|| crate::error::Error::config("report has no accuracy joined"))?;
        variances.push(r.ssim_variance);
        accuracies.push(acc);
    }
    pearson(&variances, &accuracies)
}
