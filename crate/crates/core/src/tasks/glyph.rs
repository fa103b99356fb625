use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma, Normal};

use super::{eval_count, ClientPartition, Descriptor, SuiteKind, TaskSuite};
use crate::error::{ensure, Result};
use crate::model::{Activation, Batch, LossKind, ModelSpec};
use crate::rng::{rng_for, tag, SimRng};

pub const GLYPH_SIDE: usize = 8;
pub const GLYPH_CLASSES: usize = 10;
const PIXELS: usize = GLYPH_SIDE * GLYPH_SIDE;

/// Ink mask of glyph class `k` at pixel `(r, c)`.
fn ink(k: usize, r: usize, c: usize) -> bool {
    let diag = r == c || r + 1 == c;
    let anti = r + c == GLYPH_SIDE - 1 || r + c == GLYPH_SIDE;
    let hbar = r == 3 || r == 4;
    let vbar = c == 3 || c == 4;
    match k {
        0 => hbar,
        1 => vbar,
        2 => diag,
        3 => anti,
        4 => hbar || vbar,
        5 => diag || anti,
        6 => r == 0 || c == 0 || r == GLYPH_SIDE - 1 || c == GLYPH_SIDE - 1,
        7 => (2..6).contains(&r) && (2..6).contains(&c),
        8 => (r / 2 + c / 2) % 2 == 0,
        9 => c < 2 || r >= GLYPH_SIDE - 2,
        _ => unreachable!("glyph class out of range"),
    }
}

/// Noise-free 8x8 prototype of class `k`, row-major, values in {0, 1}.
pub fn glyph_prototype(k: usize) -> Option<[f64; PIXELS]> {
    if k >= GLYPH_CLASSES {
        return None;
    }
    let mut img = [0.0; PIXELS];
    for r in 0..GLYPH_SIDE {
        for c in 0..GLYPH_SIDE {
            img[r * GLYPH_SIDE + c] = ink(k, r, c) as u8 as f64;
        }
    }
    Some(img)
}

/// Class proportions drawn from a symmetric Dirichlet via normalized gammas.
fn dirichlet(alpha: f64, k: usize, rng: &mut SimRng) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("positive shape");
    let mut draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        draws.iter_mut().for_each(|x| *x /= total);
    } else {
        // every draw underflowed; all mass on one class
        let hot = (rng_index(rng, k)).min(k - 1);
        draws.iter_mut().enumerate().for_each(|(i, x)| *x = (i == hot) as u8 as f64);
    }
    draws
}

fn rng_index(rng: &mut SimRng, k: usize) -> usize {
    use rand::Rng;
    rng.random_range(0..k)
}

/// Largest-remainder apportionment of `n` samples to the given proportions.
fn apportion(props: &[f64], n: usize) -> Vec<usize> {
    let raw: Vec<f64> = props.iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|&x| libm::floor(x) as usize).collect();
    let mut short = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..props.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = raw[a] - counts[a] as f64;
        let rb = raw[b] - counts[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if short == 0 {
            break;
        }
        counts[i] += 1;
        short -= 1;
    }
    counts
}

/// Noisy 8x8 glyph classification with Dirichlet label skew.
///
/// Each client draws class proportions from `Dirichlet(dirichlet_alpha)`,
/// apportions `samples_per_client` labels accordingly, and renders each
/// sample as its class prototype plus Gaussian noise, clamped to `[0, 1]`.
/// The descriptor holds the client's full label histogram (train + eval).
pub fn gen_glyph_image_tasks(
    n_clients: usize,
    n_classes: usize,
    dirichlet_alpha: f64,
    noise_sigma: f64,
    samples_per_client: usize,
    rng_seed: u64,
) -> Result<TaskSuite> {
    ensure!(n_clients >= 2, "need at least two clients");
    ensure!(
        (2..=GLYPH_CLASSES).contains(&n_classes),
        "glyph suites support 2..={GLYPH_CLASSES} classes, got {n_classes}"
    );
    ensure!(
        dirichlet_alpha > 0.0 && dirichlet_alpha.is_finite(),
        "Dirichlet concentration must be positive, got {dirichlet_alpha}"
    );
    ensure!(noise_sigma >= 0.0, "noise sigma must be non-negative");
    ensure!(
        samples_per_client >= 4,
        "need at least 4 samples per client, got {samples_per_client}"
    );
    let spec = ModelSpec::new(
        vec![PIXELS, 32, n_classes],
        Activation::Tanh,
        LossKind::SoftmaxCrossEntropy,
    )?;
    let prototypes: Vec<[f64; PIXELS]> = (0..n_classes).filter_map(glyph_prototype).collect();
    let noise = Normal::new(0.0, noise_sigma).map_err(|_| crate::Error::config("bad noise sigma"))?;

    let clients = (0..n_clients)
        .map(|id| {
            let mut rng = rng_for(rng_seed, &[tag::SUITE, id as u64]);
            let props = dirichlet(dirichlet_alpha, n_classes, &mut rng);
            let histogram = apportion(&props, samples_per_client);
            let mut labels: Vec<usize> = histogram
                .iter()
                .enumerate()
                .flat_map(|(k, &count)| core::iter::repeat_n(k, count))
                .collect();
            labels.shuffle(&mut rng);

            let mut inputs = Vec::with_capacity(PIXELS * samples_per_client);
            let mut targets = Vec::with_capacity(n_classes * samples_per_client);
            for &label in &labels {
                inputs.extend(
                    prototypes[label]
                        .iter()
                        .map(|&p| (p + noise.sample(&mut rng)).clamp(0.0, 1.0)),
                );
                targets.extend((0..n_classes).map(|k| (k == label) as u8 as f64));
            }
            let n_train = samples_per_client - eval_count(samples_per_client);
            Ok(ClientPartition {
                client_id: id,
                train: Batch::new(
                    inputs[..PIXELS * n_train].to_vec(),
                    targets[..n_classes * n_train].to_vec(),
                    PIXELS,
                    n_classes,
                )?,
                eval: Batch::new(
                    inputs[PIXELS * n_train..].to_vec(),
                    targets[n_classes * n_train..].to_vec(),
                    PIXELS,
                    n_classes,
                )?,
                support: None,
                query: None,
                descriptor: Descriptor::LabelHistogram(histogram),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TaskSuite::fresh(SuiteKind::GlyphImages, spec, clients))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn histogram(c: &ClientPartition) -> &[usize] {
        match &c.descriptor {
            Descriptor::LabelHistogram(h) => h,
            _ => panic!("wrong descriptor"),
        }
    }

    #[test]
    fn prototypes_are_distinct() {
        for a in 0..GLYPH_CLASSES {
            for b in a + 1..GLYPH_CLASSES {
                assert_ne!(glyph_prototype(a), glyph_prototype(b), "{a} vs {b}");
            }
        }
        assert!(glyph_prototype(GLYPH_CLASSES).is_none());
    }

    #[test]
    fn huge_alpha_is_near_uniform() {
        let suite = gen_glyph_image_tasks(20, 8, 1e6, 0.1, 500, 3).unwrap();
        for c in &suite.clients {
            let h = histogram(c);
            assert_eq!(h.iter().sum::<usize>(), 500);
            for &count in h {
                assert!((count as f64 / 500.0 - 1.0 / 8.0).abs() < 0.05);
            }
        }
    }

    #[test]
    fn small_alpha_is_skewed() {
        let suite = gen_glyph_image_tasks(50, 8, 0.1, 0.1, 40, 3).unwrap();
        let skewed = suite.clients.iter().any(|c| {
            let h = histogram(c);
            *h.iter().max().unwrap() as f64 > 0.6 * h.iter().sum::<usize>() as f64
        });
        assert!(skewed);
    }

    #[test]
    fn pixels_are_clamped_and_histograms_match_labels() {
        let suite = gen_glyph_image_tasks(6, 5, 0.5, 0.8, 30, 1).unwrap();
        for c in &suite.clients {
            assert!(c.train.inputs().iter().chain(c.eval.inputs()).all(|&p| (0.0..=1.0).contains(&p)));
            let mut counts = vec![0; 5];
            for l in c.train.labels().into_iter().chain(c.eval.labels()) {
                counts[l] += 1;
            }
            assert_eq!(counts, histogram(c));
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(gen_glyph_image_tasks(5, 4, 0.0, 0.1, 10, 0).is_err());
        assert!(gen_glyph_image_tasks(5, 1, 1.0, 0.1, 10, 0).is_err());
        assert!(gen_glyph_image_tasks(5, 11, 1.0, 0.1, 10, 0).is_err());
    }

    #[test]
    fn apportion_sums() {
        assert_eq!(apportion(&[0.5, 0.25, 0.25], 7).iter().sum::<usize>(), 7);
        assert_eq!(apportion(&[1.0, 0.0], 3), vec![3, 0]);
    }
}
