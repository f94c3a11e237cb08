//! Posterior comparison and the tables behind the figures.

use rayon::prelude::*;
use statforge_tensor::ParameterStore;

use crate::abc::DistanceRecord;
use crate::enca;
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::io::Table;
use crate::models::{bifurcation_sweep, BareNoise, Model, ModelId, PriorSpec};
use crate::rng;
use crate::samples::SampleSet;
use crate::suffstats;
use crate::train::{draw_realization, realize};

/// Relative size of the largest gap in the sorted order parameters,
/// measured against their range, above which the sample counts as bimodal.
pub const BIMODAL_GAP: f64 = 0.25;
pub const PILOT_RUNS: usize = 1000;

/// Exact 1-Wasserstein distance between two empirical distributions,
/// `∫ |F_a − F_b|`.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut prev = a[0].min(b[0]);
    let mut w = 0.0;
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => unreachable!(),
        };
        w += (i as f64 / na - j as f64 / nb).abs() * (x - prev);
        while i < a.len() && a[i] == x {
            i += 1;
        }
        while j < b.len() && b[j] == x {
            j += 1;
        }
        prev = x;
    }
    Ok(w)
}

#[derive(Clone, Debug, PartialEq)]
pub struct WassersteinReport {
    pub raw: Vec<f64>,
    /// Divided by the prior range of each component.
    pub normalized: Vec<f64>,
}

impl WassersteinReport {
    pub fn normalized_sum(&self) -> f64 {
        self.normalized.iter().sum()
    }
}

pub fn marginal_wasserstein(a: &SampleSet, b: &SampleSet, prior: &PriorSpec) -> Result<WassersteinReport> {
    if a.dim() != b.dim() || a.dim() != prior.dim() {
        return Err(Error::ModelMismatch(format!(
            "sample dimensions {} and {} with a {}-dimensional prior",
            a.dim(),
            b.dim(),
            prior.dim()
        )));
    }
    let raw = (0..a.dim())
        .map(|j| wasserstein1(&a.column(j), &b.column(j)))
        .collect::<Result<Vec<f64>>>()?;
    let normalized = raw.iter().zip(prior.ranges()).map(|(w, r)| w / r).collect();
    Ok(WassersteinReport { raw, normalized })
}

/// Nearest-rank quantile: the `⌈q·m⌉`-th smallest value.
pub fn nearest_rank(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    Ok(v[k - 1])
}

/// Per-statistic quantile of the final distances, first `p` statistics only.
pub fn distance_quantiles(rec: &DistanceRecord, p: usize, q: f64) -> Result<Vec<f64>> {
    let dim = rec.components.first().map_or(0, Vec::len);
    (0..p.min(dim))
        .map(|j| nearest_rank(&rec.components.iter().map(|c| c[j]).collect::<Vec<_>>(), q))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    /// `bins + 1` edges spanning `[0, max]`.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

/// Fixed-width histogram over `[0, max(values)]`; the maximum falls in the last bin.
pub fn histogram(values: &[f64], bins: usize) -> Histogram {
    let bins = bins.max(1);
    let max = values.iter().copied().fold(0.0, f64::max);
    let hi = if max > 0.0 { max } else { 1.0 };
    let width = hi / bins as f64;
    let edges = (0..=bins).map(|k| k as f64 * width).collect();
    let mut counts = vec![0; bins];
    for &v in values {
        let k = ((v / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    Histogram { edges, counts }
}

pub fn distance_histograms(rec: &DistanceRecord, p: usize, bins: usize) -> Vec<Histogram> {
    let dim = rec.components.first().map_or(0, Vec::len);
    (0..p.min(dim))
        .map(|j| histogram(&rec.components.iter().map(|c| c[j]).collect::<Vec<_>>(), bins))
        .collect()
}

/// Long-format table `(component, lower, upper, count)`.
pub fn histogram_table(hs: &[Histogram]) -> Table {
    let mut t = Table::new(["component", "lower", "upper", "count"].map(String::from).to_vec());
    for (j, h) in hs.iter().enumerate() {
        for (k, c) in h.counts.iter().enumerate() {
            t.rows.push(vec![j as f64, h.edges[k], h.edges[k + 1], *c as f64]);
        }
    }
    t
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n < 2 {
        return f64::NAN;
    }
    let ma = a[..n].iter().sum::<f64>() / n as f64;
    let mb = b[..n].iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for k in 0..n {
        let (da, db) = (a[k] - ma, b[k] - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    sab / (saa * sbb).sqrt()
}

/// Probability that a positive scores above a negative (ties count half).
pub fn auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut idx: Vec<usize> = (0..scores.len().min(labels.len())).collect();
    idx.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));
    let mut rank_sum = 0.0;
    let mut k = 0;
    while k < idx.len() {
        let mut e = k;
        while e + 1 < idx.len() && scores[idx[e + 1]] == scores[idx[k]] {
            e += 1;
        }
        let avg = (k + e) as f64 / 2.0 + 1.0;
        rank_sum += idx[k..=e].iter().filter(|&&i| labels[i]).count() as f64 * avg;
        k = e + 1;
    }
    let pos = idx.iter().filter(|&&i| labels[i]).count() as f64;
    let neg = idx.len() as f64 - pos;
    (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg)
}

#[derive(Clone, Debug)]
pub struct RegressionScatter {
    pub table: Table,
    /// Pearson r between `θ_α` and `s_α`.
    pub pearson: Vec<f64>,
}

/// Held-out prior draws with their encoder statistics; NLAR1 rows also
/// carry `α̂, σ̂², √σ̂², o`.
pub fn regression_scatter(
    encoder: &Encoder,
    model: &Model,
    prior: &PriorSpec,
    n: usize,
    m: usize,
    seed: u64,
) -> Result<RegressionScatter> {
    let p = prior.dim();
    let reals: Vec<_> = (0..m)
        .into_par_iter()
        .map(|i| draw_realization(model, prior, n, &mut rng::stream(seed, rng::domain::DIAG, 0, i as u64)))
        .collect();
    let trajs: Vec<_> = reals.iter().map(|r| r.trajectory.clone()).collect();
    let stats = encoder.encode_many(&trajs)?;
    let mut columns: Vec<String> = prior.names.clone();
    columns.extend((1..=encoder.q()).map(|k| format!("s{k}")));
    let nlar1 = model.id == ModelId::Nlar1;
    if nlar1 {
        columns.extend(suffstats::EXPORT_COLUMNS.map(String::from));
    }
    let mut table = Table::new(columns);
    for (r, s) in reals.iter().zip(&stats) {
        let mut row = r.theta.clone();
        row.extend_from_slice(&s.values);
        if nlar1 {
            match suffstats::sufficient_stats(&r.trajectory) {
                Ok(ss) => row.extend(ss.export_row()),
                Err(_) => row.extend([f64::NAN; 4]),
            }
        }
        table.push(row)?;
    }
    let pearson = (0..p.min(encoder.q()))
        .map(|a| {
            let th: Vec<f64> = table.rows.iter().map(|r| r[a]).collect();
            let s: Vec<f64> = table.rows.iter().map(|r| r[p + a]).collect();
            pearson(&th, &s)
        })
        .collect();
    Ok(RegressionScatter { table, pearson })
}

/// Midpoint of the largest gap between sorted values, or `None` when that
/// gap is below [`BIMODAL_GAP`] of the range.
pub fn largest_gap_threshold(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.len() < 2 {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let range = v[v.len() - 1] - v[0];
    let (k, gap) = v
        .windows(2)
        .enumerate()
        .map(|(k, w)| (k, w[1] - w[0]))
        .max_by(|a, b| a.1.total_cmp(&b.1))?;
    if range <= 0.0 || gap < BIMODAL_GAP * range {
        return None;
    }
    Some(0.5 * (v[k] + v[k + 1]))
}

/// Order parameters of `runs` NLAR1 simulations at `theta`.
pub fn order_pilot(model: &Model, theta: &[f64], x0: f64, n: usize, runs: usize, seed: u64) -> Vec<f64> {
    (0..runs)
        .into_par_iter()
        .filter_map(|i| {
            let mut r = rng::stream(seed, rng::domain::DIAG, 1, i as u64);
            realize(model, theta, x0, n, &mut r).map(|z| suffstats::order_param_with(&z.trajectory, model.map))
        })
        .collect()
}

/// Attractor threshold from a pilot at the model's reference parameters.
pub fn attractor_threshold(model: &Model, x0: f64, n: usize, seed: u64) -> Option<f64> {
    largest_gap_threshold(&order_pilot(model, &model.id.true_theta(), x0, n, PILOT_RUNS, seed))
}

#[derive(Clone, Debug)]
pub struct LatentScatter {
    /// Columns `s1..sq, order` and, when labelled, `label`.
    pub table: Table,
    pub tau: Option<f64>,
}

impl LatentScatter {
    pub fn labels(&self) -> Option<Vec<bool>> {
        self.table.column("label").map(|c| c.iter().map(|&l| l > 0.5).collect())
    }

    /// AUC of statistic `k` for the attractor labels, oriented so that it
    /// is at least ½ (the sign of a learned statistic is arbitrary).
    pub fn separation_auc(&self, k: usize) -> Option<f64> {
        let labels = self.labels()?;
        let s = self.table.column(&format!("s{}", k + 1))?;
        let a = auc(&s, &labels);
        Some(a.max(1.0 - a))
    }
}

/// Statistics of held-out NLAR1 prior draws with attractor labels. The
/// threshold `tau` is taken from a pilot at the reference parameters when
/// not given; a unimodal pilot leaves the rows unlabelled.
pub fn latent_scatter(
    encoder: &Encoder,
    model: &Model,
    prior: &PriorSpec,
    n: usize,
    m: usize,
    seed: u64,
    tau: Option<f64>,
) -> Result<LatentScatter> {
    if model.id != ModelId::Nlar1 {
        return Err(Error::ModelMismatch("latent scatter is defined for NLAR1 only".into()));
    }
    let tau = tau.or_else(|| attractor_threshold(model, prior.x0, n, seed));
    if tau.is_none() {
        log::warn!("order parameter is unimodal; attractor labels skipped");
    }
    let reals: Vec<_> = (0..m)
        .into_par_iter()
        .map(|i| draw_realization(model, prior, n, &mut rng::stream(seed, rng::domain::DIAG, 2, i as u64)))
        .collect();
    let trajs: Vec<_> = reals.iter().map(|r| r.trajectory.clone()).collect();
    let stats = encoder.encode_many(&trajs)?;
    let mut columns: Vec<String> = (1..=encoder.q()).map(|k| format!("s{k}")).collect();
    columns.push("order".into());
    if tau.is_some() {
        columns.push("label".into());
    }
    let mut table = Table::new(columns);
    for (r, s) in reals.iter().zip(stats) {
        let o = suffstats::order_param(&r.trajectory);
        let mut row = s.values;
        row.push(o);
        if let Some(t) = tau {
            row.push(if o > t { 1.0 } else { 0.0 });
        }
        table.push(row)?;
    }
    Ok(LatentScatter { table, tau })
}

/// One held-out trajectory at `theta` next to its reconstructions by each
/// ENCA weight set: columns `step, x, x_hat_q{q}` per decoder.
pub fn reconstruction_overlay(
    decoders: &[&ParameterStore],
    model: &Model,
    theta: &[f64],
    x0: f64,
    n: usize,
    seed: u64,
) -> Result<Table> {
    let p = model.id.n_params();
    let noise = BareNoise::draw(model.id, n, &mut rng::stream(seed, rng::domain::DIAG, 3, 0));
    let x = model.simulate(theta, &noise, x0, n)?;
    let mut columns = vec!["step".to_string(), "x".to_string()];
    let mut recons = Vec::with_capacity(decoders.len());
    for w in decoders {
        let c = enca::decoder_noise_channels(w)?;
        if c != model.id.noise_channels() {
            return Err(Error::ModelMismatch(format!(
                "decoder expects {c} noise channels, {} has {}",
                model.id,
                model.id.noise_channels()
            )));
        }
        let enc = Encoder::new(w, p)?;
        columns.push(format!("x_hat_q{}", enc.q()));
        recons.push(enca::reconstruct(&x, &noise, w, p)?);
    }
    let mut t = Table::new(columns);
    for (i, xi) in x.x.iter().enumerate() {
        let mut row = vec![(i + 1) as f64, *xi];
        row.extend(recons.iter().map(|r| r[i]));
        t.push(row)?;
    }
    Ok(t)
}

/// Long-format bifurcation data `(alpha, value)`; escaped orbits are omitted.
pub fn bifurcation_table(model: &Model, grid: &[f64], n_transient: usize, n_record: usize, x0: f64, additive: f64) -> Table {
    let mut t = Table::new(vec!["alpha".into(), "x".into()]);
    for pt in bifurcation_sweep(model, grid, n_transient, n_record, x0, additive) {
        for v in pt.values {
            t.rows.push(vec![pt.alpha, v]);
        }
    }
    t
}

/// `(epsilon, acceptance)` per sweep.
pub fn trace_table(rec: &DistanceRecord) -> Table {
    Table {
        columns: vec!["sweep".into(), "epsilon".into(), "acceptance".into()],
        rows: rec
            .epsilon
            .iter()
            .zip(&rec.acceptance)
            .enumerate()
            .map(|(k, (e, a))| vec![k as f64, *e, *a])
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_masses() {
        assert_eq!(wasserstein1(&[1.0], &[3.5]).unwrap(), 2.5);
        assert_eq!(wasserstein1(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!(wasserstein1(&[], &[1.0]).is_err());
    }

    #[test]
    fn nearest_rank_examples() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(nearest_rank(&v, 0.99).unwrap(), 99.0);
        assert_eq!(nearest_rank(&[2.0; 7], 0.99).unwrap(), 2.0);
    }

    #[test]
    fn single_value_histogram() {
        let h = histogram(&[0.7; 5], 10);
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(h.counts.iter().sum::<u64>(), 5);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]), 1.0);
        assert_eq!(auc(&[0.5, 0.5], &[false, true]), 0.5);
    }

    #[test]
    fn gap_threshold() {
        assert_eq!(largest_gap_threshold(&[0.0, 0.01, 0.02, 1.0, 1.02]), Some(0.51));
        let uniform: Vec<f64> = (0..100).map(|i| i as f64).collect();
        assert_eq!(largest_gap_threshold(&uniform), None);
    }
}
