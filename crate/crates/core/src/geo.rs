//! Abundance covariate preprocessing: an empirical semivariogram of log(x + 1)
//! cover, an exponential variogram fit, and ordinary kriging at target sites.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of equal-width lag bins.
pub const DEFAULT_BINS: usize = 15;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// γ(d) = nugget + partial_sill · (1 − exp(−d / range)).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariogramModel {
    pub nugget: f64,
    pub partial_sill: f64,
    pub range: f64,
}

impl VariogramModel {
    pub fn new(nugget: f64, partial_sill: f64, range: f64) -> Result<Self> {
        if !(nugget >= 0.0 && partial_sill >= 0.0 && range > 0.0) {
            return Err(Error::InvalidInput(format!(
                "invalid variogram (nugget {nugget}, partial sill {partial_sill}, range {range})"
            )));
        }
        Ok(Self { nugget, partial_sill, range })
    }

    pub fn semivariance(&self, d: f64) -> f64 {
        if d <= 0.0 {
            return self.nugget;
        }
        self.nugget + self.partial_sill * (1.0 - (-d / self.range).exp())
    }

    /// Covariance used by kriging: sill + nugget at zero lag, sill·exp(−d/range) otherwise.
    pub fn covariance(&self, d: f64) -> f64 {
        if d <= 0.0 {
            self.nugget + self.partial_sill
        } else {
            self.partial_sill * (-d / self.range).exp()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LagBin {
    /// Mean pair distance in the bin.
    pub distance: f64,
    pub semivariance: f64,
    pub pairs: usize,
}

/// Classical estimator γ̂(h) = Σ(z_i − z_j)² / 2N(h) over equal-width bins up to `max_lag`
/// (default: half the largest pairwise distance). Empty bins are omitted.
pub fn empirical_semivariogram(coords: &[Point], values: &[f64], n_bins: usize, max_lag: Option<f64>) -> Result<Vec<LagBin>> {
    if coords.len() != values.len() {
        return Err(Error::dim("semivariogram", coords.len(), values.len()));
    }
    if coords.len() < 2 {
        return Err(Error::InvalidInput("semivariogram needs at least 2 points".into()));
    }
    if n_bins == 0 {
        return Err(Error::InvalidInput("n_bins must be positive".into()));
    }
    let mut pairs = Vec::new();
    let mut max_d: f64 = 0.0;
    for i in 0..coords.len() {
        for j in (i + 1)..coords.len() {
            let d = coords[i].distance(&coords[j]);
            max_d = max_d.max(d);
            pairs.push((d, 0.5 * (values[i] - values[j]).powi(2)));
        }
    }
    let cutoff = max_lag.unwrap_or(0.5 * max_d);
    if !(cutoff > 0.0) {
        return Err(Error::InvalidInput("all points coincide".into()));
    }
    let width = cutoff / n_bins as f64;
    let mut sums = vec![(0.0, 0.0, 0usize); n_bins];
    for (d, half_sq) in pairs {
        if d > cutoff * (1.0 + 1e-12) {
            continue;
        }
        let b = ((d / width) as usize).min(n_bins - 1);
        sums[b].0 += d;
        sums[b].1 += half_sq;
        sums[b].2 += 1;
    }
    Ok(sums
        .into_iter()
        .filter(|s| s.2 > 0)
        .map(|(d, g, n)| LagBin {
            distance: d / n as f64,
            semivariance: g / n as f64,
            pairs: n,
        })
        .collect())
}

/// Best (nugget, sill) ≥ 0 for a fixed range by weighted least squares; returns the loss too.
fn fit_linear_part(bins: &[LagBin], range: f64) -> (f64, f64, f64) {
    let f: Vec<f64> = bins.iter().map(|b| 1.0 - (-b.distance / range).exp()).collect();
    let w: Vec<f64> = bins.iter().map(|b| b.pairs as f64).collect();
    let y: Vec<f64> = bins.iter().map(|b| b.semivariance).collect();
    let loss = |c0: f64, c1: f64| -> f64 { (0..bins.len()).map(|i| w[i] * (y[i] - c0 - c1 * f[i]).powi(2)).sum() };
    let (sw, swf, swff, swy, swfy) = (0..bins.len()).fold((0.0, 0.0, 0.0, 0.0, 0.0), |acc, i| {
        (
            acc.0 + w[i],
            acc.1 + w[i] * f[i],
            acc.2 + w[i] * f[i] * f[i],
            acc.3 + w[i] * y[i],
            acc.4 + w[i] * f[i] * y[i],
        )
    });
    let mut candidates = Vec::new();
    let det = sw * swff - swf * swf;
    if det.abs() > 1e-14 * (sw * swff).max(1e-300) {
        let c0 = (swff * swy - swf * swfy) / det;
        let c1 = (sw * swfy - swf * swy) / det;
        if c0 >= 0.0 && c1 >= 0.0 {
            candidates.push((c0, c1));
        }
    }
    // Boundary solutions: nugget only, sill only.
    candidates.push(((swy / sw).max(0.0), 0.0));
    if swff > 0.0 {
        candidates.push((0.0, (swfy / swff).max(0.0)));
    }
    candidates.push((0.0, 0.0));
    candidates
        .into_iter()
        .map(|(c0, c1)| (c0, c1, loss(c0, c1)))
        .min_by(|a, b| a.2.total_cmp(&b.2))
        .expect("at least one candidate")
}

/// Pair-count-weighted least-squares fit of the exponential model, with a
/// multi-start grid over the range followed by golden-section refinement.
pub fn fit_exponential(bins: &[LagBin]) -> Result<VariogramModel> {
    if bins.len() < 3 {
        return Err(Error::InvalidInput(format!("need at least 3 nonempty bins, got {}", bins.len())));
    }
    let max_d = bins.iter().map(|b| b.distance).fold(0.0, f64::max);
    let min_d = bins.iter().map(|b| b.distance).filter(|&d| d > 0.0).fold(f64::INFINITY, f64::min);
    let first = bins[0].semivariance;
    if bins.iter().all(|b| (b.semivariance - first).abs() <= 1e-12 * first.abs().max(1e-300)) {
        return VariogramModel::new(first.max(0.0), 0.0, max_d.max(f64::MIN_POSITIVE));
    }
    let (lo, hi) = ((min_d / 20.0).ln(), (max_d * 20.0).ln());
    let grid_n = 60;
    let eval = |log_r: f64| fit_linear_part(bins, log_r.exp()).2;
    let mut best = (lo, eval(lo));
    for i in 1..=grid_n {
        let lr = lo + (hi - lo) * i as f64 / grid_n as f64;
        let v = eval(lr);
        if v < best.1 {
            best = (lr, v);
        }
    }
    let step = (hi - lo) / grid_n as f64;
    let (mut a, mut b) = ((best.0 - step).max(lo), (best.0 + step).min(hi));
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (eval(c), eval(d));
    for _ in 0..100 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = eval(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = eval(d);
        }
    }
    let log_r = if fc < best.1 || fd < best.1 { 0.5 * (a + b) } else { best.0 };
    let range = log_r.exp();
    let (nugget, sill, _) = fit_linear_part(bins, range);
    VariogramModel::new(nugget, sill, range)
}

/// Weighted sum of squared residuals of `model` on `bins`.
pub fn fit_loss(bins: &[LagBin], model: &VariogramModel) -> f64 {
    bins.iter()
        .map(|b| b.pairs as f64 * (b.semivariance - model.semivariance(b.distance)).powi(2))
        .sum()
}

/// Average values at duplicated coordinates.
fn dedupe(coords: &[Point], values: &[f64]) -> (Vec<Point>, Vec<f64>) {
    let mut groups: BTreeMap<(u64, u64), (Point, f64, usize)> = BTreeMap::new();
    let mut order = Vec::new();
    for (p, &v) in coords.iter().zip(values) {
        let key = (p.x.to_bits(), p.y.to_bits());
        let entry = groups.entry(key).or_insert_with(|| {
            order.push(key);
            (*p, 0.0, 0)
        });
        entry.1 += v;
        entry.2 += 1;
    }
    if order.len() < coords.len() {
        log::warn!("kriging: averaged {} duplicate locations", coords.len() - order.len());
    }
    order
        .into_iter()
        .map(|k| {
            let (p, s, n) = groups[&k];
            (p, s / n as f64)
        })
        .unzip()
}

/// Ordinary-kriging weights at `target` (they sum to one).
pub fn kriging_weights(coords: &[Point], model: &VariogramModel, target: &Point) -> Result<DVector<f64>> {
    let n = coords.len();
    if n == 0 {
        return Err(Error::InvalidInput("kriging needs at least one observation".into()));
    }
    if n == 1 || model.nugget + model.partial_sill == 0.0 {
        return Ok(DVector::from_element(n, 1.0 / n as f64));
    }
    let (a, rhs) = kriging_system(coords, model, target);
    let sol = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("ordinary kriging system".into()))?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("ordinary kriging system".into()));
    }
    Ok(sol.rows(0, n).into_owned())
}

/// The augmented system [[C, 1], [1', 0]] [λ; μ] = [c₀; 1].
pub fn kriging_system(coords: &[Point], model: &VariogramModel, target: &Point) -> (DMatrix<f64>, DVector<f64>) {
    let n = coords.len();
    let mut a = DMatrix::zeros(n + 1, n + 1);
    let mut rhs = DVector::zeros(n + 1);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = model.covariance(coords[i].distance(&coords[j]));
        }
        a[(i, n)] = 1.0;
        a[(n, i)] = 1.0;
        rhs[i] = model.covariance(coords[i].distance(target));
    }
    rhs[n] = 1.0;
    (a, rhs)
}

pub fn ordinary_kriging(coords: &[Point], values: &[f64], model: &VariogramModel, targets: &[Point]) -> Result<Vec<f64>> {
    if coords.len() != values.len() {
        return Err(Error::dim("kriging", coords.len(), values.len()));
    }
    let (coords, values) = dedupe(coords, values);
    let z = DVector::from_vec(values);
    targets
        .iter()
        .map(|t| Ok(kriging_weights(&coords, model, t)?.dot(&z)))
        .collect()
}

/// One percent-cover observation for a species of the family at a site.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverRecord {
    pub site_id: String,
    pub x: f64,
    pub y: f64,
    pub cover_percent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetSite {
    pub site_id: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AbundanceResult {
    pub model: VariogramModel,
    /// (site_id, abundance_est) in target order.
    pub estimates: Vec<(String, f64)>,
}

/// Sum cover per site, krige log(x + 1) with a fitted exponential variogram,
/// and back-transform with exp(·) − 1 floored at zero.
pub fn abundance_pipeline(records: &[CoverRecord], targets: &[TargetSite]) -> Result<AbundanceResult> {
    if records.is_empty() {
        return Err(Error::InvalidInput("no cover records for the family".into()));
    }
    let mut per_site: BTreeMap<&str, (Point, f64)> = BTreeMap::new();
    for r in records {
        if !(r.cover_percent >= 0.0) {
            return Err(Error::InvalidInput(format!("site {}: negative or missing cover", r.site_id)));
        }
        per_site.entry(r.site_id.as_str()).or_insert((Point::new(r.x, r.y), 0.0)).1 += r.cover_percent;
    }
    let coords: Vec<Point> = per_site.values().map(|v| v.0).collect();
    let values: Vec<f64> = per_site.values().map(|v| v.1.ln_1p()).collect();

    let model = if coords.len() < 2 {
        VariogramModel::new(0.0, 0.0, 1.0)?
    } else {
        let bins = empirical_semivariogram(&coords, &values, DEFAULT_BINS, None)?;
        if bins.len() >= 3 {
            fit_exponential(&bins)?
        } else {
            log::warn!("only {} variogram bins; falling back to a nugget-only model", bins.len());
            let mean = bins.iter().map(|b| b.semivariance).sum::<f64>() / bins.len().max(1) as f64;
            VariogramModel::new(mean, 0.0, 1.0)?
        }
    };
    let points: Vec<Point> = targets.iter().map(|t| Point::new(t.x, t.y)).collect();
    let kriged = ordinary_kriging(&coords, &values, &model, &points)?;
    let estimates = targets
        .iter()
        .zip(kriged)
        .map(|(t, v)| (t.site_id.clone(), v.exp_m1().max(0.0)))
        .collect();
    Ok(AbundanceResult { model, estimates })
}
