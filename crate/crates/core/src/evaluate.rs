//! Energy score, MAE/RMSE, and k-fold conditional cross-validation comparing
//! the joint model with the independent variant.
//!
//! In each fold one subset of sites has its traits held out and a disjoint
//! subset has its spectra held out. The model is fitted to the remaining
//! complete cases; held-out traits are then predicted from the site's
//! spectrum, and held-out spectra from the site's traits.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSet;
use crate::error::{Error, Result};
use crate::model::{Dataset, ModelVariant};
use crate::predict::{self, PartialSite};
use crate::sampler::{self, PosteriorStore, SamplerConfig};

/// Energy score of an ensemble (rows of `samples`) against `obs`; smaller is better.
///
/// `(1/M) Σ‖X_m − x‖ − (1/2M²) ΣΣ‖X_m − X_m'‖`
pub fn energy_score(samples: &DMatrix<f64>, obs: &DVector<f64>) -> Result<f64> {
    let m = samples.nrows();
    if m < 2 {
        return Err(Error::InvalidInput(format!("energy score needs at least 2 samples, got {m}")));
    }
    if samples.ncols() != obs.len() {
        return Err(Error::dim("energy_score", obs.len(), samples.ncols()));
    }
    // Row-major copy so each sample is contiguous.
    let dim = obs.len();
    let rows: Vec<f64> = (0..m).flat_map(|i| samples.row(i).iter().copied().collect::<Vec<_>>()).collect();
    let row = |i: usize| &rows[i * dim..(i + 1) * dim];
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let to_obs: f64 = (0..m).map(|i| dist(row(i), obs.as_slice())).sum::<f64>() / m as f64;
    let pairs: f64 = (0..m)
        .into_par_iter()
        .map(|i| (i + 1..m).map(|j| dist(row(i), row(j))).sum::<f64>())
        .sum();
    Ok(to_obs - pairs / (m * m) as f64)
}

/// Energy score for a list of sample vectors.
pub fn energy_score_vectors(samples: &[DVector<f64>], obs: &DVector<f64>) -> Result<f64> {
    let dim = obs.len();
    if samples.iter().any(|s| s.len() != dim) {
        return Err(Error::dim("energy_score", dim, "ragged samples"));
    }
    let m = DMatrix::from_fn(samples.len(), dim, |i, k| samples[i][k]);
    energy_score(&m, obs)
}

fn check_pair(pred: &[f64], obs: &[f64]) -> Result<()> {
    if pred.len() != obs.len() {
        return Err(Error::dim("score inputs", obs.len(), pred.len()));
    }
    if pred.is_empty() {
        return Err(Error::InvalidInput("cannot score an empty set".into()));
    }
    Ok(())
}

pub fn mae(pred: &[f64], obs: &[f64]) -> Result<f64> {
    check_pair(pred, obs)?;
    Ok(pred.iter().zip(obs).map(|(p, o)| (p - o).abs()).sum::<f64>() / pred.len() as f64)
}

pub fn rmse(pred: &[f64], obs: &[f64]) -> Result<f64> {
    check_pair(pred, obs)?;
    Ok((pred.iter().zip(obs).map(|(p, o)| (p - o) * (p - o)).sum::<f64>() / pred.len() as f64).sqrt())
}

/// MAE and RMSE computed per wavelength over held-out spectra (rows), then averaged over wavelengths.
pub fn wavelength_averaged_scores(pred: &DMatrix<f64>, obs: &DMatrix<f64>) -> Result<(f64, f64)> {
    if pred.shape() != obs.shape() {
        return Err(Error::dim("spectrum scores", format!("{:?}", obs.shape()), format!("{:?}", pred.shape())));
    }
    if pred.is_empty() {
        return Err(Error::InvalidInput("cannot score an empty set".into()));
    }
    let w = pred.ncols();
    let mut mae_sum = 0.0;
    let mut rmse_sum = 0.0;
    for i in 0..w {
        let p: Vec<f64> = pred.column(i).iter().copied().collect();
        let o: Vec<f64> = obs.column(i).iter().copied().collect();
        mae_sum += mae(&p, &o)?;
        rmse_sum += rmse(&p, &o)?;
    }
    Ok((mae_sum / w as f64, rmse_sum / w as f64))
}

/// Site ids held out per fold; trait and spectrum holdouts are disjoint within a fold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub trait_holdout: Vec<Vec<String>>,
    pub spectrum_holdout: Vec<Vec<String>>,
}

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.trait_holdout.len()
    }

    pub fn validate(&self, site_ids: &[String]) -> Result<()> {
        let all: BTreeSet<&String> = site_ids.iter().collect();
        for (name, folds) in [("trait", &self.trait_holdout), ("spectrum", &self.spectrum_holdout)] {
            let mut seen = BTreeSet::new();
            for id in folds.iter().flatten() {
                if !all.contains(id) || !seen.insert(id) {
                    return Err(Error::InvalidInput(format!("{name} holdout: site {id} unknown or repeated")));
                }
            }
            if seen.len() != all.len() {
                return Err(Error::InvalidInput(format!("{name} holdout does not cover every site")));
            }
        }
        for (t, r) in self.trait_holdout.iter().zip(&self.spectrum_holdout) {
            let t: BTreeSet<&String> = t.iter().collect();
            if r.iter().any(|id| t.contains(id)) {
                return Err(Error::InvalidInput("trait and spectrum holdouts overlap within a fold".into()));
            }
        }
        Ok(())
    }
}

/// Random balanced k-fold plan over `site_ids`; independent of the input order.
pub fn make_fold_plan(site_ids: &[String], k: usize, seed: u64) -> Result<FoldPlan> {
    let n = site_ids.len();
    if k < 2 || n < 2 * k {
        return Err(Error::InvalidInput(format!("need k >= 2 and at least 2k sites (k = {k}, n = {n})")));
    }
    let mut ids: Vec<String> = site_ids.to_vec();
    ids.sort();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidInput("site ids must be unique for cross-validation".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut trait_fold = vec![0usize; n];
    for (pos, &i) in order.iter().enumerate() {
        trait_fold[i] = pos % k;
    }
    order.shuffle(&mut rng);
    let mut spectrum_fold = vec![0usize; n];
    for (pos, &i) in order.iter().enumerate() {
        spectrum_fold[i] = pos % k;
    }
    // Repair sites whose two holdouts collide by swapping spectrum folds; sizes are preserved.
    for i in 0..n {
        if spectrum_fold[i] != trait_fold[i] {
            continue;
        }
        let mut candidates: Vec<usize> = (0..n)
            .filter(|&j| spectrum_fold[j] != trait_fold[i] && spectrum_fold[i] != trait_fold[j])
            .collect();
        candidates.shuffle(&mut rng);
        let j = *candidates
            .first()
            .ok_or_else(|| Error::InvalidInput("could not build disjoint fold plan".into()))?;
        spectrum_fold.swap(i, j);
    }
    let mut plan = FoldPlan {
        trait_holdout: vec![Vec::new(); k],
        spectrum_holdout: vec![Vec::new(); k],
    };
    for i in 0..n {
        plan.trait_holdout[trait_fold[i]].push(ids[i].clone());
        plan.spectrum_holdout[spectrum_fold[i]].push(ids[i].clone());
    }
    plan.validate(&ids)?;
    Ok(plan)
}

/// Energy score for one held-out site.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteScore {
    pub site_id: String,
    pub fold: usize,
    pub es: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldScores {
    pub fold: usize,
    pub trait_es: f64,
    pub spectrum_es: f64,
}

/// Cross-validated scores for one model variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub variant: ModelVariant,
    pub trait_names: Vec<String>,
    pub trait_mae: Vec<f64>,
    pub trait_rmse: Vec<f64>,
    pub trait_es: f64,
    pub spectrum_mae: f64,
    pub spectrum_rmse: f64,
    pub spectrum_es: f64,
    pub folds: Vec<FoldScores>,
    pub trait_sites: Vec<SiteScore>,
    pub spectrum_sites: Vec<SiteScore>,
}

fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(fold as u64 + 1))
}

struct SitePrediction {
    site_id: String,
    mean: DVector<f64>,
    obs: DVector<f64>,
    es: f64,
}

struct FoldOutcome {
    traits: Vec<SitePrediction>,
    spectra: Vec<SitePrediction>,
}

fn sorted_rows(ids: &[String], index: &HashMap<&str, usize>) -> Vec<usize> {
    let mut ids: Vec<&String> = ids.iter().collect();
    ids.sort();
    ids.into_iter().map(|id| index[id.as_str()]).collect()
}

fn run_fold(
    data: &Dataset,
    bases: &BasisSet,
    config: &SamplerConfig,
    plan: &FoldPlan,
    fold: usize,
    index: &HashMap<&str, usize>,
) -> Result<FoldOutcome> {
    let held: BTreeSet<&String> = plan.trait_holdout[fold].iter().chain(&plan.spectrum_holdout[fold]).collect();
    let mut train_ids: Vec<String> = data.site_ids.iter().filter(|id| !held.contains(id)).cloned().collect();
    train_ids.sort();
    let train_rows: Vec<usize> = train_ids.iter().map(|id| index[id.as_str()]).collect();
    let train = data.subset(&train_rows);
    let fit_config = SamplerConfig {
        seed: fold_seed(config.seed, fold),
        ..config.clone()
    };
    let store: PosteriorStore = sampler::run_chain(&train, bases, &fit_config)?;
    let pred_seed = fold_seed(fit_config.seed, 1_000);

    let traits = sorted_rows(&plan.trait_holdout[fold], index)
        .into_iter()
        .enumerate()
        .map(|(k, row)| {
            let site = PartialSite::from_blocks(
                data.site_ids[row].clone(),
                data.e.row(row).transpose(),
                None,
                Some(data.r.row(row).transpose()),
            )?;
            let pred = predict::predict_traits_given_r(&store, &site, bases, pred_seed.wrapping_add(k as u64))?;
            let obs = data.t.row(row).transpose();
            let es = energy_score(&pred.draws, &obs)?;
            Ok(SitePrediction {
                site_id: site.site_id,
                mean: pred.mean,
                obs,
                es,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let spectra = sorted_rows(&plan.spectrum_holdout[fold], index)
        .into_iter()
        .enumerate()
        .map(|(k, row)| {
            let site = PartialSite::from_blocks(
                data.site_ids[row].clone(),
                data.e.row(row).transpose(),
                Some(data.t.row(row).transpose()),
                None,
            )?;
            let pred = predict::predict_r_given_traits(&store, &site, bases, pred_seed.wrapping_add(1_000_000 + k as u64))?;
            let obs = data.r.row(row).transpose();
            let es = energy_score(&pred.draws, &obs)?;
            Ok(SitePrediction {
                site_id: site.site_id,
                mean: pred.mean,
                obs,
                es,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FoldOutcome { traits, spectra })
}

/// Cross-validate one variant under `plan`.
pub fn run_cv_with_plan(
    data: &Dataset,
    bases: &BasisSet,
    config: &SamplerConfig,
    variant: ModelVariant,
    plan: &FoldPlan,
) -> Result<ScoreReport> {
    plan.validate(&data.site_ids)?;
    let index: HashMap<&str, usize> = data.site_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let config = SamplerConfig {
        variant,
        ..config.clone()
    };
    let outcomes = (0..plan.k())
        .into_par_iter()
        .map(|fold| run_fold(data, bases, &config, plan, fold, &index).map_err(|e| Error::Fold { fold, source: Box::new(e) }))
        .collect::<Result<Vec<_>>>()?;

    let s = data.s();
    let mut trait_pred = vec![Vec::new(); s];
    let mut trait_obs = vec![Vec::new(); s];
    let mut spec_pred = Vec::new();
    let mut spec_obs = Vec::new();
    let mut folds = Vec::new();
    let mut trait_sites = Vec::new();
    let mut spectrum_sites = Vec::new();
    for (fold, out) in outcomes.iter().enumerate() {
        for p in &out.traits {
            for k in 0..s {
                trait_pred[k].push(p.mean[k]);
                trait_obs[k].push(p.obs[k]);
            }
            trait_sites.push(SiteScore {
                site_id: p.site_id.clone(),
                fold,
                es: p.es,
            });
        }
        for p in &out.spectra {
            spec_pred.push(p.mean.clone());
            spec_obs.push(p.obs.clone());
            spectrum_sites.push(SiteScore {
                site_id: p.site_id.clone(),
                fold,
                es: p.es,
            });
        }
        let mean_es = |v: &[SitePrediction]| v.iter().map(|p| p.es).sum::<f64>() / v.len().max(1) as f64;
        folds.push(FoldScores {
            fold,
            trait_es: mean_es(&out.traits),
            spectrum_es: mean_es(&out.spectra),
        });
    }
    let trait_mae = (0..s).map(|k| mae(&trait_pred[k], &trait_obs[k])).collect::<Result<Vec<_>>>()?;
    let trait_rmse = (0..s).map(|k| rmse(&trait_pred[k], &trait_obs[k])).collect::<Result<Vec<_>>>()?;
    let w = data.n_wavelengths();
    let pred_m = DMatrix::from_fn(spec_pred.len(), w, |i, j| spec_pred[i][j]);
    let obs_m = DMatrix::from_fn(spec_obs.len(), w, |i, j| spec_obs[i][j]);
    let (spectrum_mae, spectrum_rmse) = wavelength_averaged_scores(&pred_m, &obs_m)?;
    let mean = |v: &[SiteScore]| v.iter().map(|x| x.es).sum::<f64>() / v.len() as f64;
    Ok(ScoreReport {
        variant,
        trait_names: (1..=s).map(|k| format!("trait{k}")).collect(),
        trait_mae,
        trait_rmse,
        trait_es: mean(&trait_sites),
        spectrum_mae,
        spectrum_rmse,
        spectrum_es: mean(&spectrum_sites),
        folds,
        trait_sites,
        spectrum_sites,
    })
}

/// k-fold CV of one variant with a plan drawn from `config.seed`.
pub fn run_cv(data: &Dataset, bases: &BasisSet, config: &SamplerConfig, variant: ModelVariant, k: usize) -> Result<ScoreReport> {
    let plan = make_fold_plan(&data.site_ids, k, config.seed)?;
    run_cv_with_plan(data, bases, config, variant, &plan)
}

/// Fit with the cross block of Ω held at zero.
pub fn fit_independent_variant(data: &Dataset, bases: &BasisSet, config: &SamplerConfig) -> Result<PosteriorStore> {
    let config = SamplerConfig {
        variant: ModelVariant::Independent,
        ..config.clone()
    };
    sampler::run_chain(data, bases, &config)
}

/// Both variants scored on the same folds and fold seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub plan: FoldPlan,
    pub independent: ScoreReport,
    pub joint: ScoreReport,
}

pub fn compare_models(data: &Dataset, bases: &BasisSet, config: &SamplerConfig, k: usize) -> Result<ComparisonReport> {
    let plan = make_fold_plan(&data.site_ids, k, config.seed)?;
    let independent = run_cv_with_plan(data, bases, config, ModelVariant::Independent, &plan)?;
    let joint = run_cv_with_plan(data, bases, config, ModelVariant::Joint, &plan)?;
    Ok(ComparisonReport { plan, independent, joint })
}

/// Mean and standard error of the paired per-site ES differences (joint − independent).
pub fn paired_es_difference(joint: &[SiteScore], independent: &[SiteScore]) -> Result<(f64, f64)> {
    let lookup: HashMap<&str, f64> = independent.iter().map(|s| (s.site_id.as_str(), s.es)).collect();
    let diffs = joint
        .iter()
        .map(|s| {
            lookup
                .get(s.site_id.as_str())
                .map(|other| s.es - other)
                .ok_or_else(|| Error::InvalidInput(format!("site {} missing from the other report", s.site_id)))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = diffs.len();
    if n < 2 {
        return Err(Error::InvalidInput("need at least two paired sites".into()));
    }
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok((mean, (var / n as f64).sqrt()))
}

fn model_label(v: ModelVariant) -> &'static str {
    match v {
        ModelVariant::Joint => "[T,R|E]",
        ModelVariant::Independent => "[T|E][R|E]",
    }
}

impl ComparisonReport {
    pub fn with_trait_names(mut self, names: &[String]) -> Self {
        self.independent.trait_names = names.to_vec();
        self.joint.trait_names = names.to_vec();
        self
    }

    fn rows(&self) -> Vec<(String, &'static str, f64, f64, Option<f64>)> {
        let mut rows = Vec::new();
        for report in [&self.independent, &self.joint] {
            let label = model_label(report.variant);
            for (k, name) in report.trait_names.iter().enumerate() {
                let es = (k == 0).then_some(report.trait_es);
                rows.push((format!("log {name}"), label, report.trait_mae[k], report.trait_rmse[k], es));
            }
            rows.push((
                "log Reflectance".to_string(),
                label,
                report.spectrum_mae,
                report.spectrum_rmse,
                Some(report.spectrum_es),
            ));
        }
        rows
    }

    /// `quantity,model,MAE,RMSE,ES`; the block ES is repeated on every trait row.
    /// Model labels contain commas and are always quoted.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("quantity,model,MAE,RMSE,ES\n");
        for report in [&self.independent, &self.joint] {
            let label = model_label(report.variant);
            for (k, name) in report.trait_names.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "log {name},\"{label}\",{:.6},{:.6},{:.6}",
                    report.trait_mae[k], report.trait_rmse[k], report.trait_es
                );
            }
            let _ = writeln!(
                out,
                "log Reflectance,\"{label}\",{:.6},{:.6},{:.6}",
                report.spectrum_mae, report.spectrum_rmse, report.spectrum_es
            );
        }
        out
    }

    /// Aligned text table; the trait-block ES appears once per block.
    pub fn to_table(&self) -> String {
        let rows = self.rows();
        let qw = rows.iter().map(|r| r.0.len()).max().unwrap_or(8).max(8);
        let mw = 11;
        let mut out = String::new();
        let _ = writeln!(out, "{:<qw$}  {:<mw$}  {:>8}  {:>8}  {:>8}", "Quantity", "Model", "MAE", "RMSE", "ES");
        let _ = writeln!(out, "{}", "-".repeat(qw + mw + 34));
        for (q, m, mae, rmse, es) in rows {
            let es = es.map_or(String::new(), |v| format!("{v:.3}"));
            let _ = writeln!(out, "{q:<qw$}  {m:<mw$}  {mae:>8.3}  {rmse:>8.3}  {es:>8}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn energy_score_hand_value() {
        let es = energy_score(&col(&[0.0, 2.0]), &DVector::from_vec(vec![1.0])).unwrap();
        assert!((es - 0.5).abs() < 1e-15);
    }

    #[test]
    fn energy_score_perfect_forecast_is_zero() {
        let samples = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        assert_eq!(energy_score(&samples, &DVector::from_vec(vec![1.0, 2.0])).unwrap(), 0.0);
    }

    #[test]
    fn energy_score_errors() {
        assert!(energy_score(&col(&[1.0]), &DVector::from_vec(vec![1.0])).is_err());
        assert!(energy_score(&col(&[1.0, 2.0]), &DVector::from_vec(vec![1.0, 2.0])).is_err());
    }

    #[test]
    fn mae_rmse_values() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae(&[1.0, -1.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(rmse(&[1.0, -1.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(mae(&[0.0, 2.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert!((rmse(&[0.0, 2.0], &[0.0, 0.0]).unwrap() - std::f64::consts::SQRT_2).abs() < 1e-6);
        assert!(mae(&[], &[]).is_err());
    }

    #[test]
    fn fold_plan_small() {
        let ids: Vec<String> = (0..20).map(|i| format!("s{i:02}")).collect();
        let plan = make_fold_plan(&ids, 10, 7).unwrap();
        assert!(plan.trait_holdout.iter().all(|f| f.len() == 2));
        assert!(plan.spectrum_holdout.iter().all(|f| f.len() == 2));
        assert!(make_fold_plan(&ids[..19], 10, 7).is_err());
    }

    #[test]
    fn fold_plan_ignores_input_order() {
        let ids: Vec<String> = (0..35).map(|i| format!("s{i:02}")).collect();
        let mut rev = ids.clone();
        rev.reverse();
        assert_eq!(make_fold_plan(&ids, 10, 3).unwrap(), make_fold_plan(&rev, 10, 3).unwrap());
    }
}
