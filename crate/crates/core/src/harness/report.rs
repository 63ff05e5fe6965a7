//! Evaluation sweeps, baselines, primitive inspection and their report
//! tables.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fault::FaultModelSpec;
use crate::ftt::{evaluate, ftt_train, EvalConfig, TrainConfig};
use crate::harness::config::RunConfig;
use crate::harness::dataset::{Dataset, DatasetSplits};
use crate::nn::{ArchSpec, Model, ParamRole, ParamStore, Rollout};
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub arch: String,
    pub regime: String,
    pub fault: String,
    pub rate: f64,
    pub acc_mean: f64,
    pub acc_std: f64,
    pub seeds: Vec<u64>,
    pub accs: Vec<f64>,
    pub flops: u64,
    pub params: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub kind: String,
    pub config_hash: Option<String>,
    pub seed: u64,
    pub code_version: String,
}

impl ReportMeta {
    pub fn new(kind: &str, cfg: Option<&RunConfig>) -> Result<Self> {
        Ok(Self {
            kind: kind.into(),
            config_hash: cfg.map(RunConfig::hash).transpose()?,
            seed: cfg.map_or(0, |c| c.seed),
            code_version: env!("CARGO_PKG_VERSION").into(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub meta: ReportMeta,
    pub rows: Vec<ReportRow>,
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl EvalReport {
    pub const CSV_HEADER: [&'static str; 10] = ["arch", "regime", "fault", "rate", "acc_mean", "acc_std", "n", "flops", "params", "accs"];

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Config(format!("csv: {e}"));
        w.write_record(Self::CSV_HEADER).map_err(csv_err)?;
        for r in &self.rows {
            let accs: Vec<String> = r.accs.iter().map(|a| a.to_string()).collect();
            w.write_record([
                r.arch.clone(),
                r.regime.clone(),
                r.fault.clone(),
                r.rate.to_string(),
                r.acc_mean.to_string(),
                r.acc_std.to_string(),
                r.accs.len().to_string(),
                r.flops.to_string(),
                r.params.to_string(),
                accs.join(";"),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| arch | regime | fault | rate | accuracy (%) | FLOPs | params |\n|---|---|---|---|---|---|---|\n");
        for r in &self.rows {
            s += &format!(
                "| {} | {} | {} | {} | {:.1} ± {:.1} | {} | {} |\n",
                r.arch,
                r.regime,
                r.fault,
                r.rate,
                100.0 * r.acc_mean,
                100.0 * r.acc_std,
                r.flops,
                r.params
            );
        }
        s
    }

    /// Write `{stem}.json` and `{stem}.csv` under `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<[PathBuf; 2]> {
        std::fs::create_dir_all(dir)?;
        let json = dir.join(format!("{stem}.json"));
        let csv = dir.join(format!("{stem}.csv"));
        std::fs::write(&json, serde_json::to_string_pretty(self)?)?;
        std::fs::write(&csv, self.to_csv()?)?;
        Ok([json, csv])
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    /// Concatenate rows; metadata comes from the first report.
    pub fn merge(reports: Vec<EvalReport>) -> Result<Self> {
        let mut it = reports.into_iter();
        let mut out = it.next().ok_or_else(|| Error::Config("no reports to merge".into()))?;
        out.meta.kind = "merged".into();
        for r in it {
            out.rows.extend(r.rows);
        }
        Ok(out)
    }
}

pub fn write_ndjson<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

/// Accuracy of `model` at every `(rate, seed)` pair. Each seed fixes one
/// weight-fault device instance shared by all rates.
pub fn sweep(
    model: &Model,
    regime: &str,
    test: &Dataset,
    fault: &FaultModelSpec,
    rates: &[f64],
    seeds: &[u64],
    eval: &EvalConfig,
) -> Result<Vec<ReportRow>> {
    let cost = model.cost(test.image_shape())?;
    let mut rows = Vec::with_capacity(rates.len());
    for &rate in rates {
        let f = fault.with_rate(rate);
        f.validate()?;
        let accs = seeds
            .iter()
            .map(|&s| evaluate(&model.arch, &model.store, test, &f, eval, &RngStream::new(s).derive_str("sweep")))
            .collect::<Result<Vec<_>>>()?;
        let (acc_mean, acc_std) = mean_std(&accs);
        rows.push(ReportRow {
            arch: crate::nn::Architecture::label(&model.arch),
            regime: regime.into(),
            fault: fault.name().into(),
            rate,
            acc_mean,
            acc_std,
            seeds: seeds.to_vec(),
            accs,
            flops: cost.flops,
            params: cost.params,
        });
    }
    Ok(rows)
}

/// Build and FTT-train `spec`, then evaluate it clean and under `fault` at
/// its own rate.
#[allow(clippy::too_many_arguments)]
pub fn train_and_evaluate(
    spec: &ArchSpec,
    regime: &str,
    data: &DatasetSplits,
    train: &TrainConfig,
    eval: &EvalConfig,
    fault: &FaultModelSpec,
    eval_seeds: &[u64],
    seed: u64,
) -> Result<(Model, Vec<ReportRow>)> {
    let [c, _, _] = data.train.image_shape();
    let mut model = Model::build(spec, c, data.train.classes, seed)?;
    ftt_train(&mut model, &data.train, train, seed)?;
    let mut rows = sweep(&model, regime, &data.test, &FaultModelSpec::None, &[0.0], &eval_seeds[..1], eval)?;
    if !fault.is_zero() {
        rows.extend(sweep(&model, regime, &data.test, fault, &[fault.rate()], eval_seeds, eval)?);
    }
    Ok((model, rows))
}

/// Clean accuracy on the first eval seed plus faulty accuracy of a trained
/// model under the configured training fault.
pub fn evaluate_rows(model: &Model, data: &DatasetSplits, cfg: &RunConfig) -> Result<Vec<ReportRow>> {
    let seeds = &cfg.sweep.seeds;
    let mut rows = sweep(model, "eval", &data.test, &FaultModelSpec::None, &[0.0], &seeds[..1], &cfg.eval)?;
    let f = cfg.train.fault;
    if !f.is_zero() {
        rows.extend(sweep(model, "eval", &data.test, &f, &[f.rate()], seeds, &cfg.eval)?);
    }
    Ok(rows)
}

/// FTT-train `n` uniformly sampled rollouts (and optionally a selected one)
/// under the configured training fault.
pub fn random_sample_baseline(cfg: &RunConfig, data: &DatasetSplits, selected: Option<&Rollout>) -> Result<EvalReport> {
    let mut rng = RngStream::new(cfg.seed).derive_str("random-sample");
    let mut jobs: Vec<(String, Rollout)> =
        (0..cfg.baseline.samples).map(|k| (format!("random-{k}"), cfg.supernet.space.sample_uniform(&mut rng))).collect();
    if let Some(r) = selected {
        jobs.push(("selected".into(), r.clone()));
    }
    let mut rows = Vec::new();
    for (regime, rollout) in jobs {
        let spec = ArchSpec::Derived { supernet: cfg.supernet.clone(), rollout: rollout.clone() };
        let (_, mut r) =
            train_and_evaluate(&spec, &regime, data, &cfg.train, &cfg.eval, &cfg.train.fault, &cfg.baseline.eval_seeds, cfg.seed)?;
        for row in &mut r {
            row.arch = rollout.to_string();
        }
        rows.extend(r);
    }
    Ok(EvalReport { meta: ReportMeta::new("random-sample-baseline", Some(cfg))?, rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MagnitudeRow {
    pub kind: String,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

/// `|w|` statistics per convolution kind (`conv{k}x{k}`, `dwconv{k}x{k}`),
/// skipping parameters whose name starts with any of `exclude`.
pub fn weight_magnitudes(store: &ParamStore, exclude: &[&str]) -> Vec<MagnitudeRow> {
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for id in store.ids() {
        if exclude.iter().any(|p| store.name(id).starts_with(p)) {
            continue;
        }
        if let ParamRole::Conv { kernel, depthwise } = store.role(id) {
            let key = format!("{}conv{kernel}x{kernel}", if depthwise { "dw" } else { "" });
            groups.entry(key).or_default().extend(store.value(id).data().iter().map(|w| w.abs()));
        }
    }
    groups
        .into_iter()
        .map(|(kind, v)| {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
            MagnitudeRow { kind, mean, std, count: v.len() }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InspectionReport {
    /// Faulty-accuracy rows of the stacked networks, best first.
    pub ranking: EvalReport,
    pub magnitudes: Vec<MagnitudeRow>,
}

/// Train depth-`d` stacks of each primitive under the inspection fault and
/// rank them by faulty accuracy; train the mixed-block network and report
/// weight magnitudes per convolution kind.
pub fn primitive_inspection(cfg: &RunConfig, data: &DatasetSplits) -> Result<InspectionReport> {
    let ic = &cfg.inspect;
    let train = TrainConfig { fault: ic.fault, ..cfg.train.clone() };
    let mut faulty = Vec::new();
    for &p in &ic.primitives {
        let spec = ArchSpec::Stacked { primitive: p, depth: ic.depth, channels: ic.channels };
        let (_, rows) = train_and_evaluate(&spec, "ftt", data, &train, &cfg.eval, &ic.fault, &ic.eval_seeds, cfg.seed)?;
        faulty.extend(rows.into_iter().filter(|r| ic.fault.is_zero() || r.fault != FaultModelSpec::None.name()));
    }
    faulty.sort_by(|a, b| b.acc_mean.total_cmp(&a.acc_mean));
    let mixed = ArchSpec::MixedBlock { depth: ic.mixed_depth, channels: ic.mixed_channels };
    let [c, _, _] = data.train.image_shape();
    let mut model = Model::build(&mixed, c, data.train.classes, cfg.seed)?;
    ftt_train(&mut model, &data.train, &train, cfg.seed)?;
    Ok(InspectionReport {
        ranking: EvalReport { meta: ReportMeta::new("primitive-inspection", Some(cfg))?, rows: faulty },
        magnitudes: weight_magnitudes(&model.store, &["stem"]),
    })
}
