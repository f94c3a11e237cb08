use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use statforge::abc::{
    fit_standardizer, rejection_abc, sabc_run, DistanceRecord, EncoderSummary, MapSimulator, Summarizer,
    SufficientSummary,
};
use statforge::config::RunConfig;
use statforge::diagnostics::{self, histogram_table, trace_table};
use statforge::enca;
use statforge::error::Error;
use statforge::inca;
use statforge::io::{self, Table};
use statforge::manifest::RunManifest;
use statforge::mcmc::metropolis_run;
use statforge::models::{BareNoise, ModelId, Trajectory};
use statforge::pipeline::{self, Architecture, WeightsMeta};
use statforge::rng;
use statforge::samples::SampleSet;
use statforge::suffstats;
use statforge::train::{draw_realization, LogEntry};

use crate::Global;

#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] Error),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) | Failure::Runtime(Error::Config(_)) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

type Res<T = ()> = Result<T, Failure>;

pub struct Context {
    pub global: Global,
    pub threads: usize,
    args: Vec<String>,
}

/// One output directory with its manifest.
struct Stage {
    dir: PathBuf,
    manifest: RunManifest,
    start: Instant,
}

impl Stage {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn input(&mut self, p: &Path) -> Res {
        self.manifest.add_input(p)?;
        Ok(())
    }

    fn finish(mut self) -> Res {
        self.manifest.wall_seconds = self.start.elapsed().as_secs_f64();
        self.manifest.record_outputs(&self.dir)?;
        self.manifest.save(&self.dir)?;
        Ok(())
    }
}

impl Context {
    pub fn new(global: Global, threads: usize) -> Self {
        Self {
            global,
            threads,
            args: std::env::args().collect(),
        }
    }

    fn config(&self) -> Res<RunConfig> {
        let mut cfg = RunConfig::resolve(self.global.config.as_deref(), self.global.model, &self.global.set)
            .map_err(|e| Failure::Usage(e.to_string()))?;
        if let Some(s) = self.global.seed {
            cfg.set_seed(s);
            cfg.model.observation_seed = s;
        }
        Ok(cfg)
    }

    fn stage(&self, command: &str, dir: &Path, cfg: &RunConfig) -> Res<Stage> {
        std::fs::create_dir_all(dir).map_err(Error::from)?;
        Ok(Stage {
            dir: dir.to_path_buf(),
            manifest: RunManifest::new(command, self.args.clone(), cfg.clone(), self.threads)?,
            start: Instant::now(),
        })
    }
}

fn require_file(p: &Path, flag: &str) -> Res {
    if p.is_file() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{flag}: no such file `{}`", p.display())))
    }
}

fn observed(cfg: &RunConfig, file: Option<&Path>, stage: &mut Stage) -> Res<Trajectory> {
    match file {
        Some(p) => {
            require_file(p, "--observation")?;
            stage.input(p)?;
            Ok(io::trajectory_from_table(&Table::load(p)?)?)
        }
        None => Ok(pipeline::observation(&cfg.model)?),
    }
}

fn log_progress(tag: &'static str) -> impl FnMut(&LogEntry) {
    move |e| {
        log::info!(
            "{tag} step {} loss {:.5} ({:.5} + {:.5}) {:.0}s",
            e.step,
            e.loss,
            e.regression,
            e.reconstruction,
            e.wall_seconds
        )
    }
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Comma-separated parameters; defaults to `model.theta`.
    #[arg(long, value_delimiter = ',')]
    pub theta: Option<Vec<f64>>,

    /// Independent noise realizations.
    #[arg(long, default_value_t = 1)]
    pub replicas: usize,
}

pub fn simulate(ctx: &Context, a: &SimulateArgs) -> Res {
    let cfg = ctx.config()?;
    let mut st = ctx.stage("simulate", &ctx.global.out, &cfg)?;
    run_simulate(&cfg, a, &mut st)?;
    st.finish()
}

fn run_simulate(cfg: &RunConfig, a: &SimulateArgs, st: &mut Stage) -> Res {
    let m = &cfg.model;
    let theta = a.theta.clone().unwrap_or_else(|| m.theta.clone());
    if theta.len() != m.id.n_params() {
        return Err(Failure::Usage(format!("--theta needs {} values for {}", m.id.n_params(), m.id)));
    }
    if a.replicas == 0 {
        return Err(Failure::Usage("--replicas must be ≥ 1".into()));
    }
    let model = m.model();
    let trajs = (0..a.replicas as u64)
        .map(|i| {
            let noise = BareNoise::draw(m.id, m.n, &mut rng::stream(m.observation_seed, rng::domain::OBS, 0, i));
            model.simulate(&theta, &noise, m.x0, m.n)
        })
        .collect::<Result<Vec<_>, _>>()?;
    if let [t] = trajs.as_slice() {
        io::trajectory_table(t).save(&st.path("trajectory.csv"))?;
    } else {
        let mut tab = Table::new(std::iter::once("step".to_string()).chain((1..=a.replicas).map(|k| format!("x{k}"))).collect());
        tab.rows.push(std::iter::once(0.0).chain(trajs.iter().map(|t| t.x0)).collect());
        for i in 0..m.n {
            tab.rows.push(std::iter::once((i + 1) as f64).chain(trajs.iter().map(|t| t.x[i])).collect());
        }
        tab.save(&st.path("trajectories.csv"))?;
        let rows: Vec<Vec<f64>> = trajs.into_iter().map(|t| t.x).collect();
        io::write_batch(std::fs::File::create(st.path("trajectories.bin")).map_err(Error::from)?, &rows)?;
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct BifurcationArgs {
    #[arg(long, default_value_t = 400)]
    pub points: usize,
    #[arg(long, default_value_t = 1000)]
    pub transient: usize,
    #[arg(long, default_value_t = 100)]
    pub record: usize,
    /// Constant additive term; defaults to ε/2 for DYNAMO and 0 for NLAR1.
    #[arg(long)]
    pub additive: Option<f64>,
}

pub fn bifurcation(ctx: &Context, a: &BifurcationArgs) -> Res {
    let cfg = ctx.config()?;
    let st = ctx.stage("bifurcation", &ctx.global.out, &cfg)?;
    let m = &cfg.model;
    let (lo, hi) = (m.lower[0], m.upper[0]);
    let k = a.points.max(2);
    let grid: Vec<f64> = (0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64).collect();
    let additive = a.additive.unwrap_or(match m.id {
        ModelId::Nlar1 => 0.0,
        ModelId::Dynamo => m.theta[2] / 2.0,
    });
    diagnostics::bifurcation_table(&m.model(), &grid, a.transient, a.record, m.x0, additive)
        .save(&st.path("bifurcation.csv"))?;
    st.finish()
}

#[derive(Args, Debug)]
pub struct SuffstatsArgs {
    /// Trajectory CSV files; one output row each.
    #[arg(long)]
    pub input: Vec<PathBuf>,
    /// Without inputs: number of prior draws to simulate.
    #[arg(long, default_value_t = 1000)]
    pub count: usize,
}

pub fn suffstats(ctx: &Context, a: &SuffstatsArgs) -> Res {
    let cfg = ctx.config()?;
    if cfg.model.id != ModelId::Nlar1 {
        return Err(Failure::Usage("suffstats is defined for nlar1".into()));
    }
    let mut st = ctx.stage("suffstats", &ctx.global.out, &cfg)?;
    let stat_cols = suffstats::EXPORT_COLUMNS.map(String::from);
    let row = |t: &Trajectory| match suffstats::sufficient_stats(t) {
        Ok(s) => s.export_row(),
        Err(_) => vec![f64::NAN; 4],
    };
    let tab = if a.input.is_empty() {
        let prior = cfg.model.prior()?;
        let model = cfg.model.model();
        let mut tab = Table::new(prior.names.iter().cloned().chain(stat_cols).collect());
        for i in 0..a.count as u64 {
            let r = draw_realization(&model, &prior, cfg.model.n, &mut rng::stream(cfg.abc.seed, rng::domain::DIAG, 4, i));
            tab.push(r.theta.iter().copied().chain(row(&r.trajectory)).collect())?;
        }
        tab
    } else {
        let mut tab = Table::new(stat_cols.to_vec());
        for p in &a.input {
            require_file(p, "--input")?;
            st.input(p)?;
            tab.push(row(&io::trajectory_from_table(&Table::load(p)?)?))?;
        }
        tab
    };
    tab.save(&st.path("suffstats.csv"))?;
    st.finish()
}

fn save_checkpoint_on_divergence(e: Error, st: &Stage, name: &str) -> Failure {
    if let Error::TrainingDiverged { checkpoint, .. } = &e {
        if let Err(w) = io::save_weights(&st.path(name), checkpoint, serde_json::Value::Null) {
            log::warn!("could not save checkpoint: {w}");
        }
    }
    Failure::Runtime(e)
}

fn write_log(st: &Stage, name: &str, log: &[LogEntry]) -> Res {
    let f = std::fs::File::create(st.path(name)).map_err(Error::from)?;
    pipeline::write_log(std::io::BufWriter::new(f), log)?;
    Ok(())
}

pub fn train_enca(ctx: &Context) -> Res {
    let cfg = ctx.config()?;
    let mut st = ctx.stage("train-enca", &ctx.global.out, &cfg)?;
    run_train_enca(&cfg, &mut st)?;
    st.finish()
}

fn run_train_enca(cfg: &RunConfig, st: &mut Stage) -> Res<PathBuf> {
    let model = cfg.model.model();
    let prior = cfg.model.prior()?;
    let (out, c_x) = enca::train_enca(&model, &prior, &cfg.enca, &mut log_progress("enca"))
        .map_err(|e| save_checkpoint_on_divergence(e, st, "enca.checkpoint.sfw"))?;
    let meta = WeightsMeta {
        architecture: Architecture::Enca,
        model: cfg.model.id,
        q: cfg.enca.q,
        p: cfg.enca.p,
        n: cfg.enca.n,
        steps: cfg.enca.steps,
        seed: cfg.enca.seed,
        c_x: Some(c_x),
        init: pipeline::INIT_SPEC.into(),
        f2: (cfg.model.id == ModelId::Dynamo).then_some(cfg.model.f2),
    };
    let path = st.path("enca.sfw");
    pipeline::save_trained(&path, &out.weights, &meta)?;
    pipeline::save_encoder_only(&st.path("encoder.sfw"), &out.weights, &meta)?;
    write_log(st, "enca_log.jsonl", &out.log)?;
    Ok(path)
}

pub fn train_inca(ctx: &Context) -> Res {
    let cfg = ctx.config()?;
    let st = ctx.stage("train-inca", &ctx.global.out, &cfg)?;
    let model = cfg.model.model();
    let prior = cfg.model.prior()?;
    let out = inca::train_inca(&model, &prior, &cfg.inca, &mut log_progress("inca"))
        .map_err(|e| save_checkpoint_on_divergence(e, &st, "inca.checkpoint.sfw"))?;
    let meta = WeightsMeta {
        architecture: Architecture::Inca,
        model: cfg.model.id,
        q: cfg.inca.q,
        p: cfg.inca.p,
        n: cfg.inca.n,
        steps: cfg.inca.steps,
        seed: cfg.inca.seed,
        c_x: None,
        init: pipeline::INIT_SPEC.into(),
        f2: (cfg.model.id == ModelId::Dynamo).then_some(cfg.model.f2),
    };
    pipeline::save_trained(&st.path("inca.sfw"), &out.weights, &meta)?;
    pipeline::save_encoder_only(&st.path("encoder.sfw"), &out.weights, &meta)?;
    write_log(&st, "inca_log.jsonl", &out.log)?;
    st.finish()
}

#[derive(Args, Debug)]
pub struct EncodeArgs {
    /// Trained weight file.
    #[arg(long)]
    pub weights: PathBuf,
    /// Trajectory CSV files; defaults to the configured observation.
    #[arg(long)]
    pub input: Vec<PathBuf>,
}

pub fn encode(ctx: &Context, a: &EncodeArgs) -> Res {
    let cfg = ctx.config()?;
    require_file(&a.weights, "--weights")?;
    let mut st = ctx.stage("encode", &ctx.global.out, &cfg)?;
    st.input(&a.weights)?;
    let (enc, _) = pipeline::load_encoder(&a.weights, cfg.model.id)?;
    let mut trajs = Vec::new();
    for p in &a.input {
        require_file(p, "--input")?;
        st.input(p)?;
        trajs.push(io::trajectory_from_table(&Table::load(p)?)?);
    }
    if trajs.is_empty() {
        trajs.push(pipeline::observation(&cfg.model)?);
    }
    let mut tab = Table::new((1..=enc.q()).map(|k| format!("s{k}")).collect());
    for t in &trajs {
        tab.push(enc.encode(t)?.values)?;
    }
    tab.save(&st.path("stats.csv"))?;
    st.finish()
}

#[derive(Args, Debug)]
pub struct AbcArgs {
    /// Trained weight file providing the statistics.
    #[arg(long, required_unless_present = "sufficient")]
    pub weights: Option<PathBuf>,
    /// Use (α̂, √σ̂², o) instead of learned statistics (NLAR1).
    #[arg(long, conflicts_with = "weights")]
    pub sufficient: bool,
    /// Zero-based statistic indices to keep, e.g. `0,1`.
    #[arg(long, value_delimiter = ',', conflicts_with = "q")]
    pub components: Option<Vec<usize>>,
    /// Use the first `q` statistics.
    #[arg(long)]
    pub q: Option<usize>,
    /// Simulation budget; overrides `abc.budget`.
    #[arg(long)]
    pub budget: Option<usize>,
    /// Particle count; overrides `abc.population`.
    #[arg(long)]
    pub population: Option<usize>,
    /// Observed trajectory CSV; defaults to the configured observation.
    #[arg(long)]
    pub observation: Option<PathBuf>,
    /// Plain rejection sampling from the prior instead of SABC.
    #[arg(long)]
    pub rejection: bool,
    /// Fraction kept by rejection sampling.
    #[arg(long, default_value_t = 0.01)]
    pub keep: f64,
    #[arg(long, default_value_t = 0.99)]
    pub quantile: f64,
    #[arg(long, default_value_t = 30)]
    pub bins: usize,
}

pub fn abc(ctx: &Context, a: &AbcArgs) -> Res {
    let mut cfg = ctx.config()?;
    if let Some(b) = a.budget {
        cfg.abc.budget = b;
    }
    if let Some(n) = a.population {
        cfg.abc.population = n;
    }
    cfg.abc.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    if let Some(w) = &a.weights {
        require_file(w, "--weights")?;
    }
    let mut st = ctx.stage("abc", &ctx.global.out, &cfg)?;
    run_abc(&cfg, a, &mut st)?;
    st.finish()
}

fn distance_table(rec: &DistanceRecord) -> Table {
    let q = rec.components.first().map_or(0, Vec::len);
    let mut cols: Vec<String> = (1..=q).map(|k| format!("d{k}")).collect();
    cols.push("total".into());
    Table {
        columns: cols,
        rows: rec
            .components
            .iter()
            .zip(&rec.total)
            .map(|(c, t)| c.iter().copied().chain([*t]).collect())
            .collect(),
    }
}

fn run_abc(cfg: &RunConfig, a: &AbcArgs, st: &mut Stage) -> Res<SampleSet> {
    let id = cfg.model.id;
    let prior = cfg.model.prior()?;
    let obs = observed(cfg, a.observation.as_deref(), st)?;
    let summary: Box<dyn Summarizer> = match &a.weights {
        Some(w) => {
            st.input(w)?;
            let (enc, _) = pipeline::load_encoder(w, id)?;
            let components = a.components.clone().or(a.q.map(|q| (0..q).collect()));
            match &components {
                Some(c) => {
                    if let Some(bad) = c.iter().find(|&&k| k >= enc.q()) {
                        return Err(Failure::Usage(format!("--components: index {bad} ≥ q={}", enc.q())));
                    }
                    Box::new(EncoderSummary::select(enc, c.clone()))
                }
                None => Box::new(EncoderSummary::new(enc)),
            }
        }
        None if id == ModelId::Nlar1 => Box::new(SufficientSummary { x0: obs.x0 }),
        None => return Err(Failure::Usage("--sufficient is defined for nlar1".into())),
    };
    let sim = MapSimulator {
        model: cfg.model.model(),
        x0: obs.x0,
        n: obs.len(),
    };
    let s_obs = summary.summarize(std::slice::from_ref(&obs.x))?.remove(0);
    if s_obs.iter().any(|v| !v.is_finite()) {
        return Err(Error::UndefinedStatistic("observed statistics are not finite").into());
    }
    let (samples, record) = if a.rejection {
        let std = fit_standardizer(&sim, summary.as_ref(), &prior, cfg.abc.standardizer_runs, cfg.abc.seed)?;
        rejection_abc(&sim, summary.as_ref(), &prior, &s_obs, &std, cfg.abc.budget, a.keep, cfg.abc.seed)?
    } else {
        let r = sabc_run(&sim, summary.as_ref(), &prior, &s_obs, None, &cfg.abc)?;
        trace_table(&r.record).save(&st.path("trace.csv"))?;
        let info = serde_json::json!({
            "simulations": r.simulations,
            "stagnated": r.stagnated,
            "standardizer": r.standardizer,
            "observed_statistics": s_obs,
        });
        std::fs::write(st.path("abc.json"), serde_json::to_vec_pretty(&info).map_err(Error::from)?).map_err(Error::from)?;
        (r.samples, r.record)
    };
    let mut tab = io::samples_table(&samples);
    tab.columns.push("distance".into());
    for (row, d) in tab.rows.iter_mut().zip(&record.total) {
        row.push(*d);
    }
    tab.save(&st.path("samples.csv"))?;
    distance_table(&record).save(&st.path("distances.csv"))?;
    let p = prior.dim();
    let qs = diagnostics::distance_quantiles(&record, p, a.quantile)?;
    Table {
        columns: (1..=qs.len()).map(|k| format!("d{k}")).collect(),
        rows: vec![qs],
    }
    .save(&st.path("quantiles.csv"))?;
    histogram_table(&diagnostics::distance_histograms(&record, p, a.bins)).save(&st.path("histograms.csv"))?;
    Ok(samples)
}

#[derive(Args, Debug)]
pub struct McmcArgs {
    /// Observed trajectory CSV; defaults to the configured observation.
    #[arg(long)]
    pub observation: Option<PathBuf>,
}

pub fn mcmc(ctx: &Context, a: &McmcArgs) -> Res {
    let cfg = ctx.config()?;
    let mut st = ctx.stage("mcmc", &ctx.global.out, &cfg)?;
    run_mcmc(&cfg, a.observation.as_deref(), &mut st)?;
    st.finish()
}

fn run_mcmc(cfg: &RunConfig, observation: Option<&Path>, st: &mut Stage) -> Res<SampleSet> {
    let prior = cfg.model.prior()?;
    let obs = observed(cfg, observation, st)?;
    let r = metropolis_run(&cfg.model.model(), &prior, &obs, &cfg.mcmc)?;
    io::save_samples(&r.samples, &st.path("samples.csv"))?;
    let info = serde_json::json!({
        "acceptance_rate": r.acceptance_rate,
        "scales": r.scales,
        "mixing_warning": r.mixing_warning,
        "mean": r.samples.mean(),
        "sd": r.samples.sd(),
    });
    std::fs::write(st.path("mcmc.json"), serde_json::to_vec_pretty(&info).map_err(Error::from)?).map_err(Error::from)?;
    Ok(r.samples)
}

#[derive(Args, Debug)]
pub struct DiagnoseArgs {
    /// Posterior samples to assess.
    #[arg(long, requires = "reference")]
    pub samples: Vec<PathBuf>,
    /// Reference posterior samples (typically Metropolis).
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Weights for regression and latent scatter tables.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// ENCA weight files to overlay reconstructions from.
    #[arg(long)]
    pub recon: Vec<PathBuf>,
    /// `distances.csv` from an ABC run.
    #[arg(long)]
    pub distances: Option<PathBuf>,
    /// Held-out draws for the scatter tables.
    #[arg(long, default_value_t = 1000)]
    pub held_out: usize,
    #[arg(long, default_value_t = 0.99)]
    pub quantile: f64,
    #[arg(long, default_value_t = 30)]
    pub bins: usize,
}

pub fn diagnose(ctx: &Context, a: &DiagnoseArgs) -> Res {
    let cfg = ctx.config()?;
    if a.samples.is_empty() && a.weights.is_none() && a.recon.is_empty() && a.distances.is_none() {
        return Err(Failure::Usage(
            "diagnose needs at least one of --samples, --weights, --recon, --distances".into(),
        ));
    }
    for p in a.samples.iter().chain(&a.reference).chain(&a.weights).chain(&a.recon).chain(&a.distances) {
        require_file(p, "diagnose input")?;
    }
    let mut st = ctx.stage("diagnose", &ctx.global.out, &cfg)?;
    run_diagnose(&cfg, a, &mut st)?;
    st.finish()
}

fn run_diagnose(cfg: &RunConfig, a: &DiagnoseArgs, st: &mut Stage) -> Res {
    let prior = cfg.model.prior()?;
    let model = cfg.model.model();
    if let Some(r) = &a.reference {
        st.input(r)?;
        let reference = io::load_samples(r, &prior.names, "reference")?;
        let mut cols = vec!["run".to_string()];
        for n in &prior.names {
            cols.push(format!("w1_{n}"));
        }
        for n in &prior.names {
            cols.push(format!("w1n_{n}"));
        }
        cols.push("w1n_sum".into());
        let mut tab = Table::new(cols);
        for (k, s) in a.samples.iter().enumerate() {
            st.input(s)?;
            let w = diagnostics::marginal_wasserstein(&io::load_samples(s, &prior.names, "abc")?, &reference, &prior)?;
            let sum = w.normalized_sum();
            tab.push(std::iter::once(k as f64).chain(w.raw).chain(w.normalized).chain([sum]).collect())?;
        }
        tab.save(&st.path("wasserstein.csv"))?;
    }
    if let Some(w) = &a.weights {
        st.input(w)?;
        let (enc, _) = pipeline::load_encoder(w, cfg.model.id)?;
        let rs = diagnostics::regression_scatter(&enc, &model, &prior, cfg.model.n, a.held_out, cfg.abc.seed)?;
        rs.table.save(&st.path("regression_scatter.csv"))?;
        log::info!("pearson r per parameter: {:?}", rs.pearson);
        if cfg.model.id == ModelId::Nlar1 {
            let ls = diagnostics::latent_scatter(&enc, &model, &prior, cfg.model.n, a.held_out, cfg.abc.seed, None)?;
            ls.table.save(&st.path("latent_scatter.csv"))?;
        }
    }
    if !a.recon.is_empty() {
        let mut stores = Vec::new();
        for p in &a.recon {
            st.input(p)?;
            let (s, meta) = pipeline::load_trained(p)?;
            if meta.architecture != Architecture::Enca || meta.model != cfg.model.id {
                return Err(Error::ModelMismatch(format!("{} is not an ENCA model for {}", p.display(), cfg.model.id)).into());
            }
            stores.push(s);
        }
        let refs: Vec<_> = stores.iter().collect();
        diagnostics::reconstruction_overlay(&refs, &model, &cfg.model.theta, cfg.model.x0, cfg.model.n, cfg.abc.seed)?
            .save(&st.path("reconstruction.csv"))?;
    }
    if let Some(d) = &a.distances {
        st.input(d)?;
        let t = Table::load(d)?;
        let q = t.columns.iter().filter(|c| c.starts_with('d')).count();
        let rec = DistanceRecord {
            components: t.rows.iter().map(|r| r[..q].to_vec()).collect(),
            total: t.rows.iter().map(|r| r[q]).collect(),
            acceptance: Vec::new(),
            epsilon: Vec::new(),
        };
        let p = prior.dim();
        let qs = diagnostics::distance_quantiles(&rec, p, a.quantile)?;
        Table {
            columns: (1..=qs.len()).map(|k| format!("d{k}")).collect(),
            rows: vec![qs],
        }
        .save(&st.path("quantiles.csv"))?;
        histogram_table(&diagnostics::distance_histograms(&rec, p, a.bins)).save(&st.path("histograms.csv"))?;
    }
    Ok(())
}

/// Micro-pipeline configuration: NLAR1, N = 50.
pub fn smoke_config(seed: u64) -> Res<RunConfig> {
    let sets: Vec<String> = [
        "model.n = 50",
        "enca.n = 50",
        "enca.steps = 200",
        "enca.minibatch = 16",
        "enca.pilot_runs = 1000",
        "enca.log_every = 50",
        "enca.checkpoint_every = 100",
        "abc.budget = 2000",
        "abc.population = 200",
        "abc.standardizer_runs = 1000",
        "mcmc.length = 20000",
        "mcmc.init = [5.3, 0.015]",
    ]
    .map(String::from)
    .to_vec();
    let mut cfg = RunConfig::resolve(None, Some(ModelId::Nlar1), &sets)?;
    cfg.set_seed(seed);
    cfg.model.observation_seed = seed;
    Ok(cfg)
}

pub fn smoke(ctx: &Context) -> Res {
    let t0 = Instant::now();
    let cfg = smoke_config(ctx.global.seed.unwrap_or(1))?;
    let out = &ctx.global.out;
    let top = ctx.stage("smoke", out, &cfg)?;

    let mut st = ctx.stage("simulate", &out.join("simulate"), &cfg)?;
    run_simulate(&cfg, &SimulateArgs { theta: None, replicas: 1 }, &mut st)?;
    let obs_path = st.path("trajectory.csv");
    st.finish()?;

    let mut st = ctx.stage("train-enca", &out.join("train-enca"), &cfg)?;
    let weights = run_train_enca(&cfg, &mut st)?;
    st.finish()?;

    let mut st = ctx.stage("abc", &out.join("abc"), &cfg)?;
    let abc_args = AbcArgs {
        weights: Some(weights.clone()),
        sufficient: false,
        components: None,
        q: None,
        budget: None,
        population: None,
        observation: Some(obs_path.clone()),
        rejection: false,
        keep: 0.01,
        quantile: 0.99,
        bins: 30,
    };
    run_abc(&cfg, &abc_args, &mut st)?;
    let abc_samples = st.path("samples.csv");
    let abc_distances = st.path("distances.csv");
    st.finish()?;

    let mut st = ctx.stage("mcmc", &out.join("mcmc"), &cfg)?;
    run_mcmc(&cfg, Some(&obs_path), &mut st)?;
    let reference = st.path("samples.csv");
    st.finish()?;

    let mut st = ctx.stage("diagnose", &out.join("diagnose"), &cfg)?;
    let diag = DiagnoseArgs {
        samples: vec![abc_samples],
        reference: Some(reference),
        weights: Some(weights.clone()),
        recon: vec![weights],
        distances: Some(abc_distances),
        held_out: 200,
        quantile: 0.99,
        bins: 30,
    };
    run_diagnose(&cfg, &diag, &mut st)?;
    let w = Table::load(&st.path("wasserstein.csv"))?;
    st.finish()?;

    top.finish()?;
    let sum = w.column("w1n_sum").and_then(|c| c.first().copied()).unwrap_or(f64::NAN);
    println!(
        "smoke: ok in {:.1}s; ABC vs Metropolis summed normalized W1 = {sum:.4}",
        t0.elapsed().as_secs_f64()
    );
    Ok(())
}
