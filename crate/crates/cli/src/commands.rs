use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::Context as _;
use cdcgcn::baselines::{mmr_lists, train_fairness, train_ips};
use cdcgcn::community::{ilfbi_init, louvain, read_communities, write_communities, CommunityAssignment};
use cdcgcn::config::{KeyValues as _, TrainingConfig};
use cdcgcn::dataset::{load_interactions, read_edges, read_split, split_dataset, write_edges, EdgeFormat, InteractionDataset, SplitRatios};
use cdcgcn::debias::{CdCgcnModel, FusedScorer, Graphs};
use cdcgcn::eval::{
    build_debiased_test, export_embeddings, metrics_from_lists, rank_topk, truth_by_user, user_group_report, MetricsReport,
    Scorer, DEFAULT_BINS,
};
use cdcgcn::experiment::{base_scorer, sweep, SWEEP_HEADER};
use cdcgcn::train::{pretrain, train_cdcgcn, write_log, EpochRecord, TrainReport};
use cdcgcn::{Embeddings, Model, Real};
use serde::Serialize;

use crate::args::{
    BaselineArgs, CgiArg, DebiasArgs, DetectArgs, EvalArgs, ExportArgs, Method, PretrainArgs, SplitArgs, SweepArgs, TrainArgs,
};
use crate::config::{opt_pair, parse_list, resolve, train_flag_pairs, Resolved};
use crate::manifest::{dataset_fingerprint, file_fingerprint, Checkpoint, CheckpointKind, Run, DEBIASED_TEST_FILE};
use crate::DataError;

fn pretrain_name(cfg: &TrainingConfig) -> String {
    format!("pretrain_{}", cfg.base)
}

fn check_name(name: &str) -> anyhow::Result<()> {
    let ok = !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.')) && !name.starts_with('.');
    if !ok {
        return Err(cdcgcn::Error::Config(format!("invalid run name {name:?}")).into());
    }
    Ok(())
}

fn progress(name: &str) -> impl FnMut(&EpochRecord) + '_ {
    move |r| {
        if !r.val_recall20.is_nan() {
            eprintln!(
                "{name} epoch {}: l_rec {:.5} l_adv {:.5} val recall@20 {:.4} ilfbi@20 {:.4}",
                r.epoch, r.l_rec, r.l_adv, r.val_recall20, r.val_ilfbi20
            );
        }
    }
}

fn load_split(run: &Run) -> anyhow::Result<(InteractionDataset, String)> {
    let fp = run.require_dataset()?;
    let (ds, _) = read_split(&run.splits())?;
    Ok((ds, fp))
}

fn load_communities(run: &Run) -> anyhow::Result<(InteractionDataset, CommunityAssignment, String)> {
    let fp = run.require_communities()?;
    let (ds, _) = read_split(&run.splits())?;
    let a = read_communities(&run.communities_path(), &ds)?;
    Ok((ds, a, fp))
}

/// Writes the log and checkpoint of a trained model and registers both.
fn record_training(
    run: &mut Run,
    name: &str,
    report: &TrainReport,
    checkpoint: Checkpoint,
    save: impl FnOnce(&Path) -> cdcgcn::Result<()>,
) -> anyhow::Result<()> {
    let ckpt = run.path(&checkpoint.path);
    save(&ckpt)?;
    run.artifact(&ckpt)?;
    let log = run.path(&format!("logs/{name}.tsv"));
    write_log(&log, &report.log)?;
    run.artifact(&log)?;
    run.manifest.checkpoints.insert(name.to_string(), checkpoint);
    println!(
        "{name}: {} epochs, best epoch {} (val recall@20 {:.4}){}",
        report.log.len(),
        report.best_epoch,
        report.best_val_recall,
        if report.stopped_early { ", stopped early" } else { "" }
    );
    Ok(())
}

fn finish(mut run: Run, stage: &str, mut config: BTreeMap<String, String>, extra: &[(&str, String)], start: Instant) -> anyhow::Result<()> {
    for (k, v) in extra {
        config.insert(k.to_string(), v.clone());
    }
    run.stage(stage, config, start.elapsed().as_secs_f64());
    run.save()
}

pub fn split(a: SplitArgs) -> anyhow::Result<()> {
    let start = Instant::now();
    let cfg = resolve(&a.common, vec![])?;
    let format: EdgeFormat = a.format.parse()?;
    if !a.input.is_file() {
        return Err(DataError(format!("{}: input file not found", a.input.display())).into());
    }
    let mut run = Run::open(&a.common.run)?;
    let raw = load_interactions(&a.input, format)?;
    let ds = split_dataset(raw, SplitRatios::default(), cfg.train.seed)?;
    for p in cdcgcn::dataset::write_split(&run.splits(), &ds, cfg.train.seed, SplitRatios::default())? {
        run.artifact(&p)?;
    }
    run.manifest.dataset = Some(dataset_fingerprint(&run.splits())?);
    println!(
        "split: {} users, {} items, {}/{}/{} train/val/test edges",
        ds.num_users,
        ds.num_items,
        ds.train.len(),
        ds.val.len(),
        ds.test.len()
    );
    let extra = [
        ("input", a.input.display().to_string()),
        ("input_sha256", file_fingerprint(&a.input)?),
        ("format", a.format.clone()),
    ];
    finish(run, "split", cfg.snapshot(), &extra, start)
}

#[derive(Serialize)]
struct CommunitySummary {
    num_communities: usize,
    modularity: f64,
    level_modularity: Vec<f64>,
    users: Vec<usize>,
    items: Vec<usize>,
}

pub fn detect(a: DetectArgs) -> anyhow::Result<()> {
    let start = Instant::now();
    let mut flags = vec![];
    opt_pair("resolution", a.resolution, &mut flags);
    let cfg = resolve(&a.common, flags)?;
    let mut run = Run::open(&a.common.run)?;
    let (ds, fp) = load_split(&run)?;
    let assignment = louvain(&ds, cfg.train.seed, cfg.run.resolution);
    let path = run.communities_path();
    write_communities(&path, &ds, &assignment)?;
    run.artifact(&path)?;
    let mut summary = CommunitySummary {
        num_communities: assignment.num_communities,
        modularity: assignment.modularity,
        level_modularity: assignment.level_modularity.clone(),
        users: vec![0; assignment.num_communities],
        items: vec![0; assignment.num_communities],
    };
    for u in 0..ds.num_users {
        summary.users[assignment.user(u)] += 1;
    }
    for i in 0..ds.num_items {
        summary.items[assignment.item(i)] += 1;
    }
    let sp = run.path("community/summary.json");
    fs::write(&sp, serde_json::to_string_pretty(&summary)? + "\n").with_context(|| format!("writing {}", sp.display()))?;
    run.artifact(&sp)?;
    run.manifest.communities = Some(file_fingerprint(&path)?);
    run.manifest.communities_dataset = Some(fp);
    println!(
        "detect: {} communities, modularity {:.4}",
        assignment.num_communities, assignment.modularity
    );
    finish(run, "detect", cfg.snapshot(), &[], start)
}

pub fn pretrain_cmd(a: PretrainArgs) -> anyhow::Result<()> {
    let start = Instant::now();
    let mut flags = vec![];
    train_flag_pairs(&a.train, &mut flags);
    let cfg = resolve(&a.common, flags)?;
    let mut run = Run::open(&a.common.run)?;
    let (ds, assignment, fp) = load_communities(&run)?;
    let name = pretrain_name(&cfg.train);
    let (model, report) = pretrain::<Real>(&ds, &cfg.train, Some(&assignment), &mut progress(&name))?;
    let ckpt = Checkpoint {
        path: format!("checkpoints/{name}.bin"),
        kind: CheckpointKind::Base,
        pretrained: None,
        dataset: fp,
    };
    record_training(&mut run, &name, &report, ckpt, |p| model.save(p))?;
    finish(run, &name, cfg.snapshot(), &[], start)
}

/// The pretrained model for `cfg.base`, if one was trained on this split.
fn find_pretrained(run: &Run, cfg: &TrainingConfig, dataset: &str) -> anyhow::Result<Option<(String, Model)>> {
    let name = pretrain_name(cfg);
    if !run.manifest.checkpoints.contains_key(&name) {
        return Ok(None);
    }
    let c = run.require_checkpoint(&name, dataset)?;
    Ok(Some((name, Model::load(&run.path(&c.path))?)))
}

pub fn train(a: TrainArgs) -> anyhow::Result<()> {
    let start = Instant::now();
    let mut flags = vec![];
    train_flag_pairs(&a.train, &mut flags);
    opt_pair("alpha", a.alpha, &mut flags);
    opt_pair("beta", a.beta, &mut flags);
    for (k, on) in [("no_cgcn", a.no_cgcn), ("no_cd", a.no_cd), ("no_cns", a.no_cns), ("no_uis", a.no_uis)] {
        if on {
            flags.push((k.to_string(), "true".to_string()));
        }
    }
    let cfg = resolve(&a.common, flags)?;
    let name = a.name.clone().unwrap_or_else(|| format!("cdcgcn_{}", cfg.train.base));
    check_name(&name)?;
    let mut run = Run::open(&a.common.run)?;
    let (ds, assignment, fp) = load_communities(&run)?;
    let pretrained = if a.no_pretrained {
        None
    } else {
        find_pretrained(&run, &cfg.train, &fp)?
    };
    if pretrained.is_none() && !a.no_pretrained {
        eprintln!("note: no {} checkpoint, training without fusion", pretrain_name(&cfg.train));
    }
    let (model, report) = train_cdcgcn::<Real>(&ds, &assignment, pretrained.as_ref().map(|p| &p.1), &cfg.train, &mut progress(&name))?;
    let ckpt = Checkpoint {
        path: format!("checkpoints/{name}.bin"),
        kind: CheckpointKind::Cdcgcn,
        pretrained: pretrained.as_ref().map(|p| p.0.clone()),
        dataset: fp,
    };
    record_training(&mut run, &name, &report, ckpt, |p| model.save(p))?;
    finish(run, &name, cfg.snapshot(), &[], start)
}

fn ks_with(cfg: &Resolved, extra: Option<&str>) -> anyhow::Result<Vec<usize>> {
    let mut ks = match extra {
        Some(s) => parse_list("ks", s)?,
        None => cfg.run.ks.clone(),
    };
    ks.sort_unstable();
    ks.dedup();
    if ks.contains(&0) {
        return Err(cdcgcn::Error::Config("ks must be positive".into()).into());
    }
    Ok(ks)
}

fn write_report(run: &mut Run, stem: &str, report: &MetricsReport) -> anyhow::Result<()> {
    let table = report.to_table();
    print!("{table}");
    for (ext, text) in [("txt", table), ("kv", report.to_kv())] {
        let p = run.path(&format!("reports/{stem}.{ext}"));
        fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?;
        run.artifact(&p)?;
    }
    Ok(())
}

pub fn baseline(a: BaselineArgs) -> anyhow::Result<()> {
    let start = Instant::now();
    let mut flags = vec![];
    train_flag_pairs(&a.train, &mut flags);
    opt_pair("lambda", a.lambda, &mut flags);
    opt_pair("gamma", a.gamma, &mut flags);
    opt_pair("delta", a.delta, &mut flags);
    let cfg = resolve(&a.common, flags)?;
    let mut run = Run::open(&a.common.run)?;
    let (ds, assignment, fp) = load_communities(&run)?;
    let method = match a.method {
        Method::Mmr => "mmr",
        Method::Fairness => "fairness",
        Method::Ips => "ips",
    };
    let name = format!("{method}_{}", cfg.train.base);
    match a.method {
        Method::Mmr => {
            let Some((pname, model)) = find_pretrained(&run, &cfg.train, &fp)? else {
                return Err(DataError(format!("mmr re-ranks {}, run `pretrain` first", pretrain_name(&cfg.train))).into());
            };
            let ks = ks_with(&cfg, None)?;
            let kmax = ks.iter().copied().max().unwrap_or(0);
            let lists = mmr_lists(&base_scorer(&model, &ds), &ds, &assignment, &cfg.baseline, kmax);
            let truth = truth_by_user(ds.num_users, &ds.test);
            let report = metrics_from_lists(&lists, &truth, &assignment, &ks, cfg.run.cgi)
                .with_meta("model", &name)
                .with_meta("reranked", &pname)
                .with_meta("test", "original")
                .with_meta("dataset", &fp);
            write_report(&mut run, &name, &report)?;
        }
        Method::Fairness | Method::Ips => {
            let mut log = progress(&name);
            let (model, report) = if a.method == Method::Fairness {
                train_fairness::<Real>(&ds, &assignment, &cfg.train, cfg.baseline.gamma, &mut log)?
            } else {
                train_ips::<Real>(&ds, &assignment, &cfg.train, cfg.baseline.delta, &mut log)?
            };
            let ckpt = Checkpoint {
                path: format!("checkpoints/{name}.bin"),
                kind: CheckpointKind::Base,
                pretrained: None,
                dataset: fp,
            };
            record_training(&mut run, &name, &report, ckpt, |p| model.save(p))?;
        }
    }
    finish(run, &name, cfg.snapshot(), &[("method", method.to_string())], start)
}

/// A loaded checkpoint.
enum Loaded {
    Base(Model),
    Cdcgcn(CdCgcnModel<Real>, Option<Model>),
}

impl Loaded {
    fn open(run: &Run, name: &str, dataset: &str) -> anyhow::Result<Self> {
        let c = run.require_checkpoint(name, dataset)?;
        let path = run.path(&c.path);
        Ok(match c.kind {
            CheckpointKind::Base => Loaded::Base(Model::load(&path)?),
            CheckpointKind::Cdcgcn => {
                let pretrained = match &c.pretrained {
                    Some(p) => {
                        let pc = run.require_checkpoint(p, dataset)?;
                        Some(Model::load(&run.path(&pc.path))?)
                    }
                    None => None,
                };
                Loaded::Cdcgcn(CdCgcnModel::load(&path)?, pretrained)
            }
        })
    }

    fn with_scorer<R>(&self, ds: &InteractionDataset, f: impl FnOnce(&dyn Scorer) -> R) -> R {
        match self {
            Loaded::Base(m) => f(&base_scorer(m, ds)),
            Loaded::Cdcgcn(m, p) => {
                let bm = p.as_ref().map(|p| base_scorer(p, ds));
                let scorer = FusedScorer {
                    debiased: base_scorer(&m.base, ds),
                    pretrained: bm.as_ref(),
                    eta: m.eta_f64(),
                };
                f(&scorer)
            }
        }
    }

    fn embeddings(&self, ds: &InteractionDataset) -> Embeddings {
        let graphs = Graphs::<Real>::base_only(ds);
        match self {
            Loaded::Base(m) => m.base_embeddings(&graphs.base),
            Loaded::Cdcgcn(m, _) => m.base.base_embeddings(&graphs.base),
        }
    }
}

pub fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let start = Instant::now();
    let mut flags = vec![];
    opt_pair("ks", a.ks.clone(), &mut flags);
    if let Some(c) = a.cgi {
        let v = if c == CgiArg::Pooled { "pooled" } else { "per_user" };
        flags.push(("cgi".to_string(), v.to_string()));
    }
    let cfg = resolve(&a.common, flags)?;
    let mut run = Run::open(&a.common.run)?;
    let (ds, assignment, fp) = load_communities(&run)?;
    let ks = ks_with(&cfg, None)?;
    let (test, truth) = if a.debiased {
        let path = run.path(&format!("splits/{DEBIASED_TEST_FILE}"));
        let fresh = run
            .manifest
            .stages
            .get("debias")
            .and_then(|s| s.config.get("communities"))
            .is_some_and(|c| Some(c) == run.manifest.communities.as_ref());
        if !fresh || !path.exists() {
            return Err(DataError(format!("{}: missing or stale, run `debias` first", path.display())).into());
        }
        ("debiased", truth_by_user(ds.num_users, &read_edges(&path)?))
    } else {
        ("original", truth_by_user(ds.num_users, &ds.test))
    };
    let loaded = Loaded::open(&run, &a.model, &fp)?;
    let kmax = ks.iter().copied().max().unwrap_or(0);
    let lists = loaded.with_scorer(&ds, |s| rank_topk(s, &ds, kmax));
    let report = metrics_from_lists(&lists, &truth, &assignment, &ks, cfg.run.cgi)
        .with_meta("model", &a.model)
        .with_meta("test", test)
        .with_meta("dataset", &fp);
    let stem = if a.debiased { format!("{}_debiased", a.model) } else { a.model.clone() };
    write_report(&mut run, &stem, &report)?;
    if a.groups {
        let k = if ks.contains(&20) { 20 } else { kmax };
        let rows = user_group_report(&ilfbi_init(&ds, &assignment), &lists, &assignment, k, &DEFAULT_BINS);
        let mut text = format!("lower\tupper\tusers\tilfbi_init\tilfbi{k}\tincrement\n");
        for r in rows.iter().flatten() {
            text.push_str(&format!(
                "{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\n",
                r.lower, r.upper, r.users, r.mean_ilfbi_init, r.mean_ilfbi, r.increment
            ));
        }
        let p = run.path(&format!("reports/{stem}_groups.tsv"));
        fs::write(&p, &text).with_context(|| format!("writing {}", p.display()))?;
        run.artifact(&p)?;
        print!("{text}");
    }
    let extra = [("model", a.model.clone()), ("test", test.to_string())];
    finish(run, &format!("eval_{stem}"), cfg.snapshot(), &extra, start)
}

pub fn debias(a: DebiasArgs) -> anyhow::Result<()> {
    let start = Instant::now();
    let cfg = resolve(&a.common, vec![])?;
    let mut run = Run::open(&a.common.run)?;
    let (ds, assignment, _) = load_communities(&run)?;
    let test = build_debiased_test(&ds, &assignment, cfg.train.seed);
    let path = run.path(&format!("splits/{DEBIASED_TEST_FILE}"));
    write_edges(&path, &test)?;
    run.artifact(&path)?;
    println!("debias: {} of {} test edges kept", test.len(), ds.test.len());
    let communities = run.manifest.communities.clone().unwrap_or_default();
    finish(run, "debias", cfg.snapshot(), &[("communities", communities)], start)
}

pub fn export(a: ExportArgs) -> anyhow::Result<()> {
    let start = Instant::now();
    let cfg = resolve(&a.common, vec![])?;
    let mut run = Run::open(&a.common.run)?;
    let (ds, assignment, fp) = load_communities(&run)?;
    let loaded = Loaded::open(&run, &a.model, &fp)?;
    let path = run.path(&format!("reports/{}_embeddings.tsv", a.model));
    export_embeddings(&loaded.embeddings(&ds), &assignment, &path)?;
    run.artifact(&path)?;
    println!("export: {}", path.display());
    finish(run, &format!("export_{}", a.model), cfg.snapshot(), &[("model", a.model.clone())], start)
}

pub fn sweep_cmd(a: SweepArgs) -> anyhow::Result<()> {
    let start = Instant::now();
    let mut flags = vec![];
    train_flag_pairs(&a.train, &mut flags);
    let cfg = resolve(&a.common, flags)?;
    let alphas: Vec<f64> = match &a.alpha {
        Some(s) => parse_list("alpha", s)?,
        None => vec![cfg.train.alpha],
    };
    let betas: Vec<f64> = match &a.beta {
        Some(s) => parse_list("beta", s)?,
        None => vec![cfg.train.beta],
    };
    let grid: Vec<(f64, f64)> = alphas.iter().flat_map(|&x| betas.iter().map(move |&y| (x, y))).collect();
    for &(alpha, beta) in &grid {
        TrainingConfig { alpha, beta, ..cfg.train.clone() }.validate()?;
    }
    let mut run = Run::open(&a.common.run)?;
    let (ds, assignment, fp) = load_communities(&run)?;
    let pretrained = find_pretrained(&run, &cfg.train, &fp)?;
    let ks = ks_with(&cfg, None)?;
    println!("{SWEEP_HEADER}");
    let points = sweep::<Real>(&ds, &assignment, pretrained.as_ref().map(|p| &p.1), &cfg.train, &grid, &ks, &mut |p| {
        println!("{}", p.tsv_row())
    })?;
    let mut text = format!("{SWEEP_HEADER}\n");
    for p in &points {
        text.push_str(&p.tsv_row());
        text.push('\n');
    }
    let path = run.path("reports/sweep.tsv");
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    run.artifact(&path)?;
    let extra = [
        ("sweep_alpha", alphas.iter().map(f64::to_string).collect::<Vec<_>>().join(",")),
        ("sweep_beta", betas.iter().map(f64::to_string).collect::<Vec<_>>().join(",")),
        ("pretrained", pretrained.map(|p| p.0).unwrap_or_default()),
    ];
    finish(run, "sweep", cfg.snapshot(), &extra, start)
}
