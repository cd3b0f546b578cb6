//! The experiment commands behind the CLI subcommands.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::archive::{corpus_hash, load_archive, load_logs, save_log, write_atomic, RunArchive, RunEntry};
use super::{AcaMode, Arm, DatasetSource, ExperimentConfig, HarnessError};
use crate::corpus::{generate_synthetic, load_dataset, save_dataset, split_tasks, Dataset, RelId, Split};
use crate::exec;
use crate::metrics::{
    bad_case_scan, fr_record, group_by_metric, prototype, rel_trajectories, retrieval_test,
    retrieval_with_model, PrototypeSource, SimilarityMatrix,
};
use crate::seeding;
use crate::trainer::{run_stream, run_stream_observed, supervised_upper_bound, TrajectoryLog};

/// CLI-level overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seeds: Option<Vec<u64>>,
    pub aca: Option<AcaMode>,
    pub ablate: Option<String>,
    pub memory_size: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, mut cfg: ExperimentConfig) -> Result<ExperimentConfig, HarnessError> {
        if let Some(out) = &self.out {
            cfg.out_dir = Some(out.clone());
        }
        if let Some(seeds) = &self.seeds {
            cfg.seeds = seeds.clone();
        }
        if let Some(aca) = self.aca {
            cfg.aca = aca;
        }
        if let Some(b) = self.memory_size {
            cfg.train.memory_size = b;
        }
        match self.ablate.as_deref() {
            None => {}
            Some("none") => cfg.train.ablate = crate::trainer::Ablate::None,
            Some("no_hybrid") => cfg.train.ablate = crate::trainer::Ablate::NoHybrid,
            Some("no_reversed") => cfg.train.ablate = crate::trainer::Ablate::NoReversed,
            // Dropping both augmentations is the plain baseline.
            Some("no_both") => cfg.aca = AcaMode::Off,
            Some(other) => {
                return Err(HarnessError::Config(format!(
                    "unknown ablate value {other:?} (none|no_hybrid|no_reversed|no_both)"
                )))
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Generate the synthetic corpus files into `out`.
pub fn cmd_gen_synth(cfg: &ExperimentConfig, out: &Path) -> Result<(), HarnessError> {
    let DatasetSource::Synth(synth) = &cfg.dataset else {
        return Err(HarnessError::Config(
            "gen-synth needs a config with a synthetic dataset source".into(),
        ));
    };
    let ds = generate_synthetic(synth)?;
    save_dataset(&ds, out)?;
    println!(
        "wrote {} relations / {} instances to {}",
        ds.relations.len(),
        ds.instances.len(),
        out.display()
    );
    Ok(())
}

/// Load or generate the experiment's dataset. Generated corpora are saved
/// into the archive so it stays self-describing.
fn materialize_dataset(
    cfg: &ExperimentConfig,
    root: &Path,
) -> Result<(Dataset, String, String), HarnessError> {
    match &cfg.dataset {
        DatasetSource::Synth(synth) => {
            let ds = generate_synthetic(synth)?;
            let dir = root.join("dataset");
            save_dataset(&ds, &dir)?;
            let hash = corpus_hash(&dir)?;
            Ok((ds, "dataset".into(), hash))
        }
        DatasetSource::Dir(path) => {
            let ds = load_dataset(path)?;
            let hash = corpus_hash(path)?;
            Ok((ds, path.display().to_string(), hash))
        }
    }
}

#[derive(Clone, Copy)]
struct Job {
    seed: u64,
    arm: Arm,
    memory_size: Option<usize>,
}

fn job_log_name(job: &Job) -> String {
    match job.memory_size {
        Some(b) => format!("logs/seed{:04}_{}_B{b}.json", job.seed, job.arm.label()),
        None => format!("logs/seed{:04}_{}.json", job.seed, job.arm.label()),
    }
}

/// Run every job (data-parallel), flushing each log as soon as it finishes.
fn execute_jobs(
    ds: &Dataset,
    cfg: &ExperimentConfig,
    jobs: Vec<Job>,
    root: &Path,
) -> Result<Vec<(RunEntry, TrajectoryLog)>, HarnessError> {
    let results = exec::map(jobs, |job| -> Result<(RunEntry, TrajectoryLog), HarnessError> {
        let stream = split_tasks(ds, cfg.task_count, job.seed)?;
        let mut train = cfg.train_for(job.seed, job.arm);
        if let Some(b) = job.memory_size {
            train.memory_size = b;
        }
        let mut log = run_stream(&stream, &ds.relations, &train)?;
        log.stream_seed = job.seed;
        log.arm = job.arm.label().to_string();
        let entry = RunEntry {
            seed: job.seed,
            arm: job.arm.label().to_string(),
            memory_size: job.memory_size,
            log: job_log_name(&job),
        };
        save_log(root, &entry, &log)?;
        let final_acc = log.steps.last().map(|s| s.accuracy).unwrap_or(0.0);
        println!(
            "  seed {:>4}  {:<16} {} final accuracy {:.4}",
            job.seed,
            job.arm.label(),
            job.memory_size
                .map(|b| format!("B={b:<3}"))
                .unwrap_or_else(|| "     ".into()),
            final_acc
        );
        Ok((entry, log))
    });
    results.into_iter().collect()
}

fn mean_accuracy_per_step(logs: &[&TrajectoryLog]) -> Vec<f64> {
    let steps = logs.iter().map(|l| l.steps.len()).min().unwrap_or(0);
    (0..steps)
        .map(|j| logs.iter().map(|l| l.steps[j].accuracy).sum::<f64>() / logs.len() as f64)
        .collect()
}

fn arm_logs<'a>(
    runs: &'a [(RunEntry, TrajectoryLog)],
    arm: Arm,
) -> Vec<&'a TrajectoryLog> {
    runs.iter()
        .filter(|(e, _)| e.arm == arm.label() && e.memory_size.is_none())
        .map(|(_, l)| l)
        .collect()
}

#[derive(Serialize)]
struct RunSummary {
    arms: BTreeMap<String, Vec<f64>>,
    final_mean: BTreeMap<String, f64>,
    delta: Option<f64>,
}

/// Per-step mean accuracy table: one row per arm, `T1..Tk` columns, and the
/// final-step gain of the augmented arm over the baseline.
fn write_run_table(
    runs: &[(RunEntry, TrajectoryLog)],
    arms: &[Arm],
    k: usize,
    path: &Path,
) -> Result<RunSummary, HarnessError> {
    let mut csv = String::from("arm");
    for j in 1..=k {
        let _ = write!(csv, ",T{j}");
    }
    csv.push_str(",delta\n");

    let mut summary = RunSummary {
        arms: BTreeMap::new(),
        final_mean: BTreeMap::new(),
        delta: None,
    };
    let baseline_final = {
        let logs = arm_logs(runs, Arm::Baseline);
        if logs.is_empty() {
            None
        } else {
            mean_accuracy_per_step(&logs).last().copied()
        }
    };
    for arm in arms {
        let logs = arm_logs(runs, *arm);
        if logs.is_empty() {
            continue;
        }
        let means = mean_accuracy_per_step(&logs);
        let _ = write!(csv, "{}", arm.label());
        for m in &means {
            let _ = write!(csv, ",{m:.6}");
        }
        let final_mean = means.last().copied().unwrap_or(0.0);
        if *arm == Arm::Aca {
            if let Some(base) = baseline_final {
                let delta = final_mean - base;
                let _ = write!(csv, ",{delta:.6}");
                summary.delta = Some(delta);
            } else {
                csv.push(',');
            }
        } else {
            csv.push(',');
        }
        csv.push('\n');
        summary.final_mean.insert(arm.label().into(), final_mean);
        summary.arms.insert(arm.label().into(), means);
    }
    write_atomic(path, csv.as_bytes())?;
    Ok(summary)
}

fn save_summary<T: Serialize>(value: &T, path: &Path) -> Result<(), HarnessError> {
    let json = serde_json::to_string_pretty(value)
        .map_err(|e| HarnessError::Runtime(format!("serialize summary: {e}")))?;
    write_atomic(path, (json + "\n").as_bytes())
}

fn build_archive(
    cfg: &ExperimentConfig,
    dataset_dir: String,
    hash: String,
    runs: &[(RunEntry, TrajectoryLog)],
    root: &Path,
) -> Result<RunArchive, HarnessError> {
    let archive = RunArchive {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        corpus_hash: hash,
        dataset_dir,
        runs: runs.iter().map(|(e, _)| e.clone()).collect(),
    };
    archive.save(root)?;
    Ok(archive)
}

/// Seed sweep with baseline and/or augmented arms; emits per-step mean
/// accuracy in a `T1..Tk` table plus the final-step delta.
pub fn cmd_run(cfg: &ExperimentConfig, root: &Path) -> Result<RunArchive, HarnessError> {
    let (ds, dataset_dir, hash) = materialize_dataset(cfg, root)?;
    let arms: Vec<Arm> = match cfg.aca {
        AcaMode::Off => vec![Arm::Baseline],
        AcaMode::On => vec![Arm::Aca],
        AcaMode::Paired => vec![Arm::Baseline, Arm::Aca],
    };
    let jobs: Vec<Job> = cfg
        .seeds
        .iter()
        .flat_map(|&seed| {
            arms.iter().map(move |&arm| Job {
                seed,
                arm,
                memory_size: None,
            })
        })
        .collect();
    println!("running {} jobs ({} seeds x {} arms)", jobs.len(), cfg.seeds.len(), arms.len());
    let runs = execute_jobs(&ds, cfg, jobs, root)?;
    let summary = write_run_table(&runs, &arms, cfg.task_count, &root.join("reports/run_table.csv"))?;
    save_summary(&summary, &root.join("reports/run_summary.json"))?;
    if let Some(delta) = summary.delta {
        println!("final-step mean delta (aca - baseline): {delta:+.4}");
    }
    build_archive(cfg, dataset_dir, hash, &runs, root)
}

/// Four-arm ablation (full augmentation, hybrid-only, reversed-only, none)
/// over shared seeds.
pub fn cmd_ablate(cfg: &ExperimentConfig, root: &Path) -> Result<RunArchive, HarnessError> {
    let (ds, dataset_dir, hash) = materialize_dataset(cfg, root)?;
    let arms = [Arm::Aca, Arm::AcaNoHybrid, Arm::AcaNoReversed, Arm::Baseline];
    let jobs: Vec<Job> = cfg
        .seeds
        .iter()
        .flat_map(|&seed| {
            arms.iter().map(move |&arm| Job {
                seed,
                arm,
                memory_size: None,
            })
        })
        .collect();
    println!("running {} ablation jobs", jobs.len());
    let runs = execute_jobs(&ds, cfg, jobs, root)?;

    let mut csv = String::from("arm,final_accuracy\n");
    let mut finals = BTreeMap::new();
    for arm in arms {
        let logs = arm_logs(&runs, arm);
        let means = mean_accuracy_per_step(&logs);
        let final_mean = means.last().copied().unwrap_or(0.0);
        let _ = writeln!(csv, "{},{final_mean:.6}", arm.label());
        finals.insert(arm.label().to_string(), final_mean);
        println!("  {:<16} final mean accuracy {:.4}", arm.label(), final_mean);
    }
    write_atomic(&root.join("reports/ablate_table.csv"), csv.as_bytes())?;
    save_summary(&finals, &root.join("reports/ablate_summary.json"))?;
    build_archive(cfg, dataset_dir, hash, &runs, root)
}

/// Paired runs at several memory sizes; per-step mean accuracy curves go to
/// one long-format CSV for external plotting.
pub fn cmd_memory_sweep(
    cfg: &ExperimentConfig,
    sizes: &[usize],
    root: &Path,
) -> Result<RunArchive, HarnessError> {
    if sizes.is_empty() {
        return Err(HarnessError::Config("memory sweep needs at least one size".into()));
    }
    let (ds, dataset_dir, hash) = materialize_dataset(cfg, root)?;
    let arms = [Arm::Baseline, Arm::Aca];
    let mut jobs = Vec::new();
    for &b in sizes {
        for &seed in &cfg.seeds {
            for &arm in &arms {
                jobs.push(Job {
                    seed,
                    arm,
                    memory_size: Some(b),
                });
            }
        }
    }
    println!("running {} sweep jobs ({} sizes)", jobs.len(), sizes.len());
    let runs = execute_jobs(&ds, cfg, jobs, root)?;

    let mut csv = String::from("memory_size,arm,step,mean_accuracy\n");
    let mut finals: BTreeMap<String, f64> = BTreeMap::new();
    for &b in sizes {
        for arm in arms {
            let logs: Vec<&TrajectoryLog> = runs
                .iter()
                .filter(|(e, _)| e.arm == arm.label() && e.memory_size == Some(b))
                .map(|(_, l)| l)
                .collect();
            let means = mean_accuracy_per_step(&logs);
            for (j, m) in means.iter().enumerate() {
                let _ = writeln!(csv, "{b},{},{},{m:.6}", arm.label(), j + 1);
            }
            if let Some(last) = means.last() {
                finals.insert(format!("B{b}_{}", arm.label()), *last);
            }
        }
    }
    write_atomic(&root.join("reports/memory_sweep.csv"), csv.as_bytes())?;
    save_summary(&finals, &root.join("reports/memory_sweep_summary.json"))?;
    build_archive(cfg, dataset_dir, hash, &runs, root)
}

fn reload_dataset(root: &Path, archive: &RunArchive) -> Result<Dataset, HarnessError> {
    let dir = archive.dataset_path(root);
    let ds = load_dataset(&dir)?;
    let hash = corpus_hash(&dir)?;
    if hash != archive.corpus_hash {
        return Err(HarnessError::Runtime(format!(
            "corpus hash mismatch: archive has {}, {} hashes to {hash}",
            archive.corpus_hash,
            dir.display()
        )));
    }
    Ok(ds)
}

/// Prototype similarity matrix per the configured source.
fn similarity_for(
    ds: &Dataset,
    source: PrototypeSource,
    sup_model: &crate::model::ModelState,
    train: &crate::trainer::TrainConfig,
) -> Result<SimilarityMatrix, HarnessError> {
    let from_model = |model: &crate::model::ModelState| -> Result<SimilarityMatrix, HarnessError> {
        let protos: Result<Vec<Vec<f64>>, HarnessError> = ds
            .relations
            .iter()
            .map(|r| {
                let insts = ds.train_of(r.rel_id);
                prototype(model, &insts).map_err(HarnessError::from)
            })
            .collect();
        Ok(SimilarityMatrix::from_prototypes(
            ds.relations.iter().map(|r| r.rel_id).collect(),
            &protos?,
            source,
        ))
    };
    match source {
        PrototypeSource::GroundTruthAnalogs => Ok(SimilarityMatrix::ground_truth(&ds.relations)),
        PrototypeSource::TrainedEncoder => from_model(sup_model),
        PrototypeSource::VanillaEncoder => {
            let vocab = crate::model::Vocab::build(ds.instances.iter());
            let fresh = crate::model::ModelState::new(
                vocab,
                train.embed_dim,
                train.hidden_dim,
                train.init_scale,
                seeding::derive(train.seed, &[0x7a]),
            );
            from_model(&fresh)
        }
    }
}

/// Mean forgetting rate per relation across runs (only runs where defined).
fn mean_fr_by_relation(
    logs: &[&TrajectoryLog],
    ds: &Dataset,
    k: usize,
) -> BTreeMap<RelId, (f64, f64)> {
    let mut acc: BTreeMap<RelId, (f64, f64, usize)> = BTreeMap::new();
    for log in logs {
        for traj in rel_trajectories(log, &ds.relations) {
            if let Some(rec) = fr_record(&traj, k) {
                let entry = acc.entry(rec.rel_id).or_insert((0.0, 0.0, 0));
                entry.0 += rec.fr;
                entry.1 += rec.intro_task as f64;
                entry.2 += 1;
            }
        }
    }
    acc.into_iter()
        .map(|(rel, (fr_sum, intro_sum, n))| (rel, (fr_sum / n as f64, intro_sum / n as f64)))
        .collect()
}

/// Mean final-step F1 per relation across runs.
fn mean_final_f1(logs: &[&TrajectoryLog], ds: &Dataset) -> BTreeMap<RelId, f64> {
    let mut acc: BTreeMap<RelId, (f64, usize)> = BTreeMap::new();
    for log in logs {
        let Some(last) = log.steps.last() else { continue };
        for (name, &f1) in &last.per_relation_f1 {
            if let Some(rel) = ds.relation_by_name(name) {
                let e = acc.entry(rel.rel_id).or_insert((0.0, 0));
                e.0 += f1;
                e.1 += 1;
            }
        }
    }
    acc.into_iter()
        .map(|(rel, (sum, n))| (rel, sum / n as f64))
        .collect()
}

#[derive(Serialize)]
struct GroupRow {
    group: String,
    fr: f64,
    ms: f64,
    f1: f64,
    f1_supervised: f64,
    delta: f64,
}

#[derive(Serialize)]
struct MsGroupRow {
    group: String,
    ms: f64,
    f1_supervised: f64,
    baseline_fr: f64,
    baseline_f1: f64,
    aca_fr: Option<f64>,
    aca_f1: Option<f64>,
}

#[derive(Serialize)]
struct AnalysisSummary {
    analyzed_arm: String,
    prototype_source: PrototypeSource,
    supervised_accuracy: f64,
    fr_groups: Vec<GroupRow>,
    bad_cases_total: usize,
    bad_cases_with_analog: usize,
    bad_cases_analog_pct: f64,
    ms_groups: Vec<MsGroupRow>,
}

fn group_mean(values: &BTreeMap<RelId, f64>, members: &[RelId]) -> f64 {
    if members.is_empty() {
        return f64::NAN;
    }
    members.iter().filter_map(|r| values.get(r)).sum::<f64>() / members.len() as f64
}

/// Forgetting-rate grouping, bad-case scan, similarity-grouped error
/// analysis, and top-3 similar lists; all recomputed from the stored logs.
pub fn cmd_analyze(root: &Path) -> Result<AnalysisOutput, HarnessError> {
    let archive = load_archive(root)?;
    let ds = reload_dataset(root, &archive)?;
    let cfg = &archive.config;
    let k = cfg.task_count;
    let reports = root.join("reports");

    let all = load_logs(root, &archive, None)?;
    if all.is_empty() {
        return Err(HarnessError::Runtime("archive has no logs".into()));
    }
    let analyzed_arm = if all.iter().any(|(e, _)| e.arm == "baseline") {
        "baseline".to_string()
    } else {
        all[0].0.arm.clone()
    };
    let base_logs: Vec<&TrajectoryLog> = all
        .iter()
        .filter(|(e, _)| e.arm == analyzed_arm && e.memory_size.is_none())
        .map(|(_, l)| l)
        .collect();
    let aca_logs: Vec<&TrajectoryLog> = all
        .iter()
        .filter(|(e, _)| e.arm == "aca" && e.memory_size.is_none())
        .map(|(_, l)| l)
        .collect();

    let sup = supervised_upper_bound(&ds, &cfg.train)?;
    let sim = similarity_for(&ds, cfg.prototype_source, &sup.model, &cfg.train)?;

    let fr_intro = mean_fr_by_relation(&base_logs, &ds, k);
    let fr: BTreeMap<RelId, f64> = fr_intro.iter().map(|(r, (fr, _))| (*r, *fr)).collect();
    let ms: BTreeMap<RelId, f64> = ds
        .relations
        .iter()
        .filter_map(|r| sim.max_similarity(r.rel_id).ok().map(|(v, _)| (r.rel_id, v)))
        .collect();
    let final_f1 = mean_final_f1(&base_logs, &ds);
    let sup_f1: BTreeMap<RelId, f64> = sup
        .per_relation_f1
        .iter()
        .filter_map(|(name, v)| ds.relation_by_name(name).map(|r| (r.rel_id, *v)))
        .collect();

    // Per-relation forgetting report.
    let groups = group_by_metric(&fr, 3);
    let group_of: BTreeMap<RelId, usize> = groups
        .iter()
        .enumerate()
        .flat_map(|(g, members)| members.iter().map(move |r| (*r, g)))
        .collect();
    let mut csv = String::from("rel,intro_task,fr,ms,group\n");
    for (rel, (fr_v, intro)) in &fr_intro {
        let _ = writeln!(
            csv,
            "{},{intro:.2},{fr_v:.6},{:.6},G{}",
            ds.relation(*rel).name,
            ms.get(rel).copied().unwrap_or(f64::NAN),
            group_of.get(rel).map(|g| g + 1).unwrap_or(0),
        );
    }
    write_atomic(&reports.join("fr_report.csv"), csv.as_bytes())?;

    let fr_groups: Vec<GroupRow> = groups
        .iter()
        .enumerate()
        .map(|(g, members)| {
            let f1 = group_mean(&final_f1, members);
            let f1_supervised = group_mean(&sup_f1, members);
            GroupRow {
                group: format!("G{}", g + 1),
                fr: group_mean(&fr, members),
                ms: group_mean(&ms, members),
                f1,
                f1_supervised,
                delta: f1_supervised - f1,
            }
        })
        .collect();

    // Bad cases at the standard thresholds.
    let base_owned: Vec<TrajectoryLog> = base_logs.iter().map(|l| (*l).clone()).collect();
    let report = bad_case_scan(&base_owned, &ds.relations, &sim, 0.10, 5)?;
    let mut csv = String::from("run,rel,step,drop,analog_present\n");
    for case in &report.cases {
        let _ = writeln!(
            csv,
            "{},{},{},{:.6},{}",
            case.run,
            ds.relation(case.rel_id).name,
            case.step + 1,
            case.drop,
            case.analog_present
        );
    }
    write_atomic(&reports.join("badcases.csv"), csv.as_bytes())?;

    // Similarity-grouped error analysis (baseline vs augmented arm).
    let ms_groups_split = group_by_metric(&ms, 3);
    let aca_fr_map: BTreeMap<RelId, f64> = if aca_logs.is_empty() {
        BTreeMap::new()
    } else {
        mean_fr_by_relation(&aca_logs, &ds, k)
            .into_iter()
            .map(|(r, (fr, _))| (r, fr))
            .collect()
    };
    let aca_f1_map = if aca_logs.is_empty() {
        BTreeMap::new()
    } else {
        mean_final_f1(&aca_logs, &ds)
    };
    let ms_groups: Vec<MsGroupRow> = ms_groups_split
        .iter()
        .enumerate()
        .map(|(g, members)| MsGroupRow {
            group: format!("G{}", g + 1),
            ms: group_mean(&ms, members),
            f1_supervised: group_mean(&sup_f1, members),
            baseline_fr: group_mean(&fr, members),
            baseline_f1: group_mean(&final_f1, members),
            aca_fr: (!aca_logs.is_empty()).then(|| group_mean(&aca_fr_map, members)),
            aca_f1: (!aca_logs.is_empty()).then(|| group_mean(&aca_f1_map, members)),
        })
        .collect();

    // Top-3 most similar relations per relation.
    let mut csv = String::from("rel,rank,similar,similarity\n");
    for rel in &ds.relations {
        if let Ok(top) = sim.top_k(rel.rel_id, 3) {
            for (rank, (other, value)) in top.iter().enumerate() {
                let _ = writeln!(
                    csv,
                    "{},{},{},{value:.6}",
                    rel.name,
                    rank + 1,
                    ds.relation(*other).name
                );
            }
        }
    }
    write_atomic(&reports.join("top_similar.csv"), csv.as_bytes())?;

    let n_cf = report.n_cf();
    let n_sim = report.n_sim();
    let summary = AnalysisSummary {
        analyzed_arm,
        prototype_source: cfg.prototype_source,
        supervised_accuracy: sup.accuracy,
        fr_groups,
        bad_cases_total: n_cf,
        bad_cases_with_analog: n_sim,
        bad_cases_analog_pct: if n_cf > 0 {
            100.0 * n_sim as f64 / n_cf as f64
        } else {
            0.0
        },
        ms_groups,
    };
    save_summary(&summary, &reports.join("summary.json"))?;
    println!(
        "analysis written to {}: {} bad cases, {} ({:.0}%) with a top-5 similar arrival",
        reports.display(),
        n_cf,
        n_sim,
        summary.bad_cases_analog_pct
    );
    Ok(AnalysisOutput {
        fr: fr_intro.into_iter().map(|(r, (f, _))| (r, f)).collect(),
        bad_cases_total: n_cf,
        bad_cases_with_analog: n_sim,
        supervised_accuracy: sup.accuracy,
    })
}

/// Programmatic view of the analyze results (the full tables land on disk).
pub struct AnalysisOutput {
    pub fr: BTreeMap<RelId, f64>,
    pub bad_cases_total: usize,
    pub bad_cases_with_analog: usize,
    pub supervised_accuracy: f64,
}

#[derive(Serialize)]
struct RetrievalGroupRow {
    arm: String,
    groups: BTreeMap<String, f64>,
    overall: f64,
}

#[derive(Serialize)]
struct RetrievalSummary {
    qualified: usize,
    note: Option<String>,
    rows: Vec<RetrievalGroupRow>,
}

/// Retrieval test over every qualified (forgetting) relation, for the
/// baseline and augmented arms plus a supervised reference row, grouped by
/// forgetting-rate group.
pub fn cmd_retrieval(root: &Path) -> Result<RetrievalSummaryOut, HarnessError> {
    let archive = load_archive(root)?;
    let ds = reload_dataset(root, &archive)?;
    let cfg = &archive.config;
    let reports = root.join("reports");
    let all = load_logs(root, &archive, None)?;
    let base_logs: Vec<TrajectoryLog> = all
        .iter()
        .filter(|(e, _)| e.arm == "baseline" && e.memory_size.is_none())
        .map(|(_, l)| l.clone())
        .collect();
    if base_logs.is_empty() {
        return Err(HarnessError::Runtime(
            "retrieval needs baseline logs in the archive".into(),
        ));
    }

    // Qualified relations: any drop beyond the threshold in any run; the
    // distractor pool is everything that never dropped.
    let gt_sim = SimilarityMatrix::ground_truth(&ds.relations);
    let scan = bad_case_scan(
        &base_logs,
        &ds.relations,
        &gt_sim,
        cfg.retrieval.drop_threshold,
        1,
    )?;
    let qualified: BTreeSet<RelId> = scan.cases.iter().map(|c| c.rel_id).collect();
    let pool: Vec<RelId> = ds
        .relations
        .iter()
        .map(|r| r.rel_id)
        .filter(|r| !qualified.contains(r))
        .collect();

    if qualified.is_empty() {
        write_atomic(
            &reports.join("retrieval.csv"),
            b"arm,rel,group,precision,k\n",
        )?;
        let summary = RetrievalSummary {
            qualified: 0,
            note: Some("no relation crossed the forgetting threshold".into()),
            rows: Vec::new(),
        };
        save_summary(&summary, &reports.join("retrieval_summary.json"))?;
        println!("no qualified relations; empty retrieval report written");
        return Ok(RetrievalSummaryOut {
            per_arm_group: BTreeMap::new(),
            qualified: 0,
        });
    }

    // Group qualified relations by mean baseline forgetting rate.
    let base_refs: Vec<&TrajectoryLog> = base_logs.iter().collect();
    let fr: BTreeMap<RelId, f64> = mean_fr_by_relation(&base_refs, &ds, cfg.task_count)
        .into_iter()
        .map(|(r, (f, _))| (r, f))
        .collect();
    let groups = group_by_metric(&fr, 3);
    let group_of: BTreeMap<RelId, usize> = groups
        .iter()
        .enumerate()
        .flat_map(|(g, members)| members.iter().map(move |r| (*r, g)))
        .collect();

    let has_aca = all.iter().any(|(e, _)| e.arm == "aca");
    let mut arms: Vec<Arm> = vec![Arm::Baseline];
    if has_aca {
        arms.push(Arm::Aca);
    }

    let jobs: Vec<(Arm, RelId)> = arms
        .iter()
        .flat_map(|&arm| qualified.iter().map(move |&rel| (arm, rel)))
        .collect();
    let outcomes = exec::map(jobs, |(arm, rel)| {
        let train = cfg.train_for(0xa11, arm);
        retrieval_test(
            rel,
            &ds,
            &pool,
            &cfg.retrieval,
            &train,
            seeding::derive(cfg.train.seed, &[0xa11, rel as u64]),
        )
        .map(|o| (arm, o))
    });

    let sup = supervised_upper_bound(&ds, &cfg.train)?;
    let sup_outcomes = exec::map(
        qualified.iter().copied().collect::<Vec<RelId>>(),
        |rel| retrieval_with_model(rel, &ds, &sup.model, &cfg.retrieval),
    );

    let mut csv = String::from("arm,rel,group,precision,k\n");
    let mut table: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    let mut push = |arm: &str, rel: RelId, precision: f64, k: usize, csv: &mut String| {
        let group = format!("G{}", group_of.get(&rel).map(|g| g + 1).unwrap_or(0));
        let _ = writeln!(csv, "{arm},{},{group},{precision:.6},{k}", ds.relation(rel).name);
        table
            .entry(arm.to_string())
            .or_default()
            .entry(group)
            .or_default()
            .push(precision);
    };
    for result in outcomes {
        let (arm, out) = result?;
        push(arm.label(), out.rel_id, out.precision, out.k, &mut csv);
    }
    for result in sup_outcomes {
        let out = result?;
        push("supervised", out.rel_id, out.precision, out.k, &mut csv);
    }
    write_atomic(&reports.join("retrieval.csv"), csv.as_bytes())?;

    let mut rows = Vec::new();
    let mut per_arm_group: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for (arm, groups) in &table {
        let mut means = BTreeMap::new();
        let mut all_vals = Vec::new();
        for (group, vals) in groups {
            means.insert(group.clone(), vals.iter().sum::<f64>() / vals.len() as f64);
            all_vals.extend(vals.iter().copied());
        }
        let overall = all_vals.iter().sum::<f64>() / all_vals.len() as f64;
        per_arm_group.insert(arm.clone(), means.clone());
        rows.push(RetrievalGroupRow {
            arm: arm.clone(),
            groups: means,
            overall,
        });
    }
    let summary = RetrievalSummary {
        qualified: qualified.len(),
        note: None,
        rows,
    };
    save_summary(&summary, &reports.join("retrieval_summary.json"))?;
    println!(
        "retrieval over {} qualified relations written to {}",
        qualified.len(),
        reports.display()
    );
    Ok(RetrievalSummaryOut {
        per_arm_group,
        qualified: qualified.len(),
    })
}

pub struct RetrievalSummaryOut {
    pub per_arm_group: BTreeMap<String, BTreeMap<String, f64>>,
    pub qualified: usize,
}

/// Re-run one archived stream deterministically and dump the encodings of
/// two relations' test instances right after each relation's own task.
pub fn cmd_rep_dump(
    root: &Path,
    rel_a: &str,
    rel_b: &str,
    use_aca: bool,
) -> Result<PathBuf, HarnessError> {
    let archive = load_archive(root)?;
    let ds = reload_dataset(root, &archive)?;
    let cfg = &archive.config;
    let seed = *cfg
        .seeds
        .first()
        .ok_or_else(|| HarnessError::Config("archive config has no seeds".into()))?;

    let id_a = ds
        .relation_by_name(rel_a)
        .ok_or_else(|| HarnessError::Config(format!("unknown relation {rel_a:?}")))?
        .rel_id;
    let id_b = ds
        .relation_by_name(rel_b)
        .ok_or_else(|| HarnessError::Config(format!("unknown relation {rel_b:?}")))?
        .rel_id;

    let stream = split_tasks(&ds, cfg.task_count, seed)?;
    let intro_of = |rel: RelId| {
        stream
            .tasks
            .iter()
            .position(|t| t.relation_ids.contains(&rel))
            .expect("stream partitions all relations")
    };
    let checkpoints = {
        let (ia, ib) = (intro_of(id_a), intro_of(id_b));
        [ia.min(ib), ia.max(ib)]
    };

    let arm = if use_aca { Arm::Aca } else { Arm::Baseline };
    let train = cfg.train_for(seed, arm);
    let test: Vec<&crate::corpus::Instance> = ds
        .instances
        .iter()
        .filter(|i| {
            (i.relation == id_a || i.relation == id_b)
                && ds.splits.get(&i.instance_id) == Some(&Split::Test)
        })
        .collect();

    let mut rows: Vec<(String, String, usize, Vec<f64>)> = Vec::new();
    run_stream_observed(&stream, &ds.relations, &train, |task_index, model| {
        if checkpoints.contains(&task_index) {
            for inst in &test {
                rows.push((
                    inst.instance_id.clone(),
                    ds.relation(inst.relation).name.clone(),
                    task_index,
                    model.encode(inst),
                ));
            }
        }
    })?;

    let h = cfg.train.hidden_dim;
    let mut csv = String::from("instance_id,relation,checkpoint");
    for i in 1..=h {
        let _ = write!(csv, ",h_{i}");
    }
    csv.push('\n');
    for (id, rel, ckpt, enc) in &rows {
        let _ = write!(csv, "{id},{rel},{}", ckpt + 1);
        for v in enc {
            let _ = write!(csv, ",{v}");
        }
        csv.push('\n');
    }
    let path = root
        .join("reports")
        .join(format!("repdump_{rel_a}_{rel_b}_{}.csv", arm.label()));
    write_atomic(&path, csv.as_bytes())?;
    println!("wrote {} rows to {}", rows.len(), path.display());
    Ok(path)
}
