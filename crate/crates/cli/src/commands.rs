//! One function per subcommand. Each reads its inputs, writes only the
//! files it declares into the output directory, and returns.

use std::fs;
use std::path::Path;

use corespect::dataset::{self, CsvOptions};
use corespect::expansion::{cluster_subset, corespect_detailed, plain, rank_points};
use corespect::flowrank::layer_preservation_check;
use corespect::metrics::{self, NeighborMetric};
use corespect::rng::derive_indexed;
use corespect::synth::{self, LcpdmParams};
use corespect::{Algo, CorespectParams, Dataset, NoiseSpec, StageTimings};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{EvalArgs, Resolved, RunArgs, RunConfig, SynthArgs};
use crate::error::{CliError, CliResult};
use crate::report::*;

/// Input after loading and preprocessing.
struct Input {
    data: Dataset,
    true_layers: Option<Vec<usize>>,
    k: usize,
}

fn load_input(args: &RunArgs) -> CliResult<Input> {
    let mut skip = Vec::new();
    if let Some(c) = &args.layer_column {
        skip.push(c.clone());
    }
    let opts = CsvOptions { label_column: args.label_column.clone(), skip_columns: skip };
    let mut data = dataset::load_csv_with(&args.input, &opts)?;
    let true_layers = match &args.layer_column {
        Some(c) => {
            let mut skip = Vec::new();
            if let Some(l) = &args.label_column {
                skip.push(l.clone());
            }
            let layers = dataset::load_csv_with(&args.input, &CsvOptions { label_column: Some(c.clone()), skip_columns: skip })?;
            Some(layers.labels().expect("label column was requested").to_vec())
        }
        None => None,
    };
    if args.log_normalize {
        data = dataset::log_normalize(&data)?;
    }
    if let Some(m) = args.pca_dim {
        if m > data.dim().min(data.n()) {
            return Err(CliError::Config(format!("pca-dim {m} exceeds min(n, d) = {}", data.dim().min(data.n()))));
        }
        data = dataset::pca_reduce(&data, m)?;
    }
    let k = match (args.k, data.num_classes()) {
        (Some(k), _) => k,
        (None, Some(c)) => c,
        (None, None) => return Err(CliError::Config("k must be given when there is no label column to infer it from".into())),
    };
    Ok(Input { data, true_layers, k })
}

fn require_truth<'a>(input: &'a Input, command: &str) -> CliResult<&'a [usize]> {
    input
        .data
        .labels()
        .ok_or_else(|| CliError::Config(format!("{command} needs ground-truth labels (--label-column)")))
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_file(dir: &Path, name: &str, contents: &[u8]) -> CliResult<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| CliError::io(&path, e))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Invariant(e.to_string()))?;
    text.push('\n');
    write_file(dir, name, text.as_bytes())
}

fn seed_for(args: &RunArgs, rep: usize) -> u64 {
    args.seed.wrapping_add(rep as u64)
}

struct RepOutcome {
    labels: Vec<usize>,
    summary: PipelineSummary,
    timing: StageTimings,
}

fn run_once(d: &Dataset, algo: Algo, k: usize, params: &CorespectParams, plain_only: bool) -> CliResult<RepOutcome> {
    if plain_only {
        let r = plain(d, algo, k, params)?;
        let summary = PipelineSummary {
            method: algo.name().to_owned(),
            expansion_skipped: true,
            core_size: d.n(),
            layers: 1,
            edge_count: 0,
            work_count: 0,
        };
        return Ok(RepOutcome { labels: r.labels, summary, timing: r.timing });
    }
    let run = corespect_detailed(d, algo, k, params)?;
    let bound = d.n() as u64 * params.t as u64 * k as u64;
    if run.result.work_count != k as u64 * run.result.edge_count as u64 || run.result.work_count > bound {
        return Err(CliError::Invariant(format!(
            "work count {} breaks the k * edges / n * t * k accounting ({} edges)",
            run.result.work_count, run.result.edge_count
        )));
    }
    let summary = PipelineSummary {
        method: format!("corespect-{}", algo.name()),
        expansion_skipped: run.result.expansion_skipped,
        core_size: run.partition.core().len(),
        layers: run.partition.num_layers(),
        edge_count: run.result.edge_count,
        work_count: run.result.work_count,
    };
    Ok(RepOutcome { labels: run.result.labels, summary, timing: run.result.timing })
}

struct Scores {
    ari: f64,
    nmi: f64,
    accuracy: f64,
}

fn score(truth: &[usize], pred: &[usize]) -> CliResult<Scores> {
    Ok(Scores {
        ari: metrics::ari(truth, pred)?,
        nmi: metrics::nmi(truth, pred)?,
        accuracy: metrics::best_match_accuracy(truth, pred)?,
    })
}

fn summarize(records: &[RepRecord]) -> Option<MetricSummary> {
    let col = |f: fn(&RepRecord) -> Option<f64>| records.iter().map(f).collect::<Option<Vec<f64>>>();
    Some(MetricSummary {
        ari: Stat::of(&col(|r| r.ari)?),
        nmi: Stat::of(&col(|r| r.nmi)?),
        accuracy: Stat::of(&col(|r| r.accuracy)?),
    })
}

fn base_report(command: &str, args: &RunArgs, input: &Input) -> RunReport {
    RunReport {
        config: RunConfig { command: command.to_owned(), args: args.clone() },
        data: DataSummary { n: input.data.n(), dim: input.data.dim(), k: input.k, classes: input.data.num_classes() },
        pipeline: None,
        metrics: None,
        repetitions: Vec::new(),
        noise_sweep: None,
        fraction_curve: None,
        diagnostics: None,
    }
}

fn labels_csv(labels: &[usize]) -> String {
    let mut out = String::from("index,label\n");
    for (i, l) in labels.iter().enumerate() {
        out.push_str(&format!("{i},{l}\n"));
    }
    out
}

pub fn cluster(args: &RunArgs) -> CliResult<()> {
    let Resolved { algo, params } = args.resolve()?;
    let input = load_input(args)?;
    let truth = input.data.labels();
    let outcomes: Vec<RepOutcome> = (0..args.reps)
        .into_par_iter()
        .map(|rep| run_once(&input.data, algo, input.k, &params.clone().with_seed(seed_for(args, rep)), args.plain))
        .collect::<CliResult<_>>()?;

    let mut report = base_report("cluster", args, &input);
    for (rep, o) in outcomes.iter().enumerate() {
        let s = truth.map(|t| score(t, &o.labels)).transpose()?;
        report.repetitions.push(RepRecord {
            rep,
            seed: seed_for(args, rep),
            work_count: o.summary.work_count,
            ari: s.as_ref().map(|s| s.ari),
            nmi: s.as_ref().map(|s| s.nmi),
            accuracy: s.as_ref().map(|s| s.accuracy),
        });
    }
    report.metrics = summarize(&report.repetitions);
    report.pipeline = Some(outcomes[0].summary.clone());

    ensure_dir(&args.output_dir)?;
    write_file(&args.output_dir, "labels.csv", labels_csv(&outcomes[0].labels).as_bytes())?;
    write_json(&args.output_dir, "report.json", &report)?;
    if args.timings {
        let t: Vec<TimingRecord> = outcomes.iter().enumerate().map(|(i, o)| TimingRecord::new(i, &o.timing)).collect();
        write_json(&args.output_dir, "timings.json", &t)?;
    }
    Ok(())
}

pub fn rank(args: &RunArgs) -> CliResult<()> {
    let Resolved { params, .. } = args.resolve()?;
    let input = load_input(args)?;
    let mut timing = StageTimings::default();
    let (_, scores, partition) = rank_points(&input.data, &params, &mut timing)?;
    let layer_of = partition.layer_of();
    let mut out = String::from("index,pi,z,score,layer\n");
    for i in 0..input.data.n() {
        out.push_str(&format!("{i},{},{},{},{}\n", scores.pi[i], scores.z[i], scores.score[i], layer_of[i]));
    }
    let mut report = base_report("rank", args, &input);
    report.pipeline = Some(PipelineSummary {
        method: "flowrank".into(),
        expansion_skipped: true,
        core_size: partition.core().len(),
        layers: partition.num_layers(),
        edge_count: 0,
        work_count: 0,
    });
    ensure_dir(&args.output_dir)?;
    write_file(&args.output_dir, "rank.csv", out.as_bytes())?;
    write_json(&args.output_dir, "report.json", &report)?;
    if args.timings {
        write_json(&args.output_dir, "timings.json", &[TimingRecord::new(0, &timing)])?;
    }
    Ok(())
}

pub fn noise_sweep(args: &RunArgs) -> CliResult<()> {
    let Resolved { algo, params } = args.resolve()?;
    if args.sigma.is_empty() {
        return Err(CliError::Config("noise-sweep needs at least one --sigma value".into()));
    }
    let input = load_input(args)?;
    let truth = require_truth(&input, "noise-sweep")?;
    let jobs: Vec<(usize, usize)> = (0..args.sigma.len()).flat_map(|s| (0..args.reps).map(move |r| (s, r))).collect();
    // (plain ARI, pipeline ARI) per (sigma, rep), in job order
    let results: Vec<(f64, f64)> = jobs
        .par_iter()
        .map(|&(s, rep)| {
            let spec = NoiseSpec { sigma: args.sigma[s], seed: derive_indexed(args.seed, "noise", rep as u64) };
            let noisy = dataset::add_gaussian_noise(&input.data, spec)?;
            let p = params.clone().with_seed(seed_for(args, rep));
            let a = run_once(&noisy, algo, input.k, &p, true)?;
            let b = run_once(&noisy, algo, input.k, &p, false)?;
            Ok((metrics::ari(truth, &a.labels)?, metrics::ari(truth, &b.labels)?))
        })
        .collect::<CliResult<_>>()?;

    let mut rows = Vec::new();
    let mut csv = String::from("sigma,algo,mean_ari,max_dev\n");
    for (s, &sigma) in args.sigma.iter().enumerate() {
        let chunk = &results[s * args.reps..(s + 1) * args.reps];
        for (name, values) in [
            (algo.name().to_owned(), chunk.iter().map(|r| r.0).collect::<Vec<_>>()),
            (format!("corespect-{}", algo.name()), chunk.iter().map(|r| r.1).collect()),
        ] {
            let st = Stat::of(&values);
            csv.push_str(&format!("{sigma},{name},{},{}\n", st.mean, st.max_dev));
            rows.push(SweepRow { sigma, algo: name, mean_ari: st.mean, max_dev: st.max_dev, values });
        }
    }
    let mut report = base_report("noise-sweep", args, &input);
    report.noise_sweep = Some(rows);
    ensure_dir(&args.output_dir)?;
    write_file(&args.output_dir, "noise_sweep.csv", csv.as_bytes())?;
    write_json(&args.output_dir, "report.json", &report)?;
    Ok(())
}

pub fn fraction_curve(args: &RunArgs) -> CliResult<()> {
    let Resolved { algo, params } = args.resolve()?;
    let input = load_input(args)?;
    let truth = require_truth(&input, "fraction-curve")?;
    let per_rep: Vec<Vec<FractionRow>> = (0..args.reps)
        .into_par_iter()
        .map(|rep| {
            let p = params.clone().with_seed(seed_for(args, rep));
            let run = corespect_detailed(&input.data, algo, input.k, &p)?;
            let l = run.partition.num_layers();
            let mut prefix = Vec::new();
            let mut rows = Vec::with_capacity(l);
            for j in 0..l {
                // ranking order, so the first prefix is exactly the clustered core
                prefix.extend_from_slice(&run.partition.layers[j]);
                let sub_truth: Vec<usize> = prefix.iter().map(|&i| truth[i]).collect();
                let expanded: Vec<usize> = prefix.iter().map(|&i| run.result.labels[i]).collect();
                let direct = cluster_subset(&input.data, &prefix, algo, input.k, &p)?.labels();
                rows.push(FractionRow {
                    x: (j + 1) as f64 / l as f64,
                    points: prefix.len(),
                    plain_accuracy: metrics::best_match_accuracy(&sub_truth, &direct)?,
                    corespect_accuracy: metrics::best_match_accuracy(&sub_truth, &expanded)?,
                });
            }
            Ok(rows)
        })
        .collect::<CliResult<_>>()?;

    let reps = per_rep.len() as f64;
    let rows: Vec<FractionRow> = (0..per_rep[0].len())
        .map(|j| FractionRow {
            x: per_rep[0][j].x,
            points: per_rep[0][j].points,
            plain_accuracy: per_rep.iter().map(|r| r[j].plain_accuracy).sum::<f64>() / reps,
            corespect_accuracy: per_rep.iter().map(|r| r[j].corespect_accuracy).sum::<f64>() / reps,
        })
        .collect();
    let mut csv = String::from("x,points,plain_accuracy,corespect_accuracy\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{},{}\n", r.x, r.points, r.plain_accuracy, r.corespect_accuracy));
    }
    let mut report = base_report("fraction-curve", args, &input);
    report.fraction_curve = Some(rows);
    ensure_dir(&args.output_dir)?;
    write_file(&args.output_dir, "fraction_curve.csv", csv.as_bytes())?;
    write_json(&args.output_dir, "report.json", &report)?;
    Ok(())
}

pub fn diagnose(args: &RunArgs) -> CliResult<()> {
    let Resolved { algo, params } = args.resolve()?;
    let input = load_input(args)?;
    let truth = require_truth(&input, "diagnose")?;
    let d = &input.data;
    let run = corespect_detailed(d, algo, input.k, &params)?;
    let base = plain(d, algo, input.k, &params)?;

    let ranking = &run.partition.ranking;
    let n = d.n();
    let take = |f: f64| ((f * n as f64).round() as usize).clamp(1, n);
    let mut pool: Vec<usize> = ranking[..take(args.pool_fraction)].to_vec();
    let mut queries: Vec<usize> = ranking[n - take(args.query_fraction)..].to_vec();
    pool.sort_unstable();
    queries.sort_unstable();

    let agreement = |qs: &[usize]| -> CliResult<Agreement> {
        let euclidean = metrics::nn_label_agreement(d, truth, qs, &pool, args.nn_q, NeighborMetric::Euclidean)?;
        let cdnn_path = match &run.graph {
            Some(g) => Some(metrics::nn_label_agreement(d, truth, qs, &pool, args.nn_q, NeighborMetric::CdnnPath(g))?),
            None => None,
        };
        Ok(Agreement { euclidean, cdnn_path })
    };
    let periphery_to_top = agreement(&queries)?;
    let top_to_top = agreement(&pool)?;

    let obj = metrics::subset_kmeans_objective_report(d, &base.labels, &run.result.labels, run.partition.core())?;
    let layer_preservation = match &input.true_layers {
        Some(tl) => Some(layer_preservation_check(&run.partition, tl, truth)?.fraction),
        None => None,
    };
    let mut report = base_report("diagnose", args, &input);
    report.diagnostics = Some(Diagnostics {
        pool_size: pool.len(),
        query_size: queries.len(),
        nn_q: args.nn_q,
        periphery_to_top,
        top_to_top,
        objective: Objectives {
            core_labels_on_core: obj.core_labels_on_core,
            full_labels_on_core: obj.full_labels_on_core,
            core_labels_on_full: obj.core_labels_on_full,
            full_labels_on_full: obj.full_labels_on_full,
        },
        layer_preservation,
    });
    ensure_dir(&args.output_dir)?;
    write_json(&args.output_dir, "report.json", &report)?;
    Ok(())
}

pub fn synth(args: &SynthArgs) -> CliResult<()> {
    let entangled = match args.kind.as_str() {
        "separable" => false,
        "entangled" => true,
        other => return Err(CliError::Config(format!("unknown synthetic kind {other:?} (expected separable or entangled)"))),
    };
    let mut p = if entangled { LcpdmParams::entangled_default(args.seed) } else { LcpdmParams::new(args.seed) };
    p.k = args.k;
    p.dim = args.dim;
    p.separation = args.separation;
    p.alignment = args.alignment;
    if let Some(l) = args.layers {
        p.layers = l;
    }
    if let Some(n) = args.n_core {
        p.n_core = n;
    }
    if let Some(c) = args.density_ratio {
        p.density_ratio = c;
    }
    if let Some(w) = args.layer_width {
        p.layer_width = w;
    }
    let s = if entangled { synth::gen_entangled(&p, args.curl)? } else { synth::gen_separable(&p)? };
    let mut buf = Vec::new();
    dataset::write_csv(&s.dataset, &mut buf, &[("true_layer", &s.true_layers)])?;
    ensure_dir(&args.output_dir)?;
    write_file(&args.output_dir, "synth.csv", &buf)
}

fn read_pred(path: &Path, n: usize) -> CliResult<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header.trim() != "index,label" {
        return Err(CliError::Data(format!("{}: expected header \"index,label\"", path.display())));
    }
    let mut pred: Vec<Option<usize>> = vec![None; n];
    for (row, line) in lines.enumerate() {
        let bad = || CliError::Data(format!("{}: row {}: cannot parse {line:?}", path.display(), row + 1));
        let (i, l) = line.split_once(',').ok_or_else(bad)?;
        let i: usize = i.trim().parse().map_err(|_| bad())?;
        let l: usize = l.trim().parse().map_err(|_| bad())?;
        let slot = pred.get_mut(i).ok_or_else(|| CliError::Data(format!("{}: index {i} out of range (n = {n})", path.display())))?;
        if slot.replace(l).is_some() {
            return Err(CliError::Data(format!("{}: index {i} appears twice", path.display())));
        }
    }
    pred.into_iter()
        .enumerate()
        .map(|(i, l)| l.ok_or_else(|| CliError::Data(format!("{}: no label for index {i}", path.display()))))
        .collect()
}

pub fn eval(args: &EvalArgs) -> CliResult<String> {
    let data = dataset::load_csv(&args.input, Some(&args.label_column))?;
    let truth = data.labels().expect("label column was requested");
    let pred = read_pred(&args.pred, data.n())?;
    let s = score(truth, &pred)?;
    let k_pred = dataset::relabel(&pred).iter().max().map_or(0, |m| m + 1);
    let report = EvalReport {
        ari: s.ari,
        nmi: s.nmi,
        accuracy: s.accuracy,
        n: data.n(),
        k_pred,
        k_true: data.num_classes().unwrap_or(0),
    };
    serde_json::to_string_pretty(&report).map_err(|e| CliError::Invariant(e.to_string()))
}
