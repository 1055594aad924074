use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use autoreply::classify::{
    classifiers_from_records, ensemble_from_classifiers, evaluate_ensemble, fit_reply_threshold, handcrafted_pipeline,
    lm_generated_pipeline, select_by_recall, single_reply_table, threshold_grid, ClassifierBundle, Ensemble,
    EnsembleFile, PipelineResult, ReplyClassifier,
};
use autoreply::data::{load_examples, load_replies, write_replies, Dataset, Reply, ReplyOrigin, Split};
use autoreply::handcrafted::handcrafted_texts;
use autoreply::manifest::{read_json, unix_now, write_json, InputHash, RunManifest};
use autoreply::metrics::{format_table, paired_bootstrap, EvalReport, Metric, Prediction, SystemOutputs};
use autoreply::scorer::{reply_from_text, NGramModel, Scorer};
use autoreply::search::{autoreply_search, brute_force_search, diff_records, SearchConfig, SearchRun};
use autoreply::tuning::{default_grid, grid_tune, TuneReport};
use clap::parser::ValueSource;
use clap::{CommandFactory, FromArgMatches};
use serde::Serialize;

use crate::{
    backend, Cli, Command, FitEvaluateArgs, IngestArgs, Mode, Phase, RerunArgs, SearchArgs, TrainNgramArgs, TuneArgs,
};

/// Command-line misuse that clap already reported.
#[derive(Debug, thiserror::Error)]
#[error("invalid arguments")]
struct Usage;

pub fn already_reported(e: &anyhow::Error) -> bool {
    e.is::<Usage>()
}

/// 2 for scorer or transport failures, 1 for everything else.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    let scorer_failure = e
        .chain()
        .filter_map(|c| c.downcast_ref::<autoreply::Error>())
        .any(autoreply::Error::is_scorer_failure);
    if scorer_failure {
        2
    } else {
        1
    }
}

pub fn run_argv(argv: &[String]) -> anyhow::Result<()> {
    let matches = match Cli::command().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            e.print()?;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => Ok(()),
                _ => Err(Usage.into()),
            };
        }
    };
    let t_delta_given = matches
        .subcommand_matches("search")
        .is_some_and(|m| m.value_source("t_delta") == Some(ValueSource::CommandLine));
    let cli = Cli::from_arg_matches(&matches)?;
    let ctx = Ctx {
        args: argv.iter().skip(1).cloned().collect(),
        t_delta_given,
        cli: &cli,
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.workers {
        if n == 0 {
            bail!(autoreply::Error::Config("--workers must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build()?;
    pool.install(|| match &cli.command {
        Command::Ingest(a) => ingest(&ctx, a),
        Command::TrainNgram(a) => train_ngram(&ctx, a),
        Command::Search(a) => search(&ctx, a),
        Command::FitEvaluate(a) => fit_evaluate(&ctx, a),
        Command::Tune(a) => tune(&ctx, a),
        Command::Rerun(a) => rerun(a),
    })
}

struct Ctx<'a> {
    args: Vec<String>,
    t_delta_given: bool,
    cli: &'a Cli,
}

impl Ctx<'_> {
    fn require_seed(&self, what: &str) -> anyhow::Result<u64> {
        self.cli
            .seed
            .ok_or_else(|| anyhow!(autoreply::Error::Config(format!("{what} is stochastic; pass --seed"))))
    }

    fn start(&self, command: &str, default_manifest: PathBuf) -> Run {
        Run {
            manifest_path: self.cli.manifest.clone().unwrap_or(default_manifest),
            manifest: RunManifest {
                command: command.to_string(),
                args: self.args.clone(),
                config: serde_json::Value::Null,
                inputs: Vec::new(),
                scorer_version: None,
                seed: self.cli.seed,
                started_unix: unix_now(),
                finished_unix: 0,
                outputs: Vec::new(),
            },
        }
    }
}

/// Manifest under construction. Outputs name the manifest by the path it is
/// written to, so reruns with the same arguments produce identical files.
struct Run {
    manifest_path: PathBuf,
    manifest: RunManifest,
}

impl Run {
    fn reference(&self) -> Option<String> {
        Some(self.manifest_path.display().to_string())
    }

    fn input(&mut self, path: &Path) -> anyhow::Result<InputHash> {
        let h = InputHash::of(path)?;
        self.manifest.inputs.push(h.clone());
        Ok(h)
    }

    fn scorer(&mut self, scorer: &dyn Scorer) -> String {
        let v = scorer.version();
        self.manifest.scorer_version = Some(v.clone());
        v
    }

    fn config<T: Serialize>(&mut self, config: &T) -> anyhow::Result<()> {
        self.manifest.config = serde_json::to_value(config)?;
        Ok(())
    }

    fn json<T: Serialize + ?Sized>(&mut self, path: &Path, value: &T) -> anyhow::Result<()> {
        write_json(path, value)?;
        self.manifest.outputs.push(path.to_path_buf());
        Ok(())
    }

    fn text(&mut self, path: &Path, text: &str) -> anyhow::Result<()> {
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
        self.manifest.outputs.push(path.to_path_buf());
        Ok(())
    }

    fn finish(mut self) -> anyhow::Result<()> {
        self.manifest.finished_unix = unix_now();
        self.manifest.save(&self.manifest_path)?;
        Ok(())
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

fn filtered(d: Dataset, category: Option<&str>) -> Dataset {
    match category {
        Some(cat) => d.filter_by_category(cat),
        None => d,
    }
}

fn ingest(ctx: &Ctx, a: &IngestArgs) -> anyhow::Result<()> {
    let split: Split = a.split.parse().map_err(|e: String| autoreply::Error::Config(e))?;
    let mut run = ctx.start("ingest", sibling(&a.output, ".manifest.json"));
    run.input(&a.input)?;
    run.config(&serde_json::json!({ "split": split, "category": a.category }))?;
    let data = filtered(load_examples(&a.input, split)?, a.category.as_deref());
    let report = data.validate();
    println!("{}", serde_json::to_string_pretty(&report)?);
    if let Some(path) = &a.report {
        run.json(path, &report)?;
    }
    if !report.is_clean() {
        bail!(autoreply::Error::Invalid(format!(
            "{} has {} validation issue(s)",
            a.input.display(),
            report.issues.len()
        )));
    }
    data.write(&a.output)?;
    run.manifest.outputs.push(a.output.clone());
    run.finish()
}

fn train_ngram(ctx: &Ctx, a: &TrainNgramArgs) -> anyhow::Result<()> {
    let mut run = ctx.start("train-ngram", sibling(&a.output, ".manifest.json"));
    run.input(&a.corpus)?;
    run.config(&serde_json::json!({ "order": a.order, "k": a.k }))?;
    let model = NGramModel::train(&a.corpus, a.order, a.k)?;
    run.scorer(&model);
    model.save(&a.output)?;
    run.manifest.outputs.push(a.output.clone());
    eprintln!("{} ({} words)", model.version(), model.vocab().len());
    run.finish()
}

fn search(ctx: &Ctx, a: &SearchArgs) -> anyhow::Result<()> {
    let cfg = a.config.to_config(ctx.t_delta_given);
    cfg.validate()?;
    if a.print_config {
        println!("{}", serde_json::to_string_pretty(&cfg)?);
        return Ok(());
    }
    let output = a
        .output
        .as_ref()
        .ok_or_else(|| anyhow!(autoreply::Error::Config("search needs --output".into())))?;
    let mut run = ctx.start("search", sibling(output, ".manifest.json"));
    let hashes = vec![run.input(&a.train)?];
    run.config(&cfg)?;
    let train = filtered(load_examples(&a.train, Split::Train)?, a.category.as_deref());
    let scorer = backend::open(ctx.cli)?;
    let scorer_version = run.scorer(scorer.as_ref());
    let (bad, good) = (train.bad(), train.good());
    let outcome = autoreply_search(scorer.as_ref(), &bad, &good, &cfg)?;
    eprintln!(
        "{} replies emitted, {} nodes expanded ({} bad, {} good)",
        outcome.records.len(),
        outcome.expanded_nodes,
        bad.len(),
        good.len()
    );
    if a.oracle {
        let brute = brute_force_search(scorer.as_ref(), &bad, &good, &cfg)?;
        let diff = diff_records(&outcome.records, &brute, 1e-9);
        if !diff.is_empty() {
            for line in &diff {
                eprintln!("oracle: {line}");
            }
            bail!(autoreply::Error::Invalid(format!(
                "search and oracle disagree in {} place(s)",
                diff.len()
            )));
        }
        eprintln!("oracle: identical ({} replies)", brute.len());
    }
    let result = SearchRun {
        manifest: run.reference(),
        config: cfg,
        dataset_hashes: hashes,
        scorer_version,
        bad_examples: bad.len(),
        good_examples: good.len(),
        expanded_nodes: outcome.expanded_nodes,
        records: outcome.records,
    };
    run.json(output, &result)?;
    if let Some(path) = &a.replies_out {
        let replies: Vec<Reply> = result.records.iter().map(|r| r.reply.clone()).collect();
        write_replies(path, &replies)?;
        run.manifest.outputs.push(path.clone());
    }
    run.finish()
}

fn split_for(phase: Phase) -> Split {
    match phase {
        Phase::Train => Split::Train,
        Phase::Validation => Split::Validation,
        Phase::Test => Split::Test,
    }
}

/// Loads the file of `phase` tagged with the `role` split the step requires.
fn load_phase(a: &FitEvaluateArgs, run: &mut Run, phase: Phase, role: Split) -> anyhow::Result<Dataset> {
    let path = match phase {
        Phase::Train => &a.train,
        Phase::Validation => &a.validation,
        Phase::Test => &a.test,
    };
    let path = path.as_ref().ok_or_else(|| {
        anyhow!(autoreply::Error::Config(format!(
            "missing --{} split",
            split_for(phase)
        )))
    })?;
    run.input(path)?;
    let loaded = load_examples(path, split_for(phase))?;
    if split_for(phase) != role {
        log::warn!("using the {} file as the {role} split", split_for(phase));
    }
    Ok(Dataset::new(role, loaded.examples().to_vec()))
}

fn load_predictions(path: &Path) -> anyhow::Result<Vec<Prediction>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| {
                anyhow!(autoreply::Error::Record {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: format!("malformed prediction: {e}"),
                })
            })
        })
        .collect()
}

fn predictions_text(preds: &[Prediction]) -> anyhow::Result<String> {
    let mut out = String::new();
    for p in preds {
        out.push_str(&serde_json::to_string(p)?);
        out.push('\n');
    }
    Ok(out)
}

/// Orders `preds` like `test`, failing on missing or unknown ids.
fn align(preds: Vec<Prediction>, test: &Dataset, path: &Path) -> anyhow::Result<Vec<Prediction>> {
    let mut by_id: std::collections::HashMap<String, Prediction> =
        preds.into_iter().map(|p| (p.id.clone(), p)).collect();
    let aligned = test
        .examples()
        .iter()
        .map(|ex| {
            by_id.remove(&ex.id).ok_or_else(|| {
                anyhow!(autoreply::Error::Invalid(format!(
                    "{} has no prediction for {:?}",
                    path.display(),
                    ex.id
                )))
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    if let Some(extra) = by_id.keys().next() {
        bail!(autoreply::Error::Invalid(format!(
            "{} predicts unknown example {extra:?}",
            path.display()
        )));
    }
    Ok(aligned)
}

#[derive(Serialize)]
struct EnsembleSummary {
    label: String,
    c_min: Option<usize>,
    size: usize,
    n_required: usize,
    ensemble_file: PathBuf,
    predictions_file: PathBuf,
    n_required_sweep: Vec<autoreply::classify::SweepRow>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    subsets: Vec<autoreply::classify::SubsetRow>,
    test: EvalReport,
}

#[derive(Serialize)]
struct FitReport {
    manifest: Option<String>,
    mode: String,
    scorer_version: String,
    classifiers: usize,
    ensembles: Vec<EnsembleSummary>,
}

fn fit_evaluate(ctx: &Ctx, a: &FitEvaluateArgs) -> anyhow::Result<()> {
    let out_dir = a
        .output_dir
        .clone()
        .ok_or_else(|| anyhow!(autoreply::Error::Config("fit-evaluate needs --output-dir".into())))?;
    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    if let Some(files) = &a.compare {
        return compare(ctx, a, &files[0], &files[1], &out_dir);
    }
    if a.fit_split == Phase::Test {
        bail!(autoreply::Error::Phase(
            "thresholds may not be fit on the test split".into()
        ));
    }
    if a.tune_split == Phase::Test {
        bail!(autoreply::Error::Phase(
            "N_R and subsets may not be chosen on the test split".into()
        ));
    }
    let mut run = ctx.start("fit-evaluate", out_dir.join("manifest.json"));
    let mut hashes = Vec::new();
    let train = load_phase(a, &mut run, a.fit_split, Split::Train)?;
    let validation = load_phase(a, &mut run, a.tune_split, Split::Validation)?;
    let test = load_phase(a, &mut run, Phase::Test, Split::Test)?;
    hashes.extend(run.manifest.inputs.iter().cloned());
    let scorer = backend::open(ctx.cli)?;
    let scorer_version = run.scorer(scorer.as_ref());
    let s = scorer.as_ref();
    let mode = format!("{:?}", a.mode).to_lowercase();
    run.config(&serde_json::json!({
        "mode": mode,
        "c_min": a.c_min,
        "n_required": a.n_required,
        "drop_grid_start": a.drop_grid_start,
        "samples_per_example": a.samples_per_example,
        "sample_p": a.sample_p,
        "max_len": a.max_len,
        "fit_split": format!("{:?}", a.fit_split).to_lowercase(),
        "tune_split": format!("{:?}", a.tune_split).to_lowercase(),
    }))?;

    if a.mode == Mode::SingleReply {
        let classifiers = match (&a.records, &a.replies) {
            (Some(path), _) => classifiers_from_records(s, &load_search_run(&mut run, path, &scorer_version)?, &train)?,
            (None, _) => reply_list(a, &mut run, s)?
                .iter()
                .map(|r| fit_reply_threshold(s, r, &train, None))
                .collect::<autoreply::Result<Vec<_>>>()?,
        };
        let rows = single_reply_table(s, &classifiers, &validation, &test)?;
        let mut table = String::new();
        table.push_str(&format!(
            "{:<40} {:>8} {:>7} {:>7} {:>7} | {:>7} {:>7} {:>7}\n",
            "reply", "t_r", "vPrec", "vRec", "vF1", "Prec", "Recall", "F1"
        ));
        for r in &rows {
            let pct = |x: f64| format!("{:.2}", 100.0 * x);
            table.push_str(&format!(
                "{:<40} {:>8.3} {:>7} {:>7} {:>7} | {:>7} {:>7} {:>7}\n",
                r.reply,
                r.threshold,
                pct(r.validation.precision),
                pct(r.validation.recall),
                pct(r.validation.f1),
                pct(r.test.precision),
                pct(r.test.recall),
                pct(r.test.f1)
            ));
        }
        print!("{table}");
        let report = serde_json::json!({
            "manifest": run.reference(),
            "mode": mode,
            "scorer_version": scorer_version,
            "rows": rows,
        });
        run.json(&out_dir.join("single_reply.json"), &report)?;
        run.text(&out_dir.join("single_reply.txt"), &table)?;
        return run.finish();
    }

    let results: Vec<(Option<usize>, PipelineResult)> = match a.mode {
        Mode::Handcrafted => {
            let replies = reply_list(a, &mut run, s)?;
            let mut r = handcrafted_pipeline(s, &replies, &train, &validation, &threshold_grid(!a.drop_grid_start))?;
            if let Some(n) = a.n_required {
                r.ensemble = Ensemble::new(r.ensemble.members().to_vec(), n)?;
            }
            vec![(None, r)]
        }
        Mode::Autoreply | Mode::LmGenerated => {
            let classifiers = if a.mode == Mode::Autoreply {
                let path = a
                    .records
                    .as_ref()
                    .ok_or_else(|| anyhow!(autoreply::Error::Config("autoreply mode needs --records".into())))?;
                classifiers_from_records(s, &load_search_run(&mut run, path, &scorer_version)?, &train)?
            } else {
                let seed = ctx.require_seed("lm-generated reply sampling")?;
                lm_generated_pipeline(s, &train, a.samples_per_example, a.sample_p, a.max_len, seed)?
            };
            a.c_min
                .iter()
                .map(|&c| Ok((Some(c), ensemble_for(s, &classifiers, &validation, c, a.n_required)?)))
                .collect::<anyhow::Result<Vec<_>>>()?
        }
        Mode::SingleReply => unreachable!("handled above"),
    };

    let all = &results[0].1.classifiers;
    run.json(
        &out_dir.join("classifiers.json"),
        &ClassifierBundle {
            manifest: run.reference(),
            scorer_version: scorer_version.clone(),
            dataset_hashes: hashes.clone(),
            classifiers: all.clone(),
        },
    )?;
    let mut summaries = Vec::new();
    for (c_min, r) in &results {
        let suffix = match c_min {
            Some(c) if results.len() > 1 => format!(".c{c}"),
            _ => String::new(),
        };
        let ensemble_file = out_dir.join(format!("ensemble{suffix}.json"));
        let predictions_file = out_dir.join(format!("test{suffix}.preds.jsonl"));
        run.json(
            &ensemble_file,
            &EnsembleFile {
                manifest: run.reference(),
                scorer_version: scorer_version.clone(),
                dataset_hashes: hashes.clone(),
                n_required: r.ensemble.n_required(),
                members: r.ensemble.members().to_vec(),
            },
        )?;
        let eval = evaluate_ensemble(s, &r.ensemble, &test)?;
        run.text(&predictions_file, &predictions_text(&eval.predictions)?)?;
        let size = r.ensemble.members().len();
        let label = match c_min {
            Some(c) => format!("{mode} (num={size}, c>={c})"),
            None => format!("{mode} (num={size})"),
        };
        summaries.push(EnsembleSummary {
            label,
            c_min: *c_min,
            size,
            n_required: r.ensemble.n_required(),
            ensemble_file,
            predictions_file,
            n_required_sweep: r.n_required_sweep.clone(),
            subsets: r.subsets.clone(),
            test: eval,
        });
    }
    let rows: Vec<(String, &EvalReport)> = summaries.iter().map(|s| (s.label.clone(), &s.test)).collect();
    let table = format_table(&rows);
    print!("{table}");
    run.text(&out_dir.join("report.txt"), &table)?;
    let report = FitReport {
        manifest: run.reference(),
        mode,
        scorer_version,
        classifiers: all.len(),
        ensembles: summaries,
    };
    run.json(&out_dir.join("report.json"), &report)?;
    run.finish()
}

fn ensemble_for(
    s: &dyn Scorer,
    classifiers: &[ReplyClassifier],
    validation: &Dataset,
    c_min: usize,
    n_required: Option<usize>,
) -> anyhow::Result<PipelineResult> {
    Ok(match n_required {
        None => ensemble_from_classifiers(s, classifiers.to_vec(), validation, c_min)?,
        Some(n) => PipelineResult {
            ensemble: Ensemble::new(select_by_recall(classifiers, c_min), n)?,
            classifiers: classifiers.to_vec(),
            n_required_sweep: Vec::new(),
            subsets: Vec::new(),
        },
    })
}

fn load_search_run(
    run: &mut Run,
    path: &Path,
    scorer_version: &str,
) -> anyhow::Result<Vec<autoreply::search::ReplyRecord>> {
    run.input(path)?;
    let search: SearchRun = read_json(path)?;
    if search.scorer_version != scorer_version {
        log::warn!(
            "{} was produced by {} but the current scorer is {scorer_version}",
            path.display(),
            search.scorer_version
        );
    }
    Ok(search.records)
}

/// Reply lists are JSON lines, or plain text (one reply per line) for `.txt` files.
fn read_reply_file(s: &dyn Scorer, path: &Path, max_len: usize) -> anyhow::Result<Vec<Reply>> {
    if path.extension().and_then(|e| e.to_str()) != Some("txt") {
        return Ok(load_replies(path, max_len)?);
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        out.push(
            reply_from_text(s, line, ReplyOrigin::Handcrafted)
                .with_context(|| format!("{}: reply {line:?}", path.display()))?,
        );
    }
    Ok(out)
}

fn reply_list(a: &FitEvaluateArgs, run: &mut Run, s: &dyn Scorer) -> anyhow::Result<Vec<Reply>> {
    match &a.replies {
        Some(path) => {
            run.input(path)?;
            read_reply_file(s, path, a.max_len)
        }
        None => Ok(handcrafted_texts()
            .into_iter()
            .map(|t| reply_from_text(s, t, ReplyOrigin::Handcrafted))
            .collect::<autoreply::Result<Vec<_>>>()?),
    }
}

fn compare(ctx: &Ctx, a: &FitEvaluateArgs, pa: &Path, pb: &Path, out_dir: &Path) -> anyhow::Result<()> {
    let seed = ctx.require_seed("the paired bootstrap")?;
    let metric: Metric = a.metric.parse().map_err(|e: String| autoreply::Error::Config(e))?;
    let mut run = ctx.start("fit-evaluate", out_dir.join("compare.manifest.json"));
    let test_path = a.test.as_ref().ok_or_else(|| {
        anyhow!(autoreply::Error::Config(
            "--compare needs --test for gold labels".into()
        ))
    })?;
    run.input(test_path)?;
    run.input(pa)?;
    run.input(pb)?;
    run.config(&serde_json::json!({ "metric": metric, "resamples": a.resamples }))?;
    let test = load_examples(test_path, Split::Test)?;
    let preds_a = align(load_predictions(pa)?, &test, pa)?;
    let preds_b = align(load_predictions(pb)?, &test, pb)?;
    let result = paired_bootstrap(
        &SystemOutputs::from_predictions(&preds_a),
        &SystemOutputs::from_predictions(&preds_b),
        &test.gold(),
        metric,
        a.resamples,
        seed,
    )?;
    println!(
        "{metric:?}: a = {:.4}, b = {:.4}, delta = {:+.4}, p = {:.4} ({} resamples)",
        result.metric_a, result.metric_b, result.observed_delta, result.p_value, result.resamples
    );
    let report = serde_json::json!({
        "manifest": run.reference(),
        "a": pa,
        "b": pb,
        "result": result,
    });
    run.json(&out_dir.join("compare.json"), &report)?;
    run.finish()
}

fn tune(ctx: &Ctx, a: &TuneArgs) -> anyhow::Result<()> {
    let mut run = ctx.start("tune", sibling(&a.output, ".manifest.json"));
    run.input(&a.train)?;
    let grid: Vec<SearchConfig> = match &a.grid {
        Some(path) => {
            run.input(path)?;
            read_json(path)?
        }
        None => default_grid(),
    };
    for cfg in &grid {
        cfg.validate()?;
    }
    run.config(&serde_json::json!({ "grid": grid, "category": a.category }))?;
    let train = filtered(load_examples(&a.train, Split::Train)?, a.category.as_deref());
    let scorer = backend::open(ctx.cli)?;
    let scorer_version = run.scorer(scorer.as_ref());
    let trusted = match &a.trusted {
        Some(path) => {
            run.input(path)?;
            read_reply_file(scorer.as_ref(), path, usize::MAX)?
        }
        None => {
            let mut out = Vec::new();
            for t in handcrafted_texts() {
                match reply_from_text(scorer.as_ref(), t, ReplyOrigin::Handcrafted) {
                    Ok(r) => out.push(r),
                    Err(e) if a.skip_untokenizable && !e.is_scorer_failure() => {
                        log::warn!("skipping {t:?}: {e}");
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            out
        }
    };
    let (bad, good) = (train.bad(), train.good());
    let (results, best) = grid_tune(scorer.as_ref(), &trusted, &bad, &good, &grid)?;
    let report = TuneReport {
        manifest: run.reference(),
        scorer_version,
        recommended: grid[best].clone(),
        recommended_index: best,
        grid,
        results,
    };
    eprintln!(
        "recommended config #{best}: {} of {} trusted replies survive, {} nodes expanded",
        report.results[best].survivors,
        trusted.len(),
        report.results[best].space_estimate
    );
    println!("{}", serde_json::to_string_pretty(&report.recommended)?);
    run.json(&a.output, &report)?;
    run.finish()
}

fn rerun(a: &RerunArgs) -> anyhow::Result<()> {
    let m = RunManifest::load(&a.from)?;
    let mut argv = vec!["autoreply".to_string()];
    argv.extend(m.args.iter().cloned());
    if m.args.first().map(String::as_str) == Some("rerun") {
        bail!(autoreply::Error::Config("manifest records a rerun".into()));
    }
    run_argv(&argv)?;
    if let (Some(before), Ok(after)) = (&m.scorer_version, RunManifest::load(&a.from)) {
        if after.scorer_version.as_ref() != Some(before) {
            log::warn!(
                "scorer version changed from {before} to {}",
                after.scorer_version.unwrap_or_default()
            );
        }
    }
    Ok(())
}
