use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use anyhow::{anyhow, bail, Context as _};
use rayon::prelude::*;
use serde::Serialize;

use super::config::{require_exists, RunConfig};
use super::render::{render_cross_markdown, render_plot, render_table, Format};
use super::{
    AugmentArgs, BackendArgs, BowArgs, Classify, CrossEvalArgs, EvaluateArgs, ExportArgs, Failure,
    IngestArgs, ReportArgs, SplitArgs, SubmitArgs,
};
use crate::augment::{
    apply_augmentation, export_finetune as build_finetune, paraphrase_item, write_finetune_jsonl,
    AugmentedItem, ExportVariant, FinetuneClient, JobStatus, LengthBounds, ParaphraseStyle,
};
use crate::corpus::{
    filter_items, load_crowspairs, load_stereoset, read_items, split_train_test, write_items,
    write_rejects, BiasCategory, McsbItem, Portion, Source, SplitSpec,
};
use crate::evaluator::{
    dataset_digest, evaluate as run_evaluation, read_records, write_records, EvalConfig,
    EvalRecord, RunManifest,
};
use crate::lexicon::{
    build_lexicon_report, LexiconReport, SelectionRule, DEFAULT_ALPHA, DEFAULT_K,
};
use crate::metrics::{
    aggregate_with, compare, cross_matrix, AggregateOptions, CrossRun, Denominator, Outcome,
};
use crate::modelgate::{BackendKind, BackendSpec, DiskCache, Gateway};
use crate::prompting::{PromptMode, TranscriptOptions};

type CmdResult = Result<(), Failure>;

pub(crate) struct Context {
    pub config: RunConfig,
    pub out: PathBuf,
}

impl Context {
    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }
}

const STEREOSET_TRAIN_PER_CATEGORY: usize = 20;
const CROWSPAIRS_TRAIN_PER_CATEGORY: usize = 8;

fn parse<T: FromStr<Err = E>, E: Display>(raw: &str) -> Result<T, Failure> {
    raw.parse::<T>()
        .map_err(|e| Failure::Invalid(anyhow!("{e}")))
}

fn parse_opt<T: FromStr<Err = E>, E: Display>(raw: Option<&str>) -> Result<Option<T>, Failure> {
    raw.map(parse).transpose()
}

fn write_text(path: &Path, text: &str) -> CmdResult {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))
            .runtime()?;
    }
    std::fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .runtime()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CmdResult {
    let mut text = serde_json::to_string_pretty(value).runtime()?;
    text.push('\n');
    write_text(path, &text)
}

fn load_items(path: &Path) -> Result<Vec<McsbItem>, Failure> {
    require_exists(path).invalid()?;
    read_items(path).invalid()
}

fn formats(raw: &[String], fallback: &[String]) -> Result<Vec<Format>, Failure> {
    let chosen = if raw.is_empty() { fallback } else { raw };
    if chosen.is_empty() {
        return Ok(vec![Format::Markdown]);
    }
    let mut set: Vec<Format> = chosen.iter().map(|f| parse(f)).collect::<Result<_, _>>()?;
    set.sort();
    set.dedup();
    Ok(set)
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "records".into())
}

pub(crate) fn ingest(ctx: &Context, args: IngestArgs) -> CmdResult {
    let data = &ctx.config.data;
    let stereoset = args.stereoset.or_else(|| data.stereoset.clone());
    let crowspairs = args.crowspairs.or_else(|| data.crowspairs.clone());
    if stereoset.is_none() && crowspairs.is_none() {
        return Err(Failure::Invalid(anyhow!(
            "nothing to ingest: pass --stereoset and/or --crowspairs"
        )));
    }
    let portion = parse_opt::<Portion, _>(args.portion.as_deref())?
        .or(data.portion)
        .unwrap_or_default();
    let names = if args.categories.is_empty() {
        &data.categories
    } else {
        &args.categories
    };
    let categories: BTreeSet<BiasCategory> = names
        .iter()
        .map(|c| BiasCategory::new(c.trim()))
        .collect::<Result<_, _>>()
        .invalid()?;

    let mut items = Vec::new();
    let mut rejects = Vec::new();
    if let Some(path) = &stereoset {
        require_exists(path).invalid()?;
        let loaded = load_stereoset(path, portion).invalid()?;
        items.extend(loaded.items);
        rejects.extend(loaded.rejects);
    }
    if let Some(path) = &crowspairs {
        require_exists(path).invalid()?;
        let loaded = load_crowspairs(path).invalid()?;
        items.extend(loaded.items);
        rejects.extend(loaded.rejects);
    }
    let items = filter_items(&items, &categories);
    write_items(&ctx.path("items.jsonl"), &items).runtime()?;
    write_rejects(&ctx.path("rejects.jsonl"), &rejects).runtime()?;
    println!("{} items, {} rejected entries", items.len(), rejects.len());
    Ok(())
}

pub(crate) fn split(ctx: &Context, args: SplitArgs) -> CmdResult {
    let cfg = &ctx.config.split;
    let items_path = args.items.unwrap_or_else(|| ctx.path("items.jsonl"));
    let items = load_items(&items_path)?;
    let seed = args.seed.or(cfg.seed).unwrap_or(0);

    let mut by_source: BTreeMap<&'static str, (Source, Vec<McsbItem>)> = BTreeMap::new();
    for item in items {
        by_source
            .entry(item.source.as_str())
            .or_insert_with(|| (item.source, Vec::new()))
            .1
            .push(item);
    }
    for (name, (source, items)) in by_source {
        let k = args.per_category.unwrap_or(match source {
            Source::Crowspairs => args
                .crowspairs_per_category
                .or(cfg.crowspairs_per_category)
                .unwrap_or(CROWSPAIRS_TRAIN_PER_CATEGORY),
            _ => args
                .stereoset_per_category
                .or(cfg.stereoset_per_category)
                .unwrap_or(STEREOSET_TRAIN_PER_CATEGORY),
        });
        let spec = SplitSpec {
            per_category_train: k,
            seed,
        };
        let (train, test) = split_train_test(&items, &spec).invalid()?;
        let dir = ctx.path("splits").join(name);
        write_items(&dir.join("train.jsonl"), &train).runtime()?;
        write_items(&dir.join("test.jsonl"), &test).runtime()?;
        println!("{name}: {} train, {} test", train.len(), test.len());
    }
    Ok(())
}

fn backend_spec(config: &RunConfig, args: &BackendArgs) -> Result<BackendSpec, Failure> {
    let mut spec = match (&args.backend, &config.backend) {
        (Some(raw), configured) => {
            let kind: BackendKind = parse(raw)?;
            match configured {
                Some(c) if c.kind == kind => c.clone(),
                _ => BackendSpec::mock(kind),
            }
        }
        (None, Some(c)) => c.clone(),
        (None, None) => {
            return Err(Failure::Invalid(anyhow!(
                "no backend: pass --backend or set [backend] in the config"
            )))
        }
    };
    if let Some(v) = &args.model {
        spec.model_name = Some(v.clone());
    }
    if let Some(v) = &args.endpoint {
        spec.endpoint_url = Some(v.clone());
    }
    if let Some(v) = &args.auth_env {
        spec.auth_ref = Some(v.clone());
    }
    if let Some(v) = args.temperature {
        spec.temperature = v;
    }
    if let Some(v) = args.max_in_flight {
        spec.max_in_flight = v;
    }
    if let Some(v) = args.backend_seed {
        spec.seed = v;
    }
    if spec.kind == BackendKind::OpenaiHttp && spec.auth_ref.is_none() {
        spec.auth_ref = Some("OPENAI_API_KEY".into());
    }
    spec.validate().invalid()?;
    Ok(spec)
}

fn default_label(spec: &BackendSpec) -> String {
    match (&spec.kind, &spec.model_name) {
        (BackendKind::OpenaiHttp, Some(model)) => model
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || c == '.' {
                    c
                } else {
                    '-'
                }
            })
            .collect(),
        (kind, _) => kind.as_str().to_string(),
    }
}

fn check_parallelism(p: usize) -> Result<usize, Failure> {
    if p == 0 {
        return Err(Failure::Invalid(anyhow!("parallelism must be at least 1")));
    }
    Ok(p)
}

#[derive(Debug, Default, Serialize, serde::Deserialize)]
struct ManifestFile {
    runs: BTreeMap<String, RunManifest>,
}

pub(crate) fn evaluate(ctx: &Context, args: EvaluateArgs) -> CmdResult {
    let cfg = &ctx.config.evaluate;
    let spec = backend_spec(&ctx.config, &args.backend)?;
    let mode: PromptMode = parse_opt(args.mode.as_deref())?
        .or(cfg.mode)
        .unwrap_or(PromptMode::Implicit);
    let parallelism = check_parallelism(args.parallelism.or(cfg.parallelism).unwrap_or(4))?;
    let items_path = args
        .items
        .or_else(|| cfg.items.clone())
        .unwrap_or_else(|| ctx.path("items.jsonl"));
    let items = load_items(&items_path)?;
    let config = EvalConfig {
        seed: args.seed.or(cfg.seed).unwrap_or(0),
        parallelism,
        transcript: TranscriptOptions {
            include_blank_context: args.include_blank_context
                || cfg.include_blank_context.unwrap_or(false),
        },
        ..EvalConfig::default()
    };
    let cache = if args.no_cache {
        None
    } else {
        let dir = args
            .cache_dir
            .or_else(|| cfg.cache_dir.clone())
            .unwrap_or_else(|| ctx.path("cache"));
        Some(DiskCache::open(dir).runtime()?)
    };

    let gateway = Gateway::new(spec.clone()).invalid()?;
    gateway.preflight().invalid()?;
    let records = run_evaluation(&items, mode, &gateway, &config, cache.as_ref()).runtime()?;

    let label = args
        .label
        .or_else(|| cfg.label.clone())
        .unwrap_or_else(|| default_label(&spec));
    let run_name = format!("{label}_{mode}");
    write_records(
        &ctx.path("records").join(format!("{run_name}.jsonl")),
        &records,
    )
    .runtime()?;

    let manifest_path = ctx.path("manifest.json");
    let mut manifest: ManifestFile = match std::fs::read(&manifest_path) {
        Ok(bytes) => serde_json::from_slice(&bytes)
            .with_context(|| format!("reading {}", manifest_path.display()))
            .runtime()?,
        Err(_) => ManifestFile::default(),
    };
    manifest.runs.insert(
        run_name.clone(),
        RunManifest {
            backend: spec,
            mode,
            seed: config.seed,
            dataset_digest: dataset_digest(&items),
            item_count: items.len(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        },
    );
    write_json(&manifest_path, &manifest)?;

    let stats = aggregate_with(&records, &AggregateOptions::default()).runtime()?;
    println!("{run_name}: {} records", records.len());
    print!("{}", render_table(&stats, Format::Markdown).runtime()?);
    Ok(())
}

fn records_files(ctx: &Context, given: Vec<PathBuf>) -> Result<Vec<PathBuf>, Failure> {
    if !given.is_empty() {
        for p in &given {
            require_exists(p).invalid()?;
        }
        return Ok(given);
    }
    let dir = ctx.path("records");
    let entries = std::fs::read_dir(&dir)
        .with_context(|| format!("no records given and {} is unreadable", dir.display()))
        .invalid()?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Failure::Invalid(anyhow!(
            "no records under {}",
            dir.display()
        )));
    }
    Ok(files)
}

fn load_records(path: &Path) -> Result<Vec<EvalRecord>, Failure> {
    read_records(path).invalid()
}

pub(crate) fn report(ctx: &Context, args: ReportArgs) -> CmdResult {
    let cfg = &ctx.config.report;
    let formats = formats(&args.formats, &cfg.formats)?;
    let options = AggregateOptions {
        denominator: if args.parseable_only || cfg.parseable_only.unwrap_or(false) {
            Denominator::ParseableOnly
        } else {
            Denominator::All
        },
        ..AggregateOptions::default()
    };
    let dir = ctx.path("reports");

    if let (Some(base), Some(var)) = (&args.baseline, &args.variant) {
        require_exists(base).invalid()?;
        require_exists(var).invalid()?;
        let key: Outcome = parse(&args.key)?;
        let b = aggregate_with(&load_records(base)?, &options).runtime()?;
        let v = aggregate_with(&load_records(var)?, &options).runtime()?;
        let delta = compare(&b, &v, key).invalid()?;
        let name = format!("delta_{}_vs_{}", file_stem(base), file_stem(var));
        for format in &formats {
            let text = render_table(&delta, *format).runtime()?;
            write_text(&dir.join(format!("{name}.{}", format.extension())), &text)?;
            if *format == Format::Markdown {
                print!("{text}");
            }
        }
        return Ok(());
    }

    let plot = args.plot || cfg.plot.unwrap_or(false);
    for path in records_files(ctx, args.records)? {
        let stats = aggregate_with(&load_records(&path)?, &options).runtime()?;
        let stem = file_stem(&path);
        for format in &formats {
            let text = render_table(&stats, *format).runtime()?;
            write_text(&dir.join(format!("{stem}.{}", format.extension())), &text)?;
            if *format == Format::Markdown {
                println!("## {stem}\n");
                print!("{text}");
            }
        }
        if plot {
            let svg = render_plot(&stats).runtime()?;
            write_text(&dir.join(format!("{stem}.svg")), &svg)?;
        }
    }
    Ok(())
}

fn write_lexicon(dir: &Path, name: &str, report: &LexiconReport) -> CmdResult {
    write_json(&dir.join(format!("{name}.json")), report)?;
    write_text(&dir.join(format!("{name}.md")), &report.to_markdown())
}

pub(crate) fn bow(ctx: &Context, args: BowArgs) -> CmdResult {
    let cfg = &ctx.config.lexicon;
    let k = args.k.or(cfg.k).unwrap_or(DEFAULT_K);
    let alpha = args.alpha.or(cfg.alpha).unwrap_or(DEFAULT_ALPHA);
    let rule: SelectionRule = parse_opt(args.rule.as_deref())?
        .or(cfg.rule)
        .unwrap_or_default();
    let items = load_items(&args.items.unwrap_or_else(|| ctx.path("items.jsonl")))?;
    let files = records_files(ctx, args.records)?;
    let dir = ctx.path("lexicon");

    let mut pooled = Vec::new();
    for path in &files {
        let records = load_records(path)?;
        let report = build_lexicon_report(&records, &items, rule, k, alpha).invalid()?;
        write_lexicon(&dir, &file_stem(path), &report)?;
        pooled.extend(records);
    }
    let report = build_lexicon_report(&pooled, &items, rule, k, alpha).invalid()?;
    write_lexicon(&dir, "pooled", &report)?;
    print!("{}", report.to_markdown());
    Ok(())
}

pub(crate) fn augment(ctx: &Context, args: AugmentArgs) -> CmdResult {
    let cfg = &ctx.config.augment;
    let spec = backend_spec(&ctx.config, &args.backend)?;
    let style: ParaphraseStyle = parse_opt(args.style.as_deref())?
        .or(cfg.style)
        .unwrap_or(ParaphraseStyle::T5Prefix);
    let defaults = LengthBounds::default();
    let bounds = LengthBounds {
        min_ratio: cfg.min_ratio.unwrap_or(defaults.min_ratio),
        max_ratio: cfg.max_ratio.unwrap_or(defaults.max_ratio),
    };
    if !(bounds.min_ratio > 0.0 && bounds.min_ratio <= bounds.max_ratio) {
        return Err(Failure::Invalid(anyhow!(
            "length ratio bounds are inconsistent"
        )));
    }
    if args.tag.is_empty() || args.tag.contains(['/', '\\']) {
        return Err(Failure::Invalid(anyhow!("--tag must be a plain name")));
    }
    let parallelism = check_parallelism(args.parallelism.unwrap_or(spec.max_in_flight))?;
    let items = load_items(&args.items)?;
    let gateway = Gateway::new(spec).invalid()?;
    gateway.preflight().invalid()?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .runtime()?;
    let augs: Vec<AugmentedItem> = pool.install(|| {
        items
            .par_iter()
            .map(|item| paraphrase_item(item, &gateway, style, &bounds))
            .collect()
    });
    let augmented = apply_augmentation(&items, &augs).runtime()?;
    let dir = ctx.path("splits").join(&args.tag);
    crate::corpus::write_jsonl_file(&dir.join("paraphrases.jsonl"), &augs).runtime()?;
    write_items(&dir.join("train.jsonl"), &augmented).runtime()?;
    let valid: usize = augs.iter().map(AugmentedItem::valid_slots).sum();
    let replaced = augmented.iter().filter(|i| i.id.ends_with(":aug")).count();
    println!(
        "{valid} valid paraphrases, {replaced} of {} items changed",
        items.len()
    );
    Ok(())
}

pub(crate) fn export_finetune(ctx: &Context, args: ExportArgs) -> CmdResult {
    let cfg = &ctx.config.export;
    let mode: PromptMode = parse_opt(args.mode.as_deref())?
        .or(cfg.mode)
        .unwrap_or(PromptMode::Implicit);
    let variant: ExportVariant = parse_opt(args.variant.as_deref())?
        .or(cfg.variant)
        .unwrap_or(ExportVariant::Plain);
    let items = load_items(&args.items)?;
    let mut words: Vec<String> = args
        .bow_words
        .iter()
        .map(|w| w.trim().to_string())
        .filter(|w| !w.is_empty())
        .collect();
    if words.is_empty() {
        if let Some(path) = &args.lexicon {
            require_exists(path).invalid()?;
            let bytes = std::fs::read(path).runtime()?;
            let report: LexiconReport = serde_json::from_slice(&bytes)
                .with_context(|| format!("parsing lexicon {}", path.display()))
                .invalid()?;
            words = report.all.toward.into_iter().map(|t| t.token).collect();
        }
    }
    let examples = build_finetune(&items, mode, variant, Some(&words)).invalid()?;
    let name = args
        .name
        .unwrap_or_else(|| format!("{}_{mode}", variant.as_str()));
    let path = ctx.path("finetune").join(format!("{name}.jsonl"));
    write_finetune_jsonl(&path, &examples).runtime()?;
    println!("{} examples written to {}", examples.len(), path.display());
    Ok(())
}

pub(crate) fn finetune_submit(ctx: &Context, args: SubmitArgs) -> CmdResult {
    require_exists(&args.file).invalid()?;
    let auth = args.auth_env.or_else(|| Some("OPENAI_API_KEY".into()));
    let client = FinetuneClient::new(args.endpoint, auth).invalid()?;
    let job_id = client.submit(&args.file, &args.model).runtime()?;
    println!("submitted job {job_id}");
    let mut status = client.poll(&job_id).runtime()?;
    while args.wait && matches!(status, JobStatus::Queued | JobStatus::Running) {
        std::thread::sleep(Duration::from_secs(args.poll_seconds.max(1)));
        status = client.poll(&job_id).runtime()?;
    }
    println!("status: {status:?}");
    write_json(
        &ctx.path("finetune").join("job.json"),
        &serde_json::json!({"job_id": job_id, "status": status}),
    )?;
    if let JobStatus::Failed(reason) = status {
        return Err(Failure::Runtime(anyhow!(
            "fine-tuning job failed: {reason}"
        )));
    }
    Ok(())
}

fn parse_run_spec(raw: &str) -> anyhow::Result<(String, String, String, PathBuf)> {
    let (tags, path) = raw
        .split_once('=')
        .ok_or_else(|| anyhow!("run {raw:?} is not TRAIN:EVAL:VARIANT=RECORDS"))?;
    let parts: Vec<&str> = tags.split(':').collect();
    let [train, eval, variant] = parts.as_slice() else {
        bail!("run {raw:?} needs exactly three ':'-separated tags");
    };
    if parts.iter().any(|p| p.is_empty() || p.contains(',')) {
        bail!("run tags in {raw:?} must be non-empty and comma-free");
    }
    Ok((
        train.to_string(),
        eval.to_string(),
        variant.to_string(),
        PathBuf::from(path),
    ))
}

pub(crate) fn cross_eval(ctx: &Context, args: CrossEvalArgs) -> CmdResult {
    let formats = formats(&args.formats, &ctx.config.report.formats)?;
    let mut runs = Vec::new();
    for raw in &args.runs {
        let (train_corpus, eval_corpus, variant, path) = parse_run_spec(raw).invalid()?;
        require_exists(&path).invalid()?;
        runs.push(CrossRun {
            train_corpus,
            eval_corpus,
            variant,
            records: load_records(&path)?,
        });
    }
    let report = cross_matrix(&runs).invalid()?;
    let dir = ctx.path("reports");
    for format in formats {
        let text = match format {
            Format::Markdown => render_cross_markdown(&report),
            Format::Json => {
                let mut s = serde_json::to_string_pretty(&report).runtime()?;
                s.push('\n');
                s
            }
            Format::Csv => {
                let mut out = String::new();
                for (i, cell) in report.cells.iter().enumerate() {
                    let table = render_table(&cell.stats, Format::Csv).runtime()?;
                    for (j, line) in table.lines().enumerate() {
                        if j == 0 {
                            if i == 0 {
                                out.push_str(&format!("train,eval,variant,{line}\n"));
                            }
                            continue;
                        }
                        out.push_str(&format!(
                            "{},{},{},{line}\n",
                            cell.train_corpus, cell.eval_corpus, cell.variant
                        ));
                    }
                }
                out
            }
        };
        write_text(
            &dir.join(format!("cross_eval.{}", format.extension())),
            &text,
        )?;
    }
    print!("{}", render_cross_markdown(&report));
    Ok(())
}
