use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::time::Duration;

use serde_json::json;
use superfilter::analysis::{compare_scores, summarize_distribution, Metric};
use superfilter::diversity::{embed, superfilter_d, Embedder, EmbeddingSet, DEFAULT_HASHED_DIM};
use superfilter::remote::RemoteClient;
use superfilter::report::{quality_report, quantile_csv, Lexicons, ReportOptions};
use superfilter::scoring::{read_scores, write_scores, ScoringOptions, TableBackend, UniformBackend};
use superfilter::{
    load_dataset, materialize_subset, score_dataset, select_top_ifd, Dataset, Error, LogProbBackend, PromptTemplate,
    Result, ScoredSample, SelectionConfig,
};

use crate::config::{CompareConfig, DiversifyConfig, ReportConfig, ScoreConfig, SelectConfig};
use crate::manifest::{manifest_path, Recorder};

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::Io {
            path: parent.to_path_buf(),
            source: e,
        })?;
    }
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn timeout(secs: f64) -> Duration {
    Duration::from_secs_f64(secs)
}

fn backend_from_spec(config: &ScoreConfig) -> Result<Box<dyn LogProbBackend>> {
    let (kind, param) = config
        .backend
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("backend {:?} is not kind:parameter", config.backend)))?;
    let backend: Box<dyn LogProbBackend> = match kind {
        "uniform" => {
            let vocab: u64 = param
                .parse()
                .map_err(|_| Error::Config(format!("uniform vocabulary size {param:?} is not an integer")))?;
            let mut b = UniformBackend::new(vocab)?.with_max_length(config.max_length);
            if let Some(name) = &config.scorer_name {
                b = b.with_name(name);
            }
            Box::new(b)
        }
        "table" => {
            let mut b = TableBackend::from_file(Path::new(param))
                .map_err(|e| match e {
                    Error::Io { path, source } => Error::Config(format!("{}: {source}", path.display())),
                    other => other,
                })?
                .with_max_length(config.max_length);
            if let Some(name) = &config.scorer_name {
                b = b.with_name(name);
            }
            Box::new(b)
        }
        "remote" => {
            let mut b = RemoteClient::new(param, timeout(config.timeout_secs))
                .with_env_token()
                .with_max_length(config.max_length);
            if let Some(name) = &config.scorer_name {
                b = b.with_name(name);
            }
            Box::new(b)
        }
        other => {
            return Err(Error::Config(format!(
                "unknown backend kind {other:?} (expected uniform, table or remote)"
            )))
        }
    };
    Ok(backend)
}

fn template_from_config(config: &ScoreConfig) -> Result<PromptTemplate> {
    if let Some(path) = &config.template_file {
        return PromptTemplate::from_file(path);
    }
    PromptTemplate::builtin(&config.template).ok_or_else(|| {
        Error::Config(format!(
            "unknown template {:?} (built-in: {})",
            config.template,
            PromptTemplate::BUILTIN_NAMES.join(", ")
        ))
    })
}

pub fn score(config: ScoreConfig) -> Result<()> {
    let mut rec = Recorder::start("score", &config);
    let template = template_from_config(&config)?;
    let backend = backend_from_spec(&config)?;
    let dataset = load_dataset(&config.dataset, config.format)?;
    rec.input(&config.dataset);
    if let Some(path) = &config.template_file {
        rec.input(path);
    }

    let options = ScoringOptions {
        workers: config.workers,
        max_failure_fraction: config.max_failure_fraction,
    };
    let run = score_dataset(&dataset, &template, backend.as_ref(), options)?;
    write_scores(&config.output, Some(&run.header), &run.scores)?;
    rec.output(&config.output);

    let secs = run.elapsed.as_secs_f64();
    println!(
        "scored {} of {} samples with {} in {:.3}s ({:.1} samples/s, {} failed)",
        run.scores.len(),
        dataset.n(),
        backend.name(),
        secs,
        run.samples_per_second(),
        run.failures.len()
    );
    rec.finish(
        &manifest_path(&config.output),
        json!({
            "n_samples": dataset.n(),
            "n_scored": run.scores.len(),
            "n_failed": run.failures.len(),
            "scoring_seconds": secs,
            "samples_per_second": run.samples_per_second(),
        }),
    )
}

/// Scores in dataset order; ids unknown to the dataset are an error.
fn align_scores(dataset: &Dataset, scores: Vec<ScoredSample>) -> Result<Vec<ScoredSample>> {
    let mut by_id: HashMap<String, ScoredSample> = scores.into_iter().map(|s| (s.id.clone(), s)).collect();
    let aligned: Vec<ScoredSample> = dataset.samples.iter().filter_map(|s| by_id.remove(&s.id)).collect();
    if let Some(stray) = by_id.keys().min() {
        return Err(Error::Consistency(format!(
            "{} scored ids are not in the dataset (e.g. {stray:?})",
            by_id.len()
        )));
    }
    if aligned.len() < dataset.n() {
        log::warn!("{} of {} samples have no score and are skipped", dataset.n() - aligned.len(), dataset.n());
    }
    Ok(aligned)
}

pub fn select(config: SelectConfig) -> Result<()> {
    let mut rec = Recorder::start("select", &config);
    let selection = SelectionConfig::new(config.ratio).with_cap(config.ifd_cap);
    selection.validate()?;
    let dataset = load_dataset(&config.dataset, config.format)?;
    let scores = align_scores(&dataset, read_scores(&config.scores)?.scores)?;
    rec.input(&config.dataset);
    rec.input(&config.scores);

    let result = select_top_ifd(&scores, &selection)?;
    if result.underfilled {
        log::warn!(
            "only {} samples are below the IFD cap; budget was {}",
            result.selected_ids.len(),
            result.budget
        );
    }
    let subset = materialize_subset(&dataset, &result)?;
    subset.write(&config.output, config.output_format)?;
    rec.output(&config.output);
    log::info!("selected {} of {} samples -> {}", subset.n(), scores.len(), config.output.display());
    rec.finish(
        &manifest_path(&config.output),
        json!({
            "n_scored": scores.len(),
            "budget": result.budget,
            "n_selected": result.selected_ids.len(),
            "n_excluded_by_cap": result.n_excluded_by_cap,
            "underfilled": result.underfilled,
        }),
    )
}

pub fn compare(config: CompareConfig) -> Result<()> {
    let mut rec = Recorder::start("compare", &config);
    let a = read_scores(&config.scores_a)?.scores;
    let b = read_scores(&config.scores_b)?.scores;
    rec.input(&config.scores_a);
    rec.input(&config.scores_b);

    let report = compare_scores(&a, &b, &config.budgets, config.ifd_cap)?;
    for note in &report.notes {
        log::warn!("{note}");
    }
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');

    if let Some(path) = &config.quantiles_csv {
        let summaries = [
            summarize_distribution(&a, Metric::PplCond)?,
            summarize_distribution(&a, Metric::Ifd)?,
            summarize_distribution(&b, Metric::PplCond)?,
            summarize_distribution(&b, Metric::Ifd)?,
        ];
        let refs: Vec<_> = summaries.iter().collect();
        write_text(path, &quantile_csv(&refs))?;
        rec.output(path);
    }

    match &config.output {
        Some(path) => {
            write_text(path, &text)?;
            rec.output(path);
            rec.finish(
                &manifest_path(path),
                json!({
                    "n_common": report.n_common,
                    "spearman_ppl": report.spearman_ppl,
                    "spearman_ifd": report.spearman_ifd,
                }),
            )
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn parse_embedder(spec: &str) -> Result<EmbedderSpec> {
    match spec.split_once(':') {
        None if spec == "hashed-bow" => Ok(EmbedderSpec::HashedBow(DEFAULT_HASHED_DIM)),
        Some(("hashed-bow", dim)) => dim
            .parse()
            .ok()
            .filter(|d| *d > 0)
            .map(EmbedderSpec::HashedBow)
            .ok_or_else(|| Error::Config(format!("hashed-bow dimension {dim:?} is not a positive integer"))),
        Some(("remote", url)) => Ok(EmbedderSpec::Remote(url.to_owned())),
        _ => Err(Error::Config(format!(
            "unknown embedder {spec:?} (expected hashed-bow[:DIM] or remote:URL)"
        ))),
    }
}

enum EmbedderSpec {
    HashedBow(usize),
    Remote(String),
}

fn cached_embeddings(path: &Path, ids: &[&str], expected_name: Option<&str>) -> Option<EmbeddingSet> {
    if !path.exists() {
        return None;
    }
    match EmbeddingSet::read_cache(path) {
        Ok(set) => {
            let name_ok = expected_name.is_none_or(|n| n == set.embedder());
            let covered = ids.iter().all(|id| set.position(id).is_some());
            if name_ok && covered {
                log::info!("using {} cached embeddings from {}", set.len(), path.display());
                Some(set)
            } else {
                log::info!("embedding cache {} is stale; recomputing", path.display());
                None
            }
        }
        Err(err) => {
            log::warn!("ignoring unreadable embedding cache: {err}");
            None
        }
    }
}

pub fn diversify(config: DiversifyConfig) -> Result<()> {
    let mut rec = Recorder::start("diversify", &config);
    let settings = superfilter::diversity::DiversityConfig {
        pre_ratio: config.pre_ratio,
        final_ratio: config.final_ratio,
        ifd_cap: config.ifd_cap,
    };
    settings.validate()?;
    let spec = parse_embedder(&config.embedder)?;
    let dataset = load_dataset(&config.dataset, config.format)?;
    let scores = align_scores(&dataset, read_scores(&config.scores)?.scores)?;
    rec.input(&config.dataset);
    rec.input(&config.scores);

    let stage1 = select_top_ifd(&scores, &SelectionConfig::new(config.pre_ratio).with_cap(config.ifd_cap))?;
    let pool_ids: Vec<&str> = stage1.selected_ids.iter().map(String::as_str).collect();
    let pool: Vec<_> = pool_ids.iter().filter_map(|id| dataset.get(id).cloned()).collect();

    let client;
    let embedder = match &spec {
        EmbedderSpec::HashedBow(dim) => Embedder::HashedBow { dim: *dim },
        EmbedderSpec::Remote(url) => {
            client = RemoteClient::new(url, timeout(config.timeout_secs)).with_env_token();
            Embedder::Remote(&client)
        }
    };
    let expected_name = match &spec {
        EmbedderSpec::HashedBow(_) => Some(embedder.name()),
        EmbedderSpec::Remote(_) => None,
    };
    let cached = config
        .embeddings_cache
        .as_deref()
        .and_then(|p| cached_embeddings(p, &pool_ids, expected_name.as_deref()));
    let embeddings = match cached {
        Some(set) => {
            rec.input(config.embeddings_cache.as_deref().expect("cache path"));
            set
        }
        None => {
            let set = embed(&pool, &embedder)?;
            if let Some(path) = &config.embeddings_cache {
                set.write_cache(path)?;
            }
            set
        }
    };

    let result = superfilter_d(&dataset, &scores, &embeddings, &settings)?;
    let subset = materialize_subset(&dataset, &result.selection)?;
    subset.write(&config.output, config.output_format)?;
    rec.output(&config.output);
    log::info!(
        "kept {} of {} stage-1 samples (objective {:.4}) -> {}",
        result.k,
        result.stage1_size,
        result.objective,
        config.output.display()
    );
    rec.finish(
        &manifest_path(&config.output),
        json!({
            "n_samples": dataset.n(),
            "stage1_size": result.stage1_size,
            "k": result.k,
            "objective": result.objective,
            "embedder": result.embedder,
            "ground_set": result.ground_set,
            "similarity": result.similarity,
        }),
    )
}

pub fn report(config: ReportConfig) -> Result<()> {
    let mut rec = Recorder::start("report", &config);
    let lexicons = match (&config.verbs, &config.nouns) {
        (Some(v), Some(n)) => {
            rec.input(v);
            rec.input(n);
            Lexicons::from_files(v, n)?
        }
        _ => Lexicons::builtin(),
    };
    let dataset = load_dataset(&config.dataset, config.format)?;
    let scores = align_scores(&dataset, read_scores(&config.scores)?.scores)?;
    rec.input(&config.dataset);
    rec.input(&config.scores);

    let options = ReportOptions {
        slice_fraction: config.fraction,
        top_k_rows: config.top_k,
        ifd_cap: config.ifd_cap,
    };
    let report = quality_report(&scores, &dataset, &lexicons, &options)?;
    for warning in &report.warnings {
        log::warn!("{warning}");
    }
    let ppl_uncond = summarize_distribution(&scores, Metric::PplUncond)?;

    let dir = &config.output_dir;
    let files = [
        ("report.json", report.to_json()),
        ("report.txt", report.render_text()),
        ("quantiles.csv", quantile_csv(&[&report.ppl_cond, &ppl_uncond, &report.ifd])),
        ("verb_noun_top.csv", report.verb_noun_top.to_csv()),
        ("verb_noun_bottom.csv", report.verb_noun_bottom.to_csv()),
    ];
    for (name, text) in &files {
        let path = dir.join(name);
        write_text(&path, text)?;
        rec.output(&path);
    }
    log::info!("wrote report for {} samples to {}", scores.len(), dir.display());
    rec.finish(
        &dir.join("manifest.json"),
        json!({
            "n_scored": report.n_scored,
            "degenerate": report.degenerate,
            "warnings": report.warnings,
        }),
    )
}
