//! Subcommand implementations. Every stage reads JSON Lines in, writes JSON
//! Lines or JSON out, and is deterministic given identical inputs and seeds.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use indexmap::IndexMap;

use instructforge::carbon;
use instructforge::corpus::{
    corpus_stats, filter_segments, ingest_document, segment_document, split_corpus_mode,
    strip_headers, DocFormat, Document, Segment, Split,
};
use instructforge::dataset::{
    self, assign_record_splits, assign_system_prompts, dataset_stats, filter_by_language,
    to_chat_format, StopwordDetector,
};
use instructforge::derive_seed;
use instructforge::evalharness::{
    self, evaluate_all, rank_table, verify_printed_ranks, EvalItem, MosJudge, ScoreMatrix,
};
use instructforge::grammar::{builtin, BuiltinGrammar};
use instructforge::jsonl::{read_jsonl, write_jsonl};
use instructforge::llmclient::{CacheMode, ChatClient};
use instructforge::patterns::{
    gen_acronym_instructions, gen_inverted_summary, gen_long_combo, gen_translation_instructions,
    AcronymDict, LongComboSource, TranslationDict, TranslationDirection,
};
use instructforge::synth::{
    build_request, curate, is_journalistic, parse_output, to_record, InstructionRecord,
    RecordKind, TaskKind,
};
use instructforge::trainprep::{
    build_masked_batch, emit_training_config_variant, find_response_marker_tokens, pack_documents,
    render_chat, write_packed_binary, ChatTemplate, ConfigVariant, TrainStage,
    DEEPSPEED_OFFLOAD_CONFIG,
};

use crate::config::{load_header_patterns, ProjectConfig};

pub struct Ctx {
    pub config: ProjectConfig,
    pub jobs: usize,
    pub dry_run: bool,
    pub quiet_json: bool,
}

impl Ctx {
    fn note(&self, message: &str) {
        if self.quiet_json {
            eprintln!("{}", serde_json::json!({"note": message}));
        } else {
            eprintln!("{message}");
        }
    }
}

fn collect_corpus_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("cannot read {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    entries.sort();
    for path in entries {
        if path.is_dir() {
            collect_corpus_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

fn detect_format(path: &Path) -> Option<DocFormat> {
    let name = path.file_name()?.to_str()?;
    if name.ends_with(".pages.txt") {
        Some(DocFormat::PagedText)
    } else if name.ends_with(".md") {
        Some(DocFormat::Markdown)
    } else if name.ends_with(".txt") {
        Some(DocFormat::PlainText)
    } else {
        None
    }
}

#[derive(serde::Deserialize, Default)]
struct SidecarMeta {
    collection: Option<String>,
    title: Option<String>,
    date: Option<String>,
    url: Option<String>,
}

/// `ingest`: read `.md` / `.txt` / `.pages.txt` files (with optional
/// `<file>.json` sidecar metadata) into documents.jsonl.
pub fn cmd_ingest(ctx: &Ctx) -> Result<()> {
    ctx.config.check_paths(true)?;
    let mut files = Vec::new();
    collect_corpus_files(&ctx.config.paths.corpus_dir, &mut files)?;

    let mut documents = Vec::new();
    for path in files {
        let Some(format) = detect_format(&path) else {
            continue;
        };
        let sidecar_path = PathBuf::from(format!("{}.json", path.display()));
        let sidecar: SidecarMeta = if sidecar_path.is_file() {
            serde_json::from_str(&std::fs::read_to_string(&sidecar_path)?)
                .with_context(|| format!("bad sidecar {}", sidecar_path.display()))?
        } else {
            SidecarMeta::default()
        };
        let collection = sidecar.collection.clone().unwrap_or_else(|| {
            path.parent()
                .and_then(|p| p.strip_prefix(&ctx.config.paths.corpus_dir).ok())
                .and_then(|p| p.components().next())
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .filter(|s| !s.is_empty())
                .unwrap_or_else(|| "default".to_string())
        });
        let mut metadata = BTreeMap::new();
        if let Some(title) = sidecar.title {
            metadata.insert("title".to_string(), title);
        }
        if let Some(date) = sidecar.date {
            metadata.insert("date".to_string(), date);
        }
        if let Some(url) = sidecar.url {
            metadata.insert("url".to_string(), url);
        }
        let raw = std::fs::read(&path)?;
        let doc = ingest_document(&raw, format, &collection, metadata)
            .with_context(|| format!("cannot ingest {}", path.display()))?;
        documents.push(doc);
    }
    ctx.note(&format!("ingested {} documents", documents.len()));
    if ctx.dry_run {
        return Ok(());
    }
    write_jsonl(&ctx.config.out("documents.jsonl"), &documents)?;
    Ok(())
}

/// `segment`: strip headers, cut documents under the policy, filter short
/// segments.
pub fn cmd_segment(ctx: &Ctx) -> Result<()> {
    let documents: Vec<Document> = read_jsonl(&ctx.config.out("documents.jsonl"))
        .context("documents.jsonl missing; run `ingest` first")?;
    let patterns = match &ctx.config.paths.header_patterns {
        Some(path) => load_header_patterns(path)?,
        None => Vec::new(),
    };
    let tok = ctx.config.build_tokenizer()?;

    let mut all_segments = Vec::new();
    for doc in &documents {
        let mut doc = doc.clone();
        if !patterns.is_empty() {
            for part in doc.content.iter_mut() {
                *part = strip_headers(part, &patterns)?;
            }
        }
        all_segments.extend(segment_document(&doc, &ctx.config.segmentation, tok.as_ref())?);
    }
    let produced = all_segments.len();
    let (kept, discarded) = filter_segments(all_segments, ctx.config.segmentation.min_chars);
    ctx.note(&format!(
        "segmented {} documents into {produced} segments ({} kept, {} discarded)",
        documents.len(),
        kept.len(),
        discarded.len()
    ));
    if ctx.dry_run {
        return Ok(());
    }
    write_jsonl(&ctx.config.out("segments.jsonl"), &kept)?;
    write_jsonl(&ctx.config.out("discarded.jsonl"), &discarded)?;
    Ok(())
}

/// `split`: assign train/validation/test partitions per collection.
pub fn cmd_split(ctx: &Ctx) -> Result<()> {
    let segments: Vec<Segment> = read_jsonl(&ctx.config.out("segments.jsonl"))
        .context("segments.jsonl missing; run `segment` first")?;
    let seed = derive_seed(ctx.config.seed, "corpus-split");
    let split = split_corpus_mode(
        segments,
        ctx.config.split.ratios,
        seed,
        ctx.config.split.mode,
    )?;
    let count = |s: Split| split.iter().filter(|x| x.split == s).count();
    ctx.note(&format!(
        "split {} segments: {} train, {} validation, {} test",
        split.len(),
        count(Split::Train),
        count(Split::Validation),
        count(Split::Test)
    ));
    if ctx.dry_run {
        return Ok(());
    }
    write_jsonl(&ctx.config.out("segments_split.jsonl"), &split)?;
    Ok(())
}

fn load_split_segments(ctx: &Ctx) -> Result<Vec<Segment>> {
    read_jsonl(&ctx.config.out("segments_split.jsonl"))
        .context("segments_split.jsonl missing; run `split` first")
}

fn make_client(ctx: &Ctx, mode: CacheMode) -> ChatClient {
    let mut client = ChatClient::new(
        ctx.config.provider.endpoint.clone(),
        &ctx.config.paths.cache_dir,
        mode,
    );
    client.api_key = ctx.config.provider.api_key.clone();
    client.max_retries = ctx.config.provider.max_retries;
    client
}

/// `gen`: build one request per (task, segment), run them through the cached
/// client, validate the structured outputs and convert to records. Segments
/// whose request fails after the retry budget are skipped and logged.
pub fn cmd_gen(ctx: &Ctx, task_filter: Option<TaskKind>, mode: CacheMode) -> Result<()> {
    let segments = load_split_segments(ctx)?;
    let tasks: Vec<TaskKind> = match task_filter {
        Some(task) => vec![task],
        None => TaskKind::ALL.to_vec(),
    };
    let client = make_client(ctx, mode);

    for task in tasks {
        let applicable: Vec<&Segment> = segments
            .iter()
            .filter(|s| task != TaskKind::FactualSummaryOf || is_journalistic(&s.collection))
            .collect();
        if ctx.dry_run {
            ctx.note(&format!(
                "task {}: would send {} requests",
                task.name(),
                applicable.len()
            ));
            continue;
        }
        let requests: Vec<_> = applicable
            .iter()
            .map(|seg| {
                let seed = derive_seed(ctx.config.seed, &format!("gen:{}:{}", task.name(), seg.id));
                build_request(task, seg, seed, &ctx.config.generation)
            })
            .collect::<Result<_, _>>()?;
        let results = client.complete_many(&requests, ctx.jobs);

        let mut records = Vec::new();
        let mut skipped = 0usize;
        for (seg, result) in applicable.iter().zip(results) {
            match result {
                Ok((payload, _usage)) => match parse_output(task, &payload) {
                    Ok(output) => {
                        let mut record = to_record(task, &output, seg);
                        record.provenance.model = Some(ctx.config.generation.model.clone());
                        records.push(record);
                    }
                    Err(err) => {
                        skipped += 1;
                        ctx.note(&format!("skip {}/{}: {err}", task.name(), seg.id));
                    }
                },
                Err(err) => {
                    skipped += 1;
                    ctx.note(&format!("skip {}/{}: {err}", task.name(), seg.id));
                }
            }
        }
        ctx.note(&format!(
            "task {}: {} records, {skipped} skipped, {} completion tokens so far",
            task.name(),
            records.len(),
            client.ledger.total_completion_tokens()
        ));
        write_jsonl(
            &ctx.config.out(&format!("records/gen_{}.jsonl", task.name())),
            &records,
        )?;
    }
    // persist the run ledger for the carbon report
    write_jsonl(&ctx.config.out("records/usage.jsonl"), &client.ledger.snapshot())?;
    Ok(())
}

/// `curate`: apply the context-reference filter to the generated records.
pub fn cmd_curate(ctx: &Ctx) -> Result<()> {
    let records_dir = ctx.config.out("records");
    let mut files: Vec<PathBuf> = std::fs::read_dir(&records_dir)
        .context("records directory missing; run `gen` first")?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("gen_") && n.ends_with(".jsonl"))
        })
        .collect();
    files.sort();
    let mut records = Vec::new();
    for file in &files {
        records.extend(read_jsonl::<InstructionRecord>(file)?);
    }
    let total = records.len();
    let outcome = curate(records);
    ctx.note(&format!(
        "curated {total} records: {} kept, {} rejected",
        outcome.kept.len(),
        outcome.rejected.len()
    ));
    if ctx.dry_run {
        return Ok(());
    }
    write_jsonl(&ctx.config.out("records/curated.jsonl"), &outcome.kept)?;
    write_jsonl(&ctx.config.out("records/rejected.jsonl"), &outcome.rejected)?;
    Ok(())
}

fn load_acronym_dict(ctx: &Ctx) -> Result<AcronymDict> {
    let path = ctx
        .config
        .paths
        .acronym_dict
        .as_ref()
        .ok_or_else(|| anyhow!("config has no paths.acronym_dict"))?;
    AcronymDict::from_file(path).with_context(|| format!("cannot load {}", path.display()))
}

fn load_translation_dict(ctx: &Ctx) -> Result<TranslationDict> {
    let path = ctx
        .config
        .paths
        .translation_dict
        .as_ref()
        .ok_or_else(|| anyhow!("config has no paths.translation_dict"))?;
    TranslationDict::from_file(path).with_context(|| format!("cannot load {}", path.display()))
}

/// `patron`: template instructions from the dictionaries, split-assigned at
/// record level.
pub fn cmd_patron(ctx: &Ctx) -> Result<()> {
    let acronyms = load_acronym_dict(ctx)?;
    let translations = load_translation_dict(ctx)?;
    let mut records = gen_acronym_instructions(&acronyms, derive_seed(ctx.config.seed, "patron-acronyms"))?;
    records.extend(gen_translation_instructions(
        &translations,
        TranslationDirection::FrToEn,
        derive_seed(ctx.config.seed, "patron-fr-en"),
    )?);
    records.extend(gen_translation_instructions(
        &translations,
        TranslationDirection::EnToFr,
        derive_seed(ctx.config.seed, "patron-en-fr"),
    )?);
    let records = assign_record_splits(
        records,
        ctx.config.split.ratios,
        derive_seed(ctx.config.seed, "patron-splits"),
    )?;
    ctx.note(&format!("built {} patron instructions", records.len()));
    if ctx.dry_run {
        return Ok(());
    }
    write_jsonl(&ctx.config.out("records/patron.jsonl"), &records)?;
    Ok(())
}

/// `longgen`: acronym/translation combos plus inverted summaries.
pub fn cmd_longgen(ctx: &Ctx) -> Result<()> {
    let acronyms = load_acronym_dict(ctx)?;
    let translations = load_translation_dict(ctx)?;
    let long = &ctx.config.long;

    let mut records = Vec::new();
    for i in 0..long.n_acronym_combos {
        records.push(gen_long_combo(
            &LongComboSource::Acronyms(&acronyms),
            derive_seed(ctx.config.seed, &format!("long-acronyms-{i}")),
            long.combo_range,
        )?);
    }
    for i in 0..long.n_translation_combos {
        records.push(gen_long_combo(
            &LongComboSource::Translations(&translations),
            derive_seed(ctx.config.seed, &format!("long-translations-{i}")),
            long.combo_range,
        )?);
    }
    let mut records = assign_record_splits(
        records,
        ctx.config.split.ratios,
        derive_seed(ctx.config.seed, "long-splits"),
    )?;

    // inverted summaries inherit the split of their source segment
    let curated: Vec<InstructionRecord> = read_jsonl(&ctx.config.out("records/curated.jsonl"))
        .context("records/curated.jsonl missing; run `curate` first")?;
    let segments = load_split_segments(ctx)?;
    let by_id: BTreeMap<&str, &Segment> = segments.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut inverted = 0usize;
    for record in curated.iter().filter(|r| r.task == RecordKind::Summary) {
        let Some(seg_id) = record.source_segment_id.as_deref() else {
            continue;
        };
        let Some(segment) = by_id.get(seg_id) else {
            continue;
        };
        records.push(gen_inverted_summary(record, segment)?);
        inverted += 1;
    }
    ctx.note(&format!(
        "built {} long instructions ({} combos, {inverted} inverted summaries)",
        records.len(),
        long.n_acronym_combos + long.n_translation_combos
    ));
    if ctx.dry_run {
        return Ok(());
    }
    write_jsonl(&ctx.config.out("records/long.jsonl"), &records)?;
    Ok(())
}

/// `mix`: assemble one run configuration from its sources, assign system
/// prompts, and export the chat-format dataset.
pub fn cmd_mix(ctx: &Ctx, run: &str) -> Result<()> {
    let spec = ctx
        .config
        .mixes
        .iter()
        .find(|m| m.run == run)
        .ok_or_else(|| anyhow!("no mix named {run:?} in config"))?;

    let mut sources: IndexMap<String, Vec<InstructionRecord>> = IndexMap::new();
    for name in spec.included() {
        let source_cfg = ctx
            .config
            .sources
            .get(name)
            .ok_or_else(|| anyhow!("mix {run:?} includes unknown source {name:?}"))?;
        let path = ctx.config.source_path(source_cfg);
        let mut records: Vec<InstructionRecord> =
            read_jsonl(&path).with_context(|| format!("cannot read source {}", path.display()))?;
        if source_cfg.train_only {
            for r in records.iter_mut() {
                r.split = Split::Train;
            }
        }
        if let Some(lang) = &source_cfg.filter_language {
            let before = records.len();
            records = filter_by_language(records, &StopwordDetector, lang);
            ctx.note(&format!(
                "source {name}: language filter kept {}/{before}",
                records.len()
            ));
        }
        sources.insert(name.to_string(), records);
    }

    let mixed = dataset::mix(spec, &sources)?;
    ctx.note(&format!("mix {run}: {} training records", mixed.len()));
    if ctx.dry_run {
        return Ok(());
    }
    let with_prompts = assign_system_prompts(
        mixed,
        &builtin(BuiltinGrammar::SystemPrompt),
        derive_seed(ctx.config.seed, &format!("system-prompts:{run}")),
    )?;
    let chat: Vec<_> = with_prompts.iter().map(to_chat_format).collect();
    write_jsonl(&ctx.config.out(&format!("mixes/{run}.jsonl")), &chat)?;
    Ok(())
}

/// `stats`: corpus statistics plus per-source instruction statistics.
pub fn cmd_stats(ctx: &Ctx) -> Result<()> {
    let tok = ctx.config.build_tokenizer()?;
    let mut report = serde_json::Map::new();

    let documents: Result<Vec<Document>> =
        read_jsonl(&ctx.config.out("documents.jsonl")).map_err(Into::into);
    if let Ok(documents) = documents {
        let kept: Vec<Segment> = read_jsonl(&ctx.config.out("segments.jsonl")).unwrap_or_default();
        let discarded: Vec<Segment> =
            read_jsonl(&ctx.config.out("discarded.jsonl")).unwrap_or_default();
        let stats = corpus_stats(&documents, &kept, &discarded, tok.as_ref())?;
        report.insert("corpus".to_string(), serde_json::to_value(&stats)?);
    }

    let mut per_source = serde_json::Map::new();
    for (name, source_cfg) in &ctx.config.sources {
        let path = ctx.config.source_path(source_cfg);
        if !path.is_file() {
            continue;
        }
        let records: Vec<InstructionRecord> = read_jsonl(&path)?;
        per_source.insert(
            name.clone(),
            serde_json::to_value(dataset_stats(&records, tok.as_ref()))?,
        );
    }
    report.insert("instructions".to_string(), serde_json::Value::Object(per_source));

    let value = serde_json::Value::Object(report);
    ctx.note("computed corpus and instruction statistics");
    if ctx.dry_run {
        println!("{}", serde_json::to_string_pretty(&value)?);
        return Ok(());
    }
    let path = ctx.config.out("stats/stats.json");
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(&path, serde_json::to_string_pretty(&value)?)?;
    Ok(())
}

/// `pack`: CPT packing of segment texts with per-document EOS.
pub fn cmd_pack(ctx: &Ctx, split: Option<Split>, window: usize, binary: bool) -> Result<()> {
    let segments = load_split_segments(ctx)?;
    let tok = ctx.config.build_tokenizer()?;
    let selected: Vec<Segment> = segments
        .into_iter()
        .filter(|s| split.is_none_or(|want| s.split == want))
        .collect();
    let packed = pack_documents(&selected, tok.as_ref(), window)?;
    let total: usize = packed.iter().map(|p| p.token_ids.len()).sum();
    let tag = match split {
        Some(Split::Train) => "train",
        Some(Split::Validation) => "validation",
        Some(Split::Test) => "test",
        Some(Split::Unassigned) => "unassigned",
        None => "all",
    };
    ctx.note(&format!(
        "packed {} segments into {} sequences ({total} tokens, window {window})",
        selected.len(),
        packed.len()
    ));
    if ctx.dry_run {
        return Ok(());
    }
    write_jsonl(&ctx.config.out(&format!("packed/cpt_{tag}.jsonl")), &packed)?;
    if binary {
        write_packed_binary(&ctx.config.out(&format!("packed/cpt_{tag}.bin")), &packed)?;
    }
    Ok(())
}

fn template_for(ctx: &Ctx, template_path: Option<&Path>, spaced: bool) -> Result<ChatTemplate> {
    if let Some(path) = template_path {
        return ChatTemplate::from_file(path).map_err(Into::into);
    }
    // the whitespace tokenizer needs spaced markers to see them as tokens
    let whitespace = matches!(ctx.config.tokenizer, crate::config::TokenizerSpec::Whitespace);
    Ok(if spaced || whitespace {
        ChatTemplate::spaced()
    } else {
        ChatTemplate::default()
    })
}

#[derive(serde::Serialize)]
struct RenderedRecord {
    id: String,
    text: String,
}

/// `render`: chat-template strings for a records file.
pub fn cmd_render(ctx: &Ctx, input: &Path, template: Option<&Path>, spaced: bool) -> Result<()> {
    let records: Vec<InstructionRecord> = read_jsonl(input)?;
    let tmpl = template_for(ctx, template, spaced)?;
    let rendered: Vec<RenderedRecord> = records
        .iter()
        .map(|r| RenderedRecord {
            id: r.id.clone(),
            text: render_chat(r, &tmpl),
        })
        .collect();
    ctx.note(&format!("rendered {} records", rendered.len()));
    if ctx.dry_run {
        return Ok(());
    }
    write_jsonl(&ctx.config.out("rendered.jsonl"), &rendered)?;
    Ok(())
}

#[derive(serde::Serialize)]
struct MaskCheckReport {
    windows: usize,
    records: usize,
    mask_true_tokens: usize,
    violations: Vec<String>,
}

/// `maskcheck`: build masked batches and verify the completion-only mask
/// invariants (mask-true decodes to assistant content plus terminal
/// separator; records never cross windows).
pub fn cmd_maskcheck(
    ctx: &Ctx,
    input: &Path,
    window: usize,
    template: Option<&Path>,
    spaced: bool,
) -> Result<()> {
    let records: Vec<InstructionRecord> = read_jsonl(input)?;
    let tok = ctx.config.build_tokenizer()?;
    let tmpl = template_for(ctx, template, spaced)?;
    let marker = find_response_marker_tokens(&tmpl, tok.as_ref())?;
    let batch = build_masked_batch(&records, &tmpl, tok.as_ref(), window)?;

    let by_id: BTreeMap<&str, &InstructionRecord> =
        records.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut violations = Vec::new();
    let mut mask_true = 0usize;
    let mut seen_records = 0usize;
    for (w, example) in batch.iter().enumerate() {
        if example.token_ids.len() != window {
            violations.push(format!("window {w} is not padded to {window}"));
        }
        for span in &example.record_spans {
            seen_records += 1;
            if span.end > window {
                violations.push(format!("record {} crosses window {w}", span.id));
                continue;
            }
            let ids = &example.token_ids[span.start..span.end];
            let mask = &example.loss_mask[span.start..span.end];
            let record = by_id[span.id.as_str()];
            let marker_pos = (0..ids.len().saturating_sub(marker.len() - 1))
                .find(|&i| ids[i..i + marker.len()] == marker[..]);
            let Some(pos) = marker_pos else {
                violations.push(format!("record {}: marker not found", span.id));
                continue;
            };
            let content_start = pos + marker.len();
            if mask[..content_start].iter().any(|m| *m)
                || mask[content_start..].iter().any(|m| !*m)
            {
                violations.push(format!("record {}: mask boundary is off", span.id));
            }
            let decoded = tok.decode(&ids[content_start..]);
            let expected = tok.decode(&tok.encode(&format!(
                "{}{}",
                record.assistant, tmpl.assistant_suffix
            )));
            if decoded != expected {
                violations.push(format!(
                    "record {}: mask region decodes to {decoded:?}, expected {expected:?}",
                    span.id
                ));
            }
        }
        mask_true += example.loss_mask.iter().filter(|m| **m).count();
    }
    if seen_records != records.len() {
        violations.push(format!(
            "{} records in, {seen_records} records packed",
            records.len()
        ));
    }

    let report = MaskCheckReport {
        windows: batch.len(),
        records: records.len(),
        mask_true_tokens: mask_true,
        violations,
    };
    ctx.note(&format!(
        "maskcheck: {} windows, {} records, {} mask-true tokens, {} violations",
        report.windows,
        report.records,
        report.mask_true_tokens,
        report.violations.len()
    ));
    if !ctx.dry_run {
        let path = ctx.config.out("maskcheck.json");
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, serde_json::to_string_pretty(&report)?)?;
        write_jsonl(&ctx.config.out("masked.jsonl"), &batch)?;
    }
    if !report.violations.is_empty() {
        bail!("mask check failed: {}", report.violations.join("; "));
    }
    Ok(())
}

#[derive(serde::Deserialize)]
struct AnswerRow {
    id: String,
    answer: String,
}

/// `eval`: score model answers against an eval item set.
pub fn cmd_eval(ctx: &Ctx, items_path: &Path, answers_path: &Path, mode: CacheMode) -> Result<()> {
    let items: Vec<EvalItem> = read_jsonl(items_path)?;
    for item in &items {
        item.validate()?;
    }
    let answers: BTreeMap<String, String> = read_jsonl::<AnswerRow>(answers_path)?
        .into_iter()
        .map(|row| (row.id, row.answer))
        .collect();

    let needs_judge = items.iter().any(|i| i.task.metric() == "mos");
    let judge_client;
    let judge = if needs_judge {
        let cache_dir = ctx
            .config
            .judge
            .cache_dir
            .clone()
            .unwrap_or_else(|| ctx.config.paths.cache_dir.clone());
        let endpoint = ctx
            .config
            .judge
            .endpoint
            .clone()
            .unwrap_or_else(|| ctx.config.provider.endpoint.clone());
        let mut client = ChatClient::new(endpoint, cache_dir, mode);
        client.api_key = ctx.config.provider.api_key.clone();
        judge_client = client;
        Some(MosJudge {
            client: &judge_client,
            model: ctx.config.judge.model.clone(),
        })
    } else {
        None
    };

    let outcomes = evaluate_all(&items, &answers, judge.as_ref())?;
    let report = evalharness::report(&items, &outcomes);
    for (task, task_report) in &report {
        ctx.note(&format!(
            "{task}: {} items, {} = {:.1}",
            task_report.n, task_report.metric, task_report.score
        ));
    }
    if ctx.dry_run {
        return Ok(());
    }
    write_jsonl(&ctx.config.out("eval/outcomes.jsonl"), &outcomes)?;
    let path = ctx.config.out("eval/report.json");
    std::fs::write(&path, serde_json::to_string_pretty(&report)?)?;
    Ok(())
}

fn parse_scores_csv(raw: &str) -> Result<ScoreMatrix> {
    let mut lines = raw.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| anyhow!("empty scores CSV"))?;
    let mut columns = header.split(',').map(str::trim);
    let first = columns.next().unwrap_or_default();
    if !first.eq_ignore_ascii_case("model") {
        bail!("scores CSV must start with a `model` column");
    }
    let tasks: Vec<String> = columns.map(str::to_string).collect();
    let mut models = Vec::new();
    let mut scores = Vec::new();
    for line in lines {
        let mut cells = line.split(',').map(str::trim);
        models.push(cells.next().unwrap_or_default().to_string());
        let row: Vec<Option<f64>> = cells
            .map(|c| c.parse::<f64>().ok())
            .collect();
        if row.len() != tasks.len() {
            bail!("row for {:?} has {} cells, expected {}", models.last().unwrap(), row.len(), tasks.len());
        }
        scores.push(row);
    }
    Ok(ScoreMatrix {
        models,
        tasks,
        scores,
        lower_better: Vec::new(),
    })
}

/// Printed ranks CSV: same task columns as the score matrix plus a final
/// `mean_rank` column.
fn parse_ranks_csv(raw: &str, n_tasks: usize) -> Result<(Vec<Vec<u32>>, Vec<f64>)> {
    let mut ranks = Vec::new();
    let mut means = Vec::new();
    for line in raw.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != n_tasks + 2 {
            bail!("rank row {line:?} has {} cells, expected {}", cells.len(), n_tasks + 2);
        }
        let row: Vec<u32> = cells[1..=n_tasks]
            .iter()
            .map(|c| c.parse::<u32>().context("rank is not an integer"))
            .collect::<Result<_>>()?;
        ranks.push(row);
        means.push(cells[n_tasks + 1].parse::<f64>().context("bad mean rank")?);
    }
    Ok((ranks, means))
}

/// `rank`: competition ranking over a score matrix, with optional
/// verification of published ranks.
pub fn cmd_rank(ctx: &Ctx, scores_path: &Path, printed_path: Option<&Path>) -> Result<()> {
    let matrix = parse_scores_csv(&std::fs::read_to_string(scores_path)?)?;
    let table = rank_table(&matrix)?;
    println!("{}", table.render_text());

    let mut inconsistencies = Vec::new();
    if let Some(printed_path) = printed_path {
        let (printed_ranks, printed_means) =
            parse_ranks_csv(&std::fs::read_to_string(printed_path)?, matrix.tasks.len())?;
        inconsistencies = verify_printed_ranks(&matrix, &printed_ranks, &printed_means)?;
        for flag in &inconsistencies {
            ctx.note(&format!("inconsistent published rank: {flag:?}"));
        }
        if inconsistencies.is_empty() {
            ctx.note("published ranks are consistent with competition ranking");
        }
    }
    if ctx.dry_run {
        return Ok(());
    }
    let dir = ctx.config.out("rank");
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("rank.json"), serde_json::to_string_pretty(&table)?)?;
    std::fs::write(dir.join("rank.txt"), table.render_text())?;
    if printed_path.is_some() {
        std::fs::write(
            dir.join("inconsistencies.json"),
            serde_json::to_string_pretty(&inconsistencies)?,
        )?;
    }
    Ok(())
}

/// `carbon train`: GPU-time estimate.
pub fn cmd_carbon_train(
    gpu_hours: f64,
    power_w: f64,
    pue: f64,
    intensity: Option<f64>,
    preset: Option<&str>,
) -> Result<()> {
    let intensity = match (intensity, preset) {
        (Some(i), _) => i,
        (None, Some(name)) => carbon::intensity_preset(name)
            .ok_or_else(|| anyhow!("unknown intensity preset {name:?}"))?,
        (None, None) => bail!("provide --intensity or --preset"),
    };
    let estimate = carbon::estimate_training(gpu_hours, power_w, pue, intensity)?;
    println!("{}", serde_json::to_string_pretty(&estimate)?);
    println!("{:.0} ({:.1})", estimate.gco2e, estimate.kwh);
    Ok(())
}

/// `carbon gen`: token-based estimate; `--preset paper` applies the
/// published calibration.
pub fn cmd_carbon_gen(
    tokens: u64,
    kwh_per_token: Option<f64>,
    intensity: Option<f64>,
    preset: Option<&str>,
) -> Result<()> {
    let estimate = match preset {
        Some("paper") => carbon::estimate_generation_default(tokens),
        Some(other) => bail!("unknown generation preset {other:?}"),
        None => {
            let kpt = kwh_per_token.ok_or_else(|| anyhow!("provide --kwh-per-token or --preset paper"))?;
            let i = intensity.ok_or_else(|| anyhow!("provide --intensity or --preset paper"))?;
            carbon::estimate_generation(tokens, kpt, i)
        }
    };
    println!("{}", serde_json::to_string_pretty(&estimate)?);
    println!("{:.0} ({:.1})", estimate.gco2e, estimate.kwh);
    Ok(())
}

/// `emit-config`: render the training parameter files and the offload
/// configuration.
pub fn cmd_emit_config(
    ctx: &Ctx,
    stage: TrainStage,
    variant: ConfigVariant,
    overrides: &BTreeMap<String, String>,
) -> Result<()> {
    let text = emit_training_config_variant(stage, variant, overrides)?;
    print!("{text}");
    if ctx.dry_run {
        return Ok(());
    }
    let dir = ctx.config.out("train");
    std::fs::create_dir_all(&dir)?;
    let name = match (stage, variant) {
        (TrainStage::Cpt, ConfigVariant::Full) => "cpt.yaml",
        (TrainStage::Ift, ConfigVariant::Full) => "ift.yaml",
        (TrainStage::Cpt, ConfigVariant::Inline) => "cpt_inline.yaml",
        (TrainStage::Ift, ConfigVariant::Inline) => "ift_inline.yaml",
    };
    std::fs::write(dir.join(name), &text)?;
    std::fs::write(dir.join("zero3.json"), DEEPSPEED_OFFLOAD_CONFIG)?;
    ctx.note(&format!("wrote {} and zero3.json", name));
    Ok(())
}

/// `export-grammar`: dump a builtin grammar in the JSON interchange format.
pub fn cmd_export_grammar(name: &str, out: Option<&Path>) -> Result<()> {
    let grammar_name: BuiltinGrammar = name
        .parse()
        .map_err(|e: instructforge::grammar::GrammarError| anyhow!(e.to_string()))?;
    let json = builtin(grammar_name).to_json();
    match out {
        Some(path) => std::fs::write(path, json)?,
        None => println!("{json}"),
    }
    Ok(())
}
