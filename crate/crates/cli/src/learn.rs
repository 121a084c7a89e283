//! Embedding-level stages: contrastive loss evaluation, head training,
//! scoring, evaluation, and audio enrichment planning.

use std::collections::BTreeMap;

use forgepipe_core::dataio::{self, EmbeddingTable, Label, ScoreRecord};
use forgepipe_core::enrichment::{self, EnrichmentSpec};
use forgepipe_core::error::HeadError;
use forgepipe_core::evalmetrics::{self, VideoVerdict};
use forgepipe_core::head::{self, LabeledExample};
use forgepipe_core::losses;
use serde_json::json;

use crate::error::CliError;
use crate::media::{mkdir, parent_dir, print_json};
use crate::{Context, EnrichArgs, EvalArgs, LossEvalArgs, ScoreArgs, TrainHeadArgs};

fn write_json_out(ctx: &Context, value: &serde_json::Value) -> Result<(), CliError> {
    if let Some(out) = &ctx.out {
        if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
            mkdir(dir)?;
        }
        dataio::write_json(out, value)?;
    }
    Ok(())
}

// --- loss-eval ---

pub fn loss_eval(ctx: &Context, a: LossEvalArgs) -> Result<(), CliError> {
    let (batch, from_spec) = losses::load_batch(&a.batch)?;
    let mut cfg = from_spec.unwrap_or(ctx.config.losses);
    if let Some(t) = a.temperature {
        cfg.temperature = t;
    }
    if let Some(l) = a.lambda_va {
        cfg.lambda_va = l;
    }
    if let Some(l) = a.lambda_vt {
        cfg.lambda_vt = l;
    }
    if let Some(n) = a.negatives {
        cfg.negatives = n.into();
    }
    let out = losses::combined_loss_with(&batch, &cfg, ctx.exec)?;
    if let Some(dir) = &a.grads_out {
        mkdir(dir)?;
        let g = &out.grads;
        let flat = |rows: &[Vec<f64>]| rows.iter().flatten().map(|v| *v as f32).collect::<Vec<f32>>();
        let k = batch.len();
        dataio::write_tensor(&dir.join("v_va.ft"), &[k, g.v_va[0].len()], &flat(&g.v_va))?;
        dataio::write_tensor(&dir.join("a_va.ft"), &[k, g.a_va[0].len()], &flat(&g.a_va))?;
        if batch.has_text() {
            dataio::write_tensor(&dir.join("v_vat.ft"), &[k, g.v_vat[0].len()], &flat(&g.v_vat))?;
            let p = g.t_vat[0].len();
            let d = g.t_vat[0][0].len();
            let t: Vec<f32> = g.t_vat.iter().flatten().flatten().map(|v| *v as f32).collect();
            dataio::write_tensor(&dir.join("t_vat.ft"), &[k, p, d], &t)?;
        }
    }
    let report = json!({
        "loss": out.loss,
        "nce_va": out.nce_va,
        "milnce_vt": out.milnce_vt,
        "config": cfg,
    });
    write_json_out(ctx, &report)?;
    print_json(&report);
    Ok(())
}

// --- train-head / score ---

fn examples_of(table: &EmbeddingTable, use_audio: bool) -> Result<Vec<LabeledExample>, CliError> {
    (0..table.len())
        .map(|i| {
            let mut x = table.visual(i).to_vec();
            if use_audio {
                let a = table.audio(i).ok_or(HeadError::WrongModality {
                    expected: "Audio".into(),
                    found: "none".into(),
                })?;
                x.extend_from_slice(a);
            }
            Ok(LabeledExample::new(x, table.rows[i].label.as_u8())?)
        })
        .collect()
}

/// Video-level verdicts (mean over clips, max over tracks) for scored rows.
fn verdicts(table: &EmbeddingTable, scores: &[f32]) -> Result<Vec<VideoVerdict>, CliError> {
    let mut by_video: BTreeMap<&str, (Label, Vec<ScoreRecord>)> = BTreeMap::new();
    for (r, s) in table.rows.iter().zip(scores) {
        by_video.entry(&r.video_id).or_insert((r.label, Vec::new())).1.push(ScoreRecord {
            video_id: r.video_id.clone(),
            track_id: r.track_id,
            clip_index: r.clip_index,
            score: *s,
        });
    }
    by_video
        .values()
        .map(|(label, recs)| evalmetrics::aggregate_video(recs, *label).map_err(CliError::from))
        .collect()
}

pub fn train_head(ctx: &Context, a: TrainHeadArgs) -> Result<(), CliError> {
    let out = ctx.out()?;
    let mut cfg = ctx.config.head.clone();
    cfg.seed = ctx.seed_or(cfg.seed);
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(b) = a.batch_size {
        cfg.batch_size = b;
    }
    cfg.freeze_hidden |= a.freeze_hidden;
    if a.video_only {
        cfg.use_audio = false;
    }
    cfg.validate().map_err(CliError::Usage)?;
    let table = dataio::read_embedding_table(&a.embeddings)?;
    let use_audio = cfg.use_audio && table.dim_a > 0;
    let examples = examples_of(&table, use_audio)?;
    let trained = head::train(&examples, &cfg, ctx.exec)?;
    let (loss, scores) = head::evaluate(&trained.params, &examples, ctx.exec)?;
    let v = verdicts(&table, &scores)?;
    let auc = match evalmetrics::roc_auc(&v) {
        Ok(auc) => Some(auc),
        Err(e) => {
            log::warn!("training AUC unavailable: {e}");
            None
        }
    };
    head::save_bundle(out, &trained.params, use_audio)?;
    let report = json!({
        "examples": examples.len(),
        "videos": v.len(),
        "d_in": trained.params.d_in(),
        "updates": trained.lr_trace.len(),
        "lr_first": trained.lr_trace.first(),
        "lr_last": trained.lr_trace.last(),
        "epoch_loss": trained.epoch_loss,
        "train_loss": loss,
        "train_auc": auc,
    });
    dataio::write_json(&out.join("train_report.json"), &report)?;
    print_json(&report);
    Ok(())
}

pub fn score(ctx: &Context, a: ScoreArgs) -> Result<(), CliError> {
    let out = ctx.out()?;
    let (params, index) = head::load_bundle(&a.head)?;
    let table = dataio::read_embedding_table(&a.clips)?;
    let examples = examples_of(&table, index.use_audio)?;
    let scores = forgepipe_core::par::try_map_ordered(ctx.exec, &examples, |ex| head::forward(&params, &ex.x))?;
    let mut records: Vec<ScoreRecord> = table
        .rows
        .iter()
        .zip(&scores)
        .map(|(r, s)| ScoreRecord {
            video_id: r.video_id.clone(),
            track_id: r.track_id,
            clip_index: r.clip_index,
            score: s.score,
        })
        .collect();
    records.sort_by(|x, y| (&x.video_id, x.track_id, x.clip_index).cmp(&(&y.video_id, y.track_id, y.clip_index)));
    mkdir(parent_dir(out))?;
    dataio::write_scores(out, &records)?;
    print_json(&json!({ "clips": records.len(), "scores": out }));
    Ok(())
}

// --- eval ---

pub fn eval(ctx: &Context, a: EvalArgs) -> Result<(), CliError> {
    let mut cfg = ctx.config.eval.clone();
    cfg.exclude_tags.extend(a.exclude_tag);
    if let Some(t) = a.threshold {
        cfg.threshold = t;
    }
    let scores = dataio::read_scores(&a.scores)?;
    let manifest = dataio::read_manifest(&a.manifest)?;
    let report = evalmetrics::evaluate(&scores, &manifest, &cfg, ctx.exec)?;
    let value = serde_json::to_value(&report).expect("report serializes");
    write_json_out(ctx, &value)?;
    print_json(&value);
    Ok(())
}

// --- enrich-plan ---

pub fn enrich_plan(ctx: &Context, a: EnrichArgs) -> Result<(), CliError> {
    let out = ctx.out()?;
    let specs: Vec<EnrichmentSpec> = dataio::read_jsonl(&a.spec)?;
    let base = parent_dir(&a.spec);
    let outcomes = enrichment::enrich_all(&specs, base, &ctx.config.enrichment.time_base, ctx.exec)?;
    mkdir(&out.join("audio"))?;
    for o in &outcomes {
        if let Some(audio) = &o.audio {
            dataio::write_tensor(&out.join("audio").join(format!("{}.ft", o.record.video_id)), &[audio.len()], audio)?;
        }
    }
    let records: Vec<_> = outcomes.into_iter().map(|o| o.record).collect();
    let ledger = enrichment::build_ledger(&records);
    dataio::write_jsonl_rows(&out.join("enriched.jsonl"), &records)?;
    dataio::write_json(&out.join("ledger.json"), &ledger)?;
    print_json(&serde_json::to_value(ledger).expect("ledger serializes"));
    Ok(())
}
