//! Per-prompt evaluation of a compressor against a proxy LM.

use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{random_compress, Compressor};
use crate::corpus::PromptRecord;
use crate::error::{Error, Result};
use crate::metrics::{exact_match, rouge_l, rouge_n, token_f1};
use crate::nn::SequenceEncoder;
use crate::reward::compute_reward;
use crate::scoring::{generate_reference, ProxyLM, RetentionScorer};
use crate::tokenizer::{detokenize, tokenize, TokenSequence, Vocabulary};
use crate::trainer::{derive_seed, EpisodeMode, Rollout};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub id: String,
    pub method: String,
    /// Absent when the record has no reference output.
    pub em: Option<f64>,
    pub token_f1: f64,
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
    pub retention: Option<f64>,
    pub tokens_before: usize,
    pub tokens: usize,
    pub rho: f64,
    pub inv_rho: f64,
}

/// Column means; optional columns average over rows that carry them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalAggregate {
    pub em: Option<f64>,
    pub token_f1: f64,
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
    pub retention: Option<f64>,
    pub tokens: f64,
    pub rho: f64,
    pub inv_rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    /// Which model produced the generations.
    pub generator: String,
    pub rows: Vec<EvalRow>,
    pub mean: EvalAggregate,
}

pub struct EvalSettings<'a> {
    pub n_gen: usize,
    pub generator: String,
    pub retention: Option<&'a dyn RetentionScorer>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn mean_opt(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let present: Vec<f64> = xs.flatten().collect();
    (!present.is_empty()).then(|| mean(present.into_iter()))
}

pub fn aggregate(rows: &[EvalRow]) -> EvalAggregate {
    EvalAggregate {
        em: mean_opt(rows.iter().map(|r| r.em)),
        token_f1: mean(rows.iter().map(|r| r.token_f1)),
        rouge1: mean(rows.iter().map(|r| r.rouge1)),
        rouge2: mean(rows.iter().map(|r| r.rouge2)),
        rouge_l: mean(rows.iter().map(|r| r.rouge_l)),
        retention: mean_opt(rows.iter().map(|r| r.retention)),
        tokens: mean(rows.iter().map(|r| r.tokens as f64)),
        rho: mean(rows.iter().map(|r| r.rho)),
        inv_rho: mean(rows.iter().map(|r| r.inv_rho)),
    }
}

/// Compresses every record, generates from both contexts and scores the
/// compressed-context generation against the original-context one.
pub fn evaluate(
    compressor: &dyn Compressor,
    records: &[PromptRecord],
    vocab: &Vocabulary,
    lm: &dyn ProxyLM,
    settings: &EvalSettings<'_>,
) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if settings.n_gen == 0 {
        return Err(Error::InvalidArgument("n_gen must be at least 1".into()));
    }
    let rows = records
        .par_iter()
        .enumerate()
        .map(|(i, rec)| {
            let seq = tokenize(&rec.text, vocab);
            let c = compressor.compress(&seq, i)?;
            let gen_c = lm.greedy_continue(&c.compressed, settings.n_gen);
            let gen_o = lm.greedy_continue(&seq, settings.n_gen);
            let em = match &rec.reference_output {
                Some(r) => Some(exact_match(&detokenize(&gen_c, vocab)?, r)),
                None => None,
            };
            let retention = settings
                .retention
                .map(|s| s.score(&seq, &c.compressed))
                .transpose()?;
            Ok(EvalRow {
                id: rec.id.clone(),
                method: compressor.name().to_string(),
                em,
                token_f1: token_f1(&gen_c, &gen_o),
                rouge1: rouge_n(&gen_c, &gen_o, 1)?.f1,
                rouge2: rouge_n(&gen_c, &gen_o, 2)?.f1,
                rouge_l: rouge_l(&gen_c, &gen_o).f1,
                retention,
                tokens_before: seq.len(),
                tokens: c.compressed.len(),
                rho: c.rho,
                inv_rho: 1.0 / c.rho,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        method: compressor.name().to_string(),
        generator: settings.generator.clone(),
        mean: aggregate(&rows),
        rows,
    })
}

impl EvalReport {
    pub fn write_jsonl(&self, mut out: impl Write) -> Result<()> {
        for r in &self.rows {
            serde_json::to_writer(&mut out, r)?;
            writeln!(out).map_err(|e| Error::io("<eval report>", e))?;
        }
        Ok(())
    }
}

/// Policy episodes against random deletion at the same per-prompt rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineComparison {
    pub prompts: usize,
    pub policy_reward: f64,
    pub random_reward: f64,
    pub mean_rho: f64,
    /// Share of the policy's deletions that hit planted fillers.
    pub filler_precision: f64,
    /// The same share expected from uniform deletion of as many tokens.
    pub chance_precision: f64,
}

impl BaselineComparison {
    /// `(policy − random) / |random|`.
    pub fn relative_gain(&self) -> f64 {
        (self.policy_reward - self.random_reward) / self.random_reward.abs()
    }
}

struct PromptComparison {
    policy: f64,
    random: f64,
    rho: f64,
    dropped: usize,
    dropped_fillers: usize,
    expected_fillers: f64,
}

/// Runs the policy over `stage` on every prompt, then scores a random
/// deletion of the same final length under the stage's last band.
/// `Sample` seeds are re-derived per prompt.
pub fn compare_with_random<E: SequenceEncoder>(
    rollout: &Rollout<'_, E>,
    prompts: &[TokenSequence],
    filler_masks: &[Vec<bool>],
    stage: usize,
    mode: EpisodeMode,
    seed: u64,
) -> Result<BaselineComparison> {
    if prompts.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if prompts.len() != filler_masks.len() {
        return Err(Error::InvalidArgument(format!(
            "{} prompts but {} filler masks",
            prompts.len(),
            filler_masks.len()
        )));
    }
    let t_last = rollout.schedule.t_max(stage).saturating_sub(1);
    let (c_s, c_l) = rollout.schedule.bounds(stage, t_last)?;
    let band = rollout.reward.with_bounds(c_s, c_l);
    let per_prompt = prompts
        .par_iter()
        .zip(filler_masks)
        .enumerate()
        .map(|(i, (seq, mask))| {
            if mask.len() != seq.len() {
                return Err(Error::InvalidArgument(format!(
                    "prompt {i}: filler mask has {} entries for {} tokens",
                    mask.len(),
                    seq.len()
                )));
            }
            let mode = match mode {
                EpisodeMode::Sample(s) => EpisodeMode::Sample(derive_seed(s, &[i as u64])),
                m => m,
            };
            let ep = rollout.episode(seq, stage, mode)?;
            let rc = random_compress(seq, ep.rho, derive_seed(seed, &[i as u64]))?;
            let reference = generate_reference(rollout.scorers.lm, seq, rollout.scorers.n_gen)?;
            let random = compute_reward(
                seq,
                &rc.compressed,
                &band,
                rollout.scorers.retention,
                rollout.scorers.lm,
                &reference,
            )?;
            let mut kept = vec![false; seq.len()];
            for &p in &ep.kept_positions {
                kept[p] = true;
            }
            let dropped = seq.len() - ep.kept_positions.len();
            let n_fill = mask.iter().filter(|&&m| m).count();
            Ok(PromptComparison {
                policy: ep.final_reward(),
                random: random.total,
                rho: ep.rho,
                dropped,
                dropped_fillers: mask.iter().zip(&kept).filter(|(&m, &k)| m && !k).count(),
                expected_fillers: dropped as f64 * n_fill as f64 / seq.len() as f64,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = per_prompt.len() as f64;
    let dropped: usize = per_prompt.iter().map(|c| c.dropped).sum();
    let ratio = |x: f64| if dropped == 0 { 0.0 } else { x / dropped as f64 };
    Ok(BaselineComparison {
        prompts: per_prompt.len(),
        policy_reward: per_prompt.iter().map(|c| c.policy).sum::<f64>() / n,
        random_reward: per_prompt.iter().map(|c| c.random).sum::<f64>() / n,
        mean_rho: per_prompt.iter().map(|c| c.rho).sum::<f64>() / n,
        filler_precision: ratio(per_prompt.iter().map(|c| c.dropped_fillers).sum::<usize>() as f64),
        chance_precision: ratio(per_prompt.iter().map(|c| c.expected_fillers).sum()),
    })
}

const COLUMNS: [&str; 8] = ["EM", "F1", "R-1", "R-2", "R-L", "D", "Tokens", "1/ρ"];

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{:.2}", 100.0 * v))
}

fn table_cells(m: &EvalAggregate) -> Vec<String> {
    vec![
        fmt_opt(m.em),
        format!("{:.2}", 100.0 * m.token_f1),
        format!("{:.2}", 100.0 * m.rouge1),
        format!("{:.2}", 100.0 * m.rouge2),
        format!("{:.2}", 100.0 * m.rouge_l),
        fmt_opt(m.retention),
        format!("{:.1}", m.tokens),
        format!("{:.2}x", m.inv_rho),
    ]
}

/// Aligned plain-text table, one section per report. Scores are
/// percentages; "Tokens" and "1/ρ" come last.
pub fn render_table(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    if let Some(first) = reports.first() {
        let _ = writeln!(out, "# generations by {}", first.generator);
    }
    let _ = writeln!(
        out,
        "# EM compares the whole normalized generation with reference_output; no answer extraction"
    );
    let mut lines: Vec<Vec<String>> = vec![std::iter::once("Method".to_string())
        .chain(COLUMNS.iter().map(|c| c.to_string()))
        .collect()];
    for rep in reports {
        let mut row = vec![rep.method.clone()];
        row.extend(table_cells(&rep.mean));
        lines.push(row);
    }
    let widths: Vec<usize> = (0..lines[0].len())
        .map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
        .collect();
    for l in &lines {
        let cells: Vec<String> = l
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (cell, &w))| {
                let pad = w - cell.chars().count();
                if i == 0 {
                    format!("{cell}{}", " ".repeat(pad))
                } else {
                    format!("{}{cell}", " ".repeat(pad))
                }
            })
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    out
}
