use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dcp_core::baselines::{Compressor, Identity, PolicyCompressor, RandomDeletion, SelfInformation};
use dcp_core::config::{RunConfig, RunManifest};
use dcp_core::corpus::{load_corpus, make_synthetic_corpus, write_corpus};
use dcp_core::eval::{evaluate, render_table, EvalSettings};
use dcp_core::scoring::{IdfRetention, NgramLm, ProxyLM};
use dcp_core::tokenizer::{build_vocabulary, detokenize, tokenize, TokenId, Vocabulary};
use dcp_core::trainer::{load_checkpoint, save_checkpoint, Scorers, Trainer};

#[derive(Parser)]
#[command(name = "dcp", version, about = "Prompt compression by learned token deletion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic corpus of key and filler tokens.
    MakeCorpus(MakeCorpusArgs),
    /// Train the actor and critic through the curriculum.
    Train(TrainArgs),
    /// Compress prompts with a trained policy.
    Compress(CompressArgs),
    /// Score compressors against a proxy LM.
    Eval(EvalArgs),
}

#[derive(Args)]
struct MakeCorpusArgs {
    #[arg(long, env = "DCP_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 500)]
    n: usize,
    /// Share of filler tokens per prompt, in [0, 1].
    #[arg(long, default_value_t = 0.5, value_parser = unit_interval)]
    filler: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Directory for the checkpoint, log, LM and manifest.
    #[arg(long)]
    out_dir: PathBuf,
    /// TOML file layered over the built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `key=value` override, applied after `--config`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Hold every band at the first stage's starting band.
    #[arg(long)]
    no_hpc: bool,
    #[arg(long)]
    psi: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, env = "DCP_SEED")]
    seed: Option<u64>,
}

#[derive(Args)]
struct CompressArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Corpus JSONL to compress.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Deletion rounds per prompt.
    #[arg(long, default_value_t = 1)]
    steps: usize,
    /// Minimum tokens dropped per round.
    #[arg(long, default_value_t = 0)]
    budget: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Identity,
    Random,
    Selfinfo,
    Policy,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "random,selfinfo")]
    methods: Vec<Method>,
    /// Target rate for the random and self-information baselines.
    #[arg(long, default_value_t = 0.5, value_parser = unit_interval)]
    rho: f64,
    /// Saved n-gram LM; fitted on the corpus when absent.
    #[arg(long)]
    lm: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    budget: usize,
    #[arg(long, default_value_t = 32)]
    n_gen: usize,
    #[arg(long, env = "DCP_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

fn unit_interval(s: &str) -> Result<f64, String> {
    let x: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&x) {
        Ok(x)
    } else {
        Err(format!("{x} is outside [0, 1]"))
    }
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<dcp_core::Error> for Failure {
    fn from(e: dcp_core::Error) -> Self {
        match e {
            dcp_core::Error::InvalidConfig(_) | dcp_core::Error::InvalidArgument(_) => Failure::Usage(e.to_string()),
            e => Failure::Runtime(e.to_string()),
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn runtime(context: impl std::fmt::Display, e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(format!("{context}: {e}"))
}

fn partial(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".partial");
    path.with_file_name(name)
}

/// Writes via a `.partial` sibling so readers never see half a file.
fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult {
    let tmp = partial(path);
    let mut f = fs::File::create(&tmp).map_err(|e| runtime(tmp.display(), e))?;
    f.write_all(bytes).map_err(|e| runtime(tmp.display(), e))?;
    f.sync_all().map_err(|e| runtime(tmp.display(), e))?;
    fs::rename(&tmp, path).map_err(|e| runtime(path.display(), e))
}

fn manifest(command: &str, seed: u64, config: RunConfig) -> RunManifest {
    RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        seed,
        config,
        settings: BTreeMap::new(),
        inputs: BTreeMap::new(),
        outputs: BTreeMap::new(),
    }
}

fn write_manifest(path: &Path, m: &RunManifest) -> CliResult {
    let json = serde_json::to_string_pretty(m).map_err(|e| runtime("manifest", e))?;
    write_atomic(path, json.as_bytes())
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn show(p: &Path) -> String {
    p.display().to_string()
}

fn ensure_dir(dir: &Path) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| runtime(dir.display(), e))
}

fn make_corpus(args: MakeCorpusArgs) -> CliResult {
    let mut m = manifest("make-corpus", args.seed, RunConfig::default());
    m.settings.insert("n".into(), args.n.to_string());
    m.settings.insert("filler".into(), args.filler.to_string());
    m.outputs.insert("corpus".into(), show(&args.out));
    write_manifest(&manifest_path(&args.out), &m)?;
    let records = make_synthetic_corpus(args.seed, args.n, args.filler)?;
    let mut buf = Vec::new();
    write_corpus(&records, &mut buf)?;
    write_atomic(&args.out, &buf)
}

/// Defaults, then the config file, then `--set`, then dedicated flags. A
/// flag and a `--set` naming the same key is a conflict.
fn resolve_config(args: &TrainArgs) -> CliResult<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p).map_err(|e| Failure::Usage(e.to_string()))?,
        None => RunConfig::default(),
    };
    let mut set_keys = Vec::new();
    for kv in &args.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim()).map_err(|e| Failure::Usage(e.to_string()))?;
        set_keys.push(k.trim().to_string());
    }
    let flags: [(&str, &str, Option<String>); 6] = [
        ("--no-hpc", "curriculum.hierarchical", args.no_hpc.then(|| "false".to_string())),
        ("--psi", "curriculum.psi", args.psi.map(|x| x.to_string())),
        ("--alpha", "reward.alpha", args.alpha.map(|x| x.to_string())),
        ("--beta", "reward.beta", args.beta.map(|x| x.to_string())),
        ("--gamma", "reward.gamma", args.gamma.map(|x| x.to_string())),
        ("--seed", "trainer.seed", args.seed.map(|x| x.to_string())),
    ];
    for (flag, key, value) in flags {
        let Some(value) = value else { continue };
        if set_keys.iter().any(|k| k == key) {
            return Err(Failure::Usage(format!("{flag} conflicts with --set {key}")));
        }
        cfg.set(key, &value).map_err(|e| Failure::Usage(e.to_string()))?;
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

fn train(args: TrainArgs) -> CliResult {
    let cfg = resolve_config(&args)?;
    ensure_dir(&args.out_dir)?;
    let ckpt = args.out_dir.join("checkpoint.bin");
    let log_path = args.out_dir.join("training_log.jsonl");
    let lm_path = args.out_dir.join("lm.json");
    let mut m = manifest("train", cfg.trainer.seed, cfg.clone());
    m.inputs.insert("corpus".into(), show(&args.corpus));
    m.outputs.insert("checkpoint".into(), show(&ckpt));
    m.outputs.insert("training_log".into(), show(&log_path));
    m.outputs.insert("lm".into(), show(&lm_path));
    write_manifest(&args.out_dir.join("manifest.json"), &m)?;

    let records = load_corpus(&args.corpus)?;
    let vocab = build_vocabulary(&records, cfg.scoring.vocab_size)?;
    let prompts: Vec<_> = records.iter().map(|r| tokenize(&r.text, &vocab)).collect();
    let lm = NgramLm::fit_records(&records, &vocab, cfg.scoring.ngram_order, cfg.scoring.ngram_k)?;
    let docs: Vec<Vec<TokenId>> = prompts.iter().map(|p| p.ids().to_vec()).collect();
    let idf = IdfRetention::fit(&docs);
    let scorers = Scorers {
        retention: &idf,
        lm: &lm,
        n_gen: cfg.scoring.n_gen,
    };
    let mut trainer = Trainer::reference(
        cfg.trainer_config(),
        cfg.schedule(),
        cfg.reward_config()?,
        cfg.encoder_config(vocab.size()),
    )?;
    trainer.train(&prompts, scorers, &mut |r| {
        eprintln!(
            "round {:4}  stage {}  epoch {}  objective {:10.4}  critic {:10.4}  reward {:9.4}  rho {:.3}",
            r.round, r.stage, r.epoch, r.objective, r.critic_loss, r.mean_reward, r.mean_rho
        );
    })?;

    let tmp = partial(&lm_path);
    lm.save(&tmp)?;
    fs::rename(&tmp, &lm_path).map_err(|e| runtime(lm_path.display(), e))?;
    let mut log = Vec::new();
    trainer.log().write_jsonl(&mut log)?;
    write_atomic(&log_path, &log)?;
    save_checkpoint(&trainer, Some(&vocab), &ckpt)?;
    Ok(())
}

fn load_policy(path: &Path) -> CliResult<(Trainer, Vocabulary)> {
    let c = load_checkpoint(path).map_err(|e| runtime(path.display(), e))?;
    let vocab = c
        .vocab
        .ok_or_else(|| Failure::Runtime(format!("{}: checkpoint carries no vocabulary", path.display())))?;
    Ok((c.trainer, vocab))
}

fn compress(args: CompressArgs) -> CliResult {
    let mut m = manifest("compress", 0, RunConfig::default());
    m.settings.insert("steps".into(), args.steps.to_string());
    m.settings.insert("budget".into(), args.budget.to_string());
    m.inputs.insert("checkpoint".into(), show(&args.checkpoint));
    m.inputs.insert("input".into(), show(&args.input));
    m.outputs.insert("compressed".into(), show(&args.out));
    write_manifest(&manifest_path(&args.out), &m)?;

    let (trainer, vocab) = load_policy(&args.checkpoint)?;
    let records = load_corpus(&args.input)?;
    let compressor = PolicyCompressor {
        actor: trainer.actor(),
        steps: args.steps,
        drop_budget: args.budget,
    };
    let mut out = Vec::new();
    for (i, rec) in records.iter().enumerate() {
        let seq = tokenize(&rec.text, &vocab);
        let c = compressor.compress(&seq, i)?;
        let row = serde_json::json!({
            "id": rec.id,
            "original": detokenize(&seq, &vocab)?,
            "compressed": detokenize(&c.compressed, &vocab)?,
            "compressed_ids": c.compressed.ids(),
            "rho": c.rho,
            "tokens_before": seq.len(),
            "tokens_after": c.compressed.len(),
        });
        serde_json::to_writer(&mut out, &row).map_err(|e| runtime("output", e))?;
        out.push(b'\n');
    }
    write_atomic(&args.out, &out)
}

fn eval(args: EvalArgs) -> CliResult {
    if args.methods.contains(&Method::Policy) && args.checkpoint.is_none() {
        return Err(Failure::Usage("--methods policy needs --checkpoint".into()));
    }
    ensure_dir(&args.out_dir)?;
    let mut m = manifest("eval", args.seed, RunConfig::default());
    let names: Vec<&str> = args.methods.iter().map(|x| method_name(*x)).collect();
    m.settings.insert("methods".into(), names.join(","));
    m.settings.insert("rho".into(), args.rho.to_string());
    m.settings.insert("steps".into(), args.steps.to_string());
    m.settings.insert("budget".into(), args.budget.to_string());
    m.settings.insert("n_gen".into(), args.n_gen.to_string());
    m.inputs.insert("corpus".into(), show(&args.corpus));
    if let Some(p) = &args.lm {
        m.inputs.insert("lm".into(), show(p));
    }
    if let Some(p) = &args.checkpoint {
        m.inputs.insert("checkpoint".into(), show(p));
    }
    for n in &names {
        m.outputs.insert(n.to_string(), show(&args.out_dir.join(format!("eval_{n}.jsonl"))));
    }
    m.outputs.insert("table".into(), show(&args.out_dir.join("table.txt")));
    write_manifest(&args.out_dir.join("manifest.json"), &m)?;

    let records = load_corpus(&args.corpus)?;
    let policy = args.checkpoint.as_deref().map(load_policy).transpose()?;
    let vocab = match &policy {
        Some((_, v)) => v.clone(),
        None => build_vocabulary(&records, RunConfig::default().scoring.vocab_size)?,
    };
    let lm = match &args.lm {
        Some(p) => NgramLm::load(p)?,
        None => {
            let s = RunConfig::default().scoring;
            NgramLm::fit_records(&records, &vocab, s.ngram_order, s.ngram_k)?
        }
    };
    if lm.vocab_size() != vocab.size() {
        return Err(Failure::Usage(format!(
            "LM covers {} ids but the vocabulary has {}",
            lm.vocab_size(),
            vocab.size()
        )));
    }
    let docs: Vec<Vec<TokenId>> = records.iter().map(|r| tokenize(&r.text, &vocab).into_ids()).collect();
    let idf = IdfRetention::fit(&docs);
    let settings = EvalSettings {
        n_gen: args.n_gen,
        generator: format!("{}-gram proxy LM", lm.order()),
        retention: Some(&idf),
    };

    let mut reports = Vec::new();
    for &method in &args.methods {
        let compressor: Box<dyn Compressor + '_> = match method {
            Method::Identity => Box::new(Identity),
            Method::Random => Box::new(RandomDeletion {
                rho: args.rho,
                seed: args.seed,
            }),
            Method::Selfinfo => Box::new(SelfInformation { lm: &lm, rho: args.rho }),
            Method::Policy => Box::new(PolicyCompressor {
                actor: policy.as_ref().expect("checked above").0.actor(),
                steps: args.steps,
                drop_budget: args.budget,
            }),
        };
        let report = evaluate(compressor.as_ref(), &records, &vocab, &lm, &settings)?;
        let mut buf = Vec::new();
        report.write_jsonl(&mut buf)?;
        write_atomic(&args.out_dir.join(format!("eval_{}.jsonl", method_name(method))), &buf)?;
        reports.push(report);
    }
    let table = render_table(&reports);
    write_atomic(&args.out_dir.join("table.txt"), table.as_bytes())?;
    print!("{table}");
    Ok(())
}

fn method_name(m: Method) -> &'static str {
    match m {
        Method::Identity => "identity",
        Method::Random => "random",
        Method::Selfinfo => "selfinfo",
        Method::Policy => "policy",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::MakeCorpus(a) => make_corpus(a),
        Command::Train(a) => train(a),
        Command::Compress(a) => compress(a),
        Command::Eval(a) => eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
