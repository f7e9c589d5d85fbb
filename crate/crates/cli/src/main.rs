use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use xf2t_core::align::{
    remote_scorer_client, stage1_candidates, stage2_filter, AlignError, EntailLabel, EntailmentScorer, LexicalScorer, DEFAULT_ENTAIL_THRESHOLD, DEFAULT_K,
};
use xf2t_core::exec::ExecMode;
use xf2t_core::facts::{corpus_stats, parse_corpus, serialize_corpus, CorpusInstance, FactTriple};
use xf2t_core::generate::generate_batch;
use xf2t_core::linearize::{build_vocab, delinearize, linearize_instance, FactSkeleton, RoleId, Vocabulary};
use xf2t_core::metrics::{evaluate, Prediction};
use xf2t_core::model::{init_model, load_checkpoint, save_checkpoint, BeamConfig, ModelConfig};
use xf2t_core::synth::{synth_corpus, synth_translation_pairs, SynthSpec, ToyLanguage, ToyTranslator, ENGLISH_TAG};
use xf2t_core::train::{
    build_pretrain_plan, build_view, read_translation_pairs, train_with, write_history_csv, RunConfig, Setup, Translator,
};

#[derive(Parser)]
#[command(name = "xf2t", version, about = "Cross-lingual fact-to-text toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run batch work on one thread.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Emit a synthetic corpus over toy languages.
    Synth(SynthArgs),
    /// Corpus statistics: lengths, fact-count histogram, top relations.
    Stats {
        corpus: PathBuf,
        #[arg(long, default_value_t = 10)]
        top_k: usize,
        /// Print the report as JSON instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Dump the linearized form of every instance with per-token roles.
    Linearize {
        corpus: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Two-stage fact-sentence alignment.
    Align(AlignArgs),
    /// Train a model from a run config.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Decode predictions for a corpus.
    Generate(GenerateArgs),
    /// Score predictions per language.
    Evaluate {
        predictions: PathBuf,
        /// Also write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, value_delimiter = ',', default_values_t = ["en-toy".to_string(), "xx-rev".into(), "yy-map".into()])]
    languages: Vec<String>,
    #[arg(long, default_value_t = 60)]
    instances: usize,
    #[arg(long, default_value_t = 4)]
    pool_size: usize,
    /// JSON SynthSpec; replaces the flags above.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write English-to-toy translation pairs (JSONL).
    #[arg(long)]
    pairs_out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct AlignArgs {
    corpus: PathBuf,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    /// Remote scorer base URL; the lexical baseline is used when absent.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long, default_value_t = DEFAULT_ENTAIL_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value_t = 30)]
    timeout_secs: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum GenSetup {
    Multilingual,
    TranslateInput,
    TranslateOutput,
}

#[derive(clap::Args)]
struct GenerateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 4)]
    beam: usize,
    #[arg(long, default_value_t = 64)]
    max_len: usize,
    #[arg(long, default_value_t = 1.0)]
    length_penalty: f64,
    #[arg(long, value_enum, default_value_t = GenSetup::Multilingual)]
    setup: GenSetup,
    /// Language the facts are written in.
    #[arg(long, default_value = ENGLISH_TAG)]
    english: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct PredictionRecord {
    entity_id: String,
    language: String,
    hypothesis: String,
    reference: String,
}

#[derive(Serialize)]
struct LinearizedRecord<'a> {
    entity_id: &'a str,
    language: &'a str,
    surface: &'a str,
    roles: &'a [RoleId],
}

#[derive(Serialize)]
struct CandidateRecord {
    fact: FactTriple,
    tfidf: f64,
    entail_prob: f64,
    label: EntailLabel,
}

#[derive(Serialize)]
struct AlignRecord<'a> {
    entity_id: &'a str,
    language: &'a str,
    sentence: &'a str,
    aligned: Vec<FactTriple>,
    candidates: Vec<CandidateRecord>,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn read_corpus(path: &Path) -> Result<Vec<CorpusInstance>> {
    parse_corpus(open(path)?).with_context(|| format!("reading corpus {}", path.display()))
}

fn write_jsonl<T: Serialize>(w: &mut dyn Write, rows: impl IntoIterator<Item = T>) -> Result<()> {
    for r in rows {
        serde_json::to_writer(&mut *w, &r)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let spec = match &args.config {
        Some(p) => serde_json::from_reader(open(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => SynthSpec {
            seed: args.seed,
            languages: args.languages,
            instances_per_language: args.instances,
            pool_size: args.pool_size,
            ..Default::default()
        },
    };
    let corpus = synth_corpus(&spec)?;
    let mut w = output(args.out.as_deref())?;
    serialize_corpus(&corpus, &mut w)?;
    w.flush()?;
    if let Some(p) = &args.pairs_out {
        write_jsonl(&mut *output(Some(p))?, synth_translation_pairs(&spec)?)?;
    }
    Ok(())
}

fn linearize_cmd(corpus: &Path, out: Option<&Path>) -> Result<()> {
    let corpus = read_corpus(corpus)?;
    let vocab = Vocabulary::with_languages(&xf2t_core::facts::languages(&corpus));
    let mut w = output(out)?;
    for inst in &corpus {
        let lin = linearize_instance(inst, &vocab)?;
        let back = delinearize(&lin.surface)?;
        let expected: Vec<FactSkeleton> = inst.facts.iter().map(FactSkeleton::from).collect();
        if back.facts != expected || back.language != inst.language {
            bail!("entity {} ({}) does not survive delinearization", inst.entity_id, inst.language);
        }
        let rec = LinearizedRecord {
            entity_id: &inst.entity_id,
            language: &inst.language,
            surface: &lin.surface,
            roles: &lin.roles,
        };
        write_jsonl(&mut *w, [rec])?;
    }
    Ok(())
}

/// Toy-language text is mapped back to English so that both stages compare like with like.
fn to_fact_language(text: &str, language: &str) -> String {
    match ToyLanguage::parse(language) {
        Ok(l) => l.to_english(text),
        Err(_) => text.to_string(),
    }
}

fn align_cmd(args: AlignArgs, exec: ExecMode) -> Result<()> {
    let corpus = read_corpus(&args.corpus)?;
    let scorer: Box<dyn EntailmentScorer> = match &args.endpoint {
        Some(url) => Box::new(remote_scorer_client(url, Duration::from_secs(args.timeout_secs))?),
        None => Box::new(LexicalScorer { threshold: args.threshold }),
    };
    let items: Vec<(String, Vec<FactTriple>)> = corpus
        .iter()
        .map(|i| (to_fact_language(&i.reference_text, &i.language), i.facts.clone()))
        .collect();
    let results: Vec<_> = exec
        .map(&items, |_, (sentence, facts)| -> Result<_, AlignError> {
            let s1 = stage1_candidates(sentence, facts, args.k)?;
            let s2 = stage2_filter(&s1, scorer.as_ref())?;
            Ok((s1, s2))
        })
        .into_iter()
        .collect::<Result<_, _>>()?;
    let mut w = output(args.out.as_deref())?;
    let rows = corpus.iter().zip(results).map(|(inst, (s1, s2))| AlignRecord {
        entity_id: &inst.entity_id,
        language: &inst.language,
        sentence: &inst.reference_text,
        aligned: s2.aligned,
        candidates: s1
            .candidates
            .into_iter()
            .zip(s2.outputs)
            .map(|((fact, tfidf), (_, out))| CandidateRecord { fact, tfidf, entail_prob: out.entail_prob, label: out.label })
            .collect(),
    });
    write_jsonl(&mut *w, rows)
}

fn train_cmd(config: &Path, exec: ExecMode) -> Result<()> {
    let cfg: RunConfig =
        serde_json::from_reader(open(config)?).with_context(|| format!("parsing run config {}", config.display()))?;
    let corpus = read_corpus(&cfg.paths.train_corpus)?;
    let pretrain = match &cfg.paths.pretrain_corpus {
        Some(p) => read_corpus(p)?,
        None => corpus.clone(),
    };
    let pairs = match &cfg.paths.translation_pairs {
        Some(p) => read_translation_pairs(open(p)?)?,
        None => Vec::new(),
    };
    let all: Vec<CorpusInstance> = corpus.iter().chain(&pretrain).cloned().collect();
    let vocab = build_vocab(&all, cfg.max_vocab)?;

    let translator: Option<&dyn Translator> = Some(&ToyTranslator);
    let view = build_view(&corpus, &cfg.setup, translator, &vocab, &cfg.english)?;
    let hp = cfg.hyperparameters.clone();
    let phases =
        build_pretrain_plan(cfg.pretrain_plan, &pretrain, &pairs, &vocab, &cfg.english, hp.epochs_pretrain, cfg.seed)?;

    let m = &cfg.model;
    let mc = ModelConfig {
        vocab_size: vocab.len(),
        d_model: m.d_model,
        n_heads: m.n_heads,
        n_enc_layers: m.n_enc_layers,
        n_dec_layers: m.n_dec_layers,
        d_ff: m.d_ff,
        dropout_rate: hp.dropout,
        max_positions: m.max_positions,
        seed: cfg.seed,
        use_role_embeddings: m.use_role_embeddings,
    };
    let tc = xf2t_core::train::TrainConfig { seed: cfg.seed, ..hp };
    let params = init_model(&mc)?;
    let (params, history) = train_with(params, &phases, &view, &tc, exec, &mut |h| {
        eprintln!("{} epoch {:>3}  loss {:.4}", h.phase, h.epoch, h.mean_loss)
    })?;

    save_checkpoint(&cfg.paths.checkpoint, &params, vocab.languages())?;
    let mut v = output(Some(&cfg.paths.vocab))?;
    vocab.write(&mut v)?;
    v.flush()?;
    let mut h = output(Some(&cfg.paths.history))?;
    write_history_csv(&history, &mut h)?;
    h.flush()?;
    Ok(())
}

fn generate_cmd(args: GenerateArgs, exec: ExecMode) -> Result<()> {
    let (params, languages) = load_checkpoint(&args.checkpoint)?;
    let vocab = Vocabulary::read(open(&args.vocab)?, &languages)?;
    let corpus = read_corpus(&args.corpus)?;
    let setup = match args.setup {
        GenSetup::Multilingual => Setup::Multilingual,
        GenSetup::TranslateInput => Setup::TranslateInput,
        GenSetup::TranslateOutput => Setup::TranslateOutput,
    };
    let translator = ToyTranslator;
    let view = match args.setup {
        // Decode in English for every instance, whether or not an English reference exists.
        GenSetup::TranslateOutput => corpus
            .iter()
            .map(|i| {
                let english = CorpusInstance { language: args.english.clone(), ..i.clone() };
                build_view(std::slice::from_ref(&english), &Setup::Multilingual, None, &vocab, &args.english)
                    .map(|mut v| v.remove(0))
            })
            .collect::<Result<Vec<_>, _>>()?,
        _ => build_view(&corpus, &setup, Some(&translator), &vocab, &args.english)?,
    };
    let sources: Vec<_> = view.iter().map(|e| e.source.clone()).collect();
    let cfg = BeamConfig { width: args.beam, max_len: args.max_len, length_norm_exponent: args.length_penalty, ..Default::default() };
    let hyps = generate_batch(&params, &vocab, &sources, &cfg, exec)?;
    let records = corpus.iter().zip(hyps).map(|(inst, h)| -> Result<PredictionRecord> {
        let hypothesis = match args.setup {
            GenSetup::TranslateOutput => translator.translate(&h, &args.english, &inst.language)?,
            _ => h,
        };
        Ok(PredictionRecord {
            entity_id: inst.entity_id.clone(),
            language: inst.language.clone(),
            hypothesis,
            reference: inst.reference_text.clone(),
        })
    });
    let records: Vec<PredictionRecord> = records.collect::<Result<_>>()?;
    write_jsonl(&mut *output(args.out.as_deref())?, records)
}

fn evaluate_cmd(predictions: &Path, out: Option<&Path>) -> Result<()> {
    let mut preds: Vec<Prediction> = Vec::new();
    for (i, line) in open(predictions)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: PredictionRecord = serde_json::from_str(&line).with_context(|| format!("line {}", i + 1))?;
        preds.push((r.language, r.hypothesis, r.reference));
    }
    let report = evaluate(&preds)?;
    if let Some(p) = out {
        let mut w = output(Some(p))?;
        serde_json::to_writer_pretty(&mut w, &report)?;
        writeln!(w)?;
        w.flush()?;
    }
    print!("{}", report.render_table());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let exec = if cli.sequential { ExecMode::Sequential } else { ExecMode::Parallel };
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Stats { corpus, top_k, json } => {
            let report = corpus_stats(&read_corpus(&corpus)?, top_k)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{}", report.render_text());
            }
            Ok(())
        }
        Command::Linearize { corpus, out } => linearize_cmd(&corpus, out.as_deref()),
        Command::Align(a) => align_cmd(a, exec),
        Command::Train { config } => train_cmd(&config, exec),
        Command::Generate(a) => generate_cmd(a, exec),
        Command::Evaluate { predictions, out } => evaluate_cmd(&predictions, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
