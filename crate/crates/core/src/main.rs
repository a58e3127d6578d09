use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use msrl_core::corpus::{
    load_corpus, save_corpus, synth_corpus, CorpusError, CorpusSpec, Label, MediaKind, MixRatio, PreferenceExample,
    TaskKind,
};
use msrl_core::curriculum::{cmkd_distill, run_plan, CmkdSpec, Confidence, CurriculumError, StagePlan};
use msrl_core::grammar::StageFormat;
use msrl_core::harness::{evaluate, ratio_sweep, write_report, HarnessError, Report};
use msrl_core::policy::{Channel, PolicyError, PolicyParams};
use msrl_core::rewards::{total_reward, RewardBreakdown, RewardConfig, RewardError};

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Curriculum(#[from] CurriculumError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Reward(#[from] RewardError),
}

impl CliError {
    /// 3 = I/O, 4 = invalid input or config, 5 = training or evaluation failure.
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Io { .. } => 3,
            CliError::Corpus(CorpusError::Io { .. }) | CliError::Policy(PolicyError::Io { .. }) => 3,
            CliError::Curriculum(CurriculumError::Io { .. }) | CliError::Harness(HarnessError::Io { .. }) => 3,
            CliError::Input(_) | CliError::Corpus(_) | CliError::Reward(_) => 4,
            CliError::Policy(_) => 4,
            CliError::Curriculum(CurriculumError::InvalidPlan(_) | CurriculumError::Parse(_)) => 4,
            CliError::Curriculum(_) | CliError::Harness(_) => 5,
        }
    }

    fn category(&self) -> &'static str {
        match self.exit_code() {
            3 => "io",
            4 => "invalid input",
            _ => "run failed",
        }
    }
}

#[derive(Parser)]
#[command(
    name = "msrl",
    version,
    about = "Staged RLVR training for a toy generative reward model"
)]
struct Cli {
    /// Base seed for every randomized operation.
    #[arg(long, global = true, env = "MSRL_SEED", default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ChannelArg {
    Visual,
    Caption,
    TextOnly,
}

impl From<ChannelArg> for Channel {
    fn from(c: ChannelArg) -> Channel {
        match c {
            ChannelArg::Visual => Channel::Visual,
            ChannelArg::Caption => Channel::Caption,
            ChannelArg::TextOnly => Channel::TextOnly,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    ThinkAnswer,
    TypedThinkAnswer,
}

impl From<FormatArg> for StageFormat {
    fn from(f: FormatArg) -> StageFormat {
        match f {
            FormatArg::ThinkAnswer => StageFormat::ThinkAnswer,
            FormatArg::TypedThinkAnswer => StageFormat::TypedThinkAnswer,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ConfidenceArg {
    Mean,
    Sequence,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus from a TOML or JSON spec.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a stage plan from zero parameters.
    Train {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Distill consensus rationales from a caption-trained checkpoint.
    Distill {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 8)]
        n: usize,
        #[arg(long, value_enum, default_value = "mean")]
        confidence: ConfidenceArg,
        #[arg(long, value_enum, default_value = "typed-think-answer")]
        format: FormatArg,
        /// Pairs JSONL; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Voting@k accuracy of a checkpoint on a corpus.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 16)]
        k: usize,
        /// Inferred from the corpus when absent.
        #[arg(long, value_enum)]
        channel: Option<ChannelArg>,
        /// Inferred from the channel when absent.
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
        /// Directory for eval.txt and eval.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rerun stage 2 of a plan at several replay ratios.
    Sweep {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1:0,1:1,2:1,4:1,5:1")]
        ratios: Vec<String>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score model outputs: JSONL of {id, output_text, stage, gold, task}.
    Score {
        /// stdin when absent.
        #[arg(long)]
        input: Option<PathBuf>,
        /// stdout when absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(fs::File::create(p).map_err(io_err(p))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn read_spec(path: &Path) -> Result<CorpusSpec, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let is_json = path.extension().is_some_and(|e| e == "json");
    let spec: CorpusSpec = if is_json {
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
    } else {
        toml::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
    };
    Ok(spec)
}

fn default_channel(corpus: &[PreferenceExample]) -> Channel {
    match corpus.first().and_then(|e| e.media.first()) {
        None => Channel::TextOnly,
        Some(m) if m.kind == MediaKind::None => Channel::Caption,
        Some(_) => Channel::Visual,
    }
}

#[derive(Deserialize)]
struct ScoreInput {
    id: String,
    output_text: String,
    stage: u8,
    gold: Label,
    task: TaskKind,
}

#[derive(Serialize)]
struct ScoreOutput {
    id: String,
    #[serde(flatten)]
    reward: RewardBreakdown,
}

fn score(input: Option<&Path>, output: Option<&Path>) -> Result<(), CliError> {
    let reader: Box<dyn BufRead> = match input {
        Some(p) => Box::new(BufReader::new(fs::File::open(p).map_err(io_err(p))?)),
        None => Box::new(BufReader::new(io::stdin().lock())),
    };
    let mut out = open_out(output)?;
    let out_name = output.map_or_else(|| PathBuf::from("<stdout>"), Path::to_path_buf);
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| CliError::Io {
            path: input.map_or("<stdin>".into(), |p| p.display().to_string()),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ScoreInput =
            serde_json::from_str(&line).map_err(|e| CliError::Input(format!("line {}: {e}", i + 1)))?;
        let (format, cfg) = match rec.stage {
            1 => (StageFormat::ThinkAnswer, RewardConfig::default()),
            2 | 3 => (StageFormat::TypedThinkAnswer, RewardConfig::with_task_reward()),
            s => return Err(CliError::Input(format!("line {}: stage {s} is not 1, 2 or 3", i + 1))),
        };
        let reward = total_reward(&rec.output_text, format, rec.gold, rec.task, &cfg)?;
        let json = serde_json::to_string(&ScoreOutput { id: rec.id, reward }).expect("scores serialize");
        writeln!(out, "{json}").map_err(io_err(&out_name))?;
    }
    out.flush().map_err(io_err(&out_name))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let seed = cli.seed;
    match cli.command {
        Command::Synth { spec, out } => {
            let spec = read_spec(&spec)?;
            let corpus = synth_corpus(&spec)?;
            save_corpus(&out, &corpus)?;
            eprintln!("wrote {} examples to {}", corpus.len(), out.display());
        }
        Command::Train { plan, out } => {
            let plan = StagePlan::load(&plan)?;
            let init = PolicyParams::zeros(plan.feature_spec());
            let run = run_plan(&plan, &init, seed)?;
            run.write(&out)?;
            for s in &run.stages {
                let summary = match s.logs.iter().rev().find(|l| l.sft_loss.is_none()) {
                    Some(l) => format!("last mean reward {:.3}", l.mean_reward),
                    None => s
                        .logs
                        .last()
                        .and_then(|l| l.sft_loss)
                        .map_or_else(String::new, |x| format!("last sft loss {x:.3}")),
                };
                let heldout = s
                    .logs
                    .iter()
                    .rev()
                    .find_map(|l| l.heldout_acc)
                    .map(|a| format!(", held-out {a:.3}"))
                    .unwrap_or_default();
                eprintln!(
                    "stage {} entry {}: {} steps, {summary}{heldout}",
                    s.stage_id,
                    s.entry,
                    s.logs.len()
                );
            }
            eprintln!("checkpoints and logs in {}", out.display());
        }
        Command::Distill {
            checkpoint,
            corpus,
            n,
            confidence,
            format,
            out,
        } => {
            let params = PolicyParams::load(&checkpoint)?;
            let corpus = load_corpus(&corpus)?;
            let spec = CmkdSpec {
                n_samples: n,
                confidence: match confidence {
                    ConfidenceArg::Mean => Confidence::MeanLogProb,
                    ConfidenceArg::Sequence => Confidence::SequenceLogProb,
                },
                ..CmkdSpec::default()
            };
            spec.validate().map_err(CliError::Input)?;
            let (pairs, stats) = cmkd_distill(&params, &corpus, &spec, format.into(), seed)?;
            let mut w = open_out(out.as_deref())?;
            let name = out.clone().unwrap_or_else(|| PathBuf::from("<stdout>"));
            for p in &pairs {
                let json = serde_json::to_string(p).expect("pairs serialize");
                writeln!(w, "{json}").map_err(io_err(&name))?;
            }
            w.flush().map_err(io_err(&name))?;
            eprintln!(
                "{} pairs from {} examples ({} without consensus)",
                stats.n_pairs, stats.n_examples, stats.n_no_consensus
            );
        }
        Command::Eval {
            checkpoint,
            corpus,
            k,
            channel,
            format,
            out,
        } => {
            let params = PolicyParams::load(&checkpoint)?;
            let corpus = load_corpus(&corpus)?;
            let channel = channel.map_or_else(|| default_channel(&corpus), Channel::from);
            let format = format.map_or(
                if channel == Channel::TextOnly {
                    StageFormat::ThinkAnswer
                } else {
                    StageFormat::TypedThinkAnswer
                },
                StageFormat::from,
            );
            let report = Report::Eval(evaluate(&params, &corpus, format, channel, k, seed)?);
            print!("{}", report.render_text());
            if let Some(dir) = out {
                write_report(&report, &dir, "eval")?;
            }
        }
        Command::Sweep { plan, ratios, k, out } => {
            let plan = StagePlan::load(&plan)?;
            let sweep = plan
                .sweep
                .clone()
                .ok_or_else(|| CliError::Input("plan has no [sweep] section with evaluation corpora".into()))?;
            let ratios = ratios
                .iter()
                .map(|r| r.parse::<MixRatio>())
                .collect::<Result<Vec<_>, _>>()?;
            let base = plan.base_dir.as_deref();
            let caption_eval = sweep.caption_eval.resolve(base)?;
            let text_eval = sweep.text_eval.resolve(base)?;
            let init = PolicyParams::zeros(plan.feature_spec());
            let table = ratio_sweep(
                &plan,
                &init,
                &ratios,
                &caption_eval,
                &text_eval,
                k.unwrap_or(sweep.k),
                seed,
            )?;
            let report = Report::Sweep(table);
            print!("{}", report.render_text());
            if let Some(dir) = out {
                write_report(&report, &dir, "sweep")?;
            }
        }
        Command::Score { input, output } => score(input.as_deref(), output.as_deref())?,
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error ({}): {e}", e.category());
            ExitCode::from(e.exit_code())
        }
    }
}
