//! `rerankd`: the question-answering pipeline as a command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error. Results go to
//! stdout, diagnostics to stderr.

use std::collections::BTreeSet;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};

use rerank::bench::{self, ReportFormat};
use rerank::codegen::{self, GenOptions};
use rerank::error::{Error, Result};
use rerank::inference::Scorer;
use rerank::model::{self, ModelConfig};
use rerank::pipeline;
use rerank::retrieval::{index_documents, InvertedIndex};
use rerank::service::{ScoreServer, DEFAULT_PORT, PORT_ENV_VAR};
use rerank::textproc::{build_idf, builtin_stopwords, tokenize, IdfTable, STOPWORDS};

#[derive(Parser)]
#[command(
    name = "rerankd",
    version,
    about = "BM25 retrieval + CNN reranking pipeline with serving, compilation, and benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: CliCommand,
}

#[derive(Subcommand)]
enum CliCommand {
    /// Build an inverted index from a corpus file (one `doc_id<TAB>text` per line).
    Index {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Retrieve, segment, and rerank: print the top answers for a question.
    Ask {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        question: String,
        /// Number of documents to retrieve in the first stage.
        #[arg(long, default_value_t = 10)]
        h: usize,
        /// Number of reranked answers to print.
        #[arg(long = "top-n", default_value_t = 5)]
        top_n: usize,
    },
    /// Create a model file with deterministic synthetic weights.
    InitModel {
        #[arg(long)]
        out: PathBuf,
        /// Optional corpus to build the vocabulary and idf table from.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value_t = model::DEFAULT_EMBED_DIM)]
        embed_dim: usize,
        #[arg(long, default_value_t = model::DEFAULT_FILTER_WIDTH)]
        filter_width: usize,
        #[arg(long, default_value_t = model::DEFAULT_NUM_FILTERS)]
        num_filters: usize,
        /// Defaults to the join width 2·num_filters + 4.
        #[arg(long)]
        hidden_size: Option<usize>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Score one question/answer pair.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        question: String,
        #[arg(long)]
        answer: String,
    },
    /// Serve getScore over the wire protocol (single-threaded).
    Serve {
        #[arg(long)]
        model: PathBuf,
        /// Defaults to $RERANKD_PORT, then 9090.
        #[arg(long)]
        port: Option<u16>,
    },
    /// Emit a standalone evaluator program with the weights baked in.
    Compile {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Skip the --serve mode in the generated program.
        #[arg(long)]
        no_service: bool,
        /// Skip the --batch mode in the generated program.
        #[arg(long)]
        no_batch_cli: bool,
        /// Also compile the generated source with rustc -O.
        #[arg(long)]
        build: bool,
    },
    /// Measure throughput (and latency through the service).
    Bench {
        /// Tab-separated question/answer pairs, one per line.
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long, value_enum, default_value_t = BenchMode::Direct)]
        mode: BenchMode,
        /// Model file (direct and compiled modes).
        #[arg(long)]
        model: Option<PathBuf>,
        /// host:port of a running server (service mode).
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long, default_value_t = bench::DEFAULT_WARMUP)]
        warmup: usize,
        #[arg(long, value_enum, default_value_t = OutputFormat::Table)]
        format: OutputFormat,
    },
    /// Print the built-in stopword list, one term per line, sorted.
    DumpStopwords,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BenchMode {
    Direct,
    Service,
    Compiled,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Table,
    #[value(name = "json-lines")]
    JsonLines,
}

impl From<OutputFormat> for ReportFormat {
    fn from(f: OutputFormat) -> Self {
        match f {
            OutputFormat::Table => ReportFormat::Table,
            OutputFormat::JsonLines => ReportFormat::JsonLines,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

/// Parse a corpus file: one `doc_id<TAB>text` document per line.
fn read_corpus(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path)?;
    let mut docs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, body) = line.split_once('\t').ok_or_else(|| {
            Error::InvalidArgument(format!(
                "{}:{}: expected doc_id<TAB>text",
                path.display(),
                i + 1
            ))
        })?;
        docs.push((id.to_string(), body.to_string()));
    }
    Ok(docs)
}

fn read_pairs(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path)?;
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let (q, a) = line.split_once('\t').ok_or_else(|| {
            Error::InvalidArgument(format!(
                "{}:{}: expected question<TAB>answer",
                path.display(),
                i + 1
            ))
        })?;
        pairs.push((q.to_string(), a.to_string()));
    }
    Ok(pairs)
}

fn default_port() -> u16 {
    std::env::var(PORT_ENV_VAR)
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(DEFAULT_PORT)
}

fn run(command: CliCommand) -> Result<()> {
    match command {
        CliCommand::Index { corpus, out } => {
            let docs = read_corpus(&corpus)?;
            let index = index_documents(&docs)?;
            index.save(&out)?;
            eprintln!(
                "indexed {} documents into {}",
                index.n_docs(),
                out.display()
            );
            Ok(())
        }
        CliCommand::Ask {
            index,
            model,
            question,
            h,
            top_n,
        } => {
            let index = InvertedIndex::load(&index)?;
            let bundle = model::load_model(&model)?;
            let scorer = Scorer::new(&bundle)?;
            let answers = pipeline::ask(&index, &scorer, &question, h, top_n)?;
            let mut stdout = String::new();
            for (rank, scored) in answers.iter().enumerate() {
                stdout.push_str(&format!(
                    "{}\t{:.6}\t{}\t{}\t{}\n",
                    rank + 1,
                    scored.score.value(),
                    scored.candidate.doc_id,
                    scored.candidate.sentence_index,
                    scored.candidate.text
                ));
            }
            print!("{stdout}");
            Ok(())
        }
        CliCommand::InitModel {
            out,
            corpus,
            embed_dim,
            filter_width,
            num_filters,
            hidden_size,
            seed,
        } => {
            let (vocab, idf) = match corpus {
                Some(path) => {
                    let docs = read_corpus(&path)?;
                    let token_seqs: Vec<_> = docs.iter().map(|(_, t)| tokenize(t)).collect();
                    let idf = build_idf(&token_seqs)?;
                    let terms: BTreeSet<String> =
                        idf.entries().map(|(t, _)| t.to_string()).collect();
                    (terms.into_iter().collect(), idf)
                }
                None => (Vec::new(), IdfTable::empty()),
            };
            let mut config =
                ModelConfig::with_defaults(vocab, builtin_stopwords().into_iter().collect(), idf);
            config.embed_dim = embed_dim;
            config.filter_width = filter_width;
            config.num_filters = num_filters;
            config.hidden_size = hidden_size.unwrap_or(config.join_len());
            let bundle = model::init_model(&config, seed)?;
            model::save_model(&bundle, &out)?;
            eprintln!(
                "wrote model (d={} w={} k={} hdim={} |V|={}) to {}",
                config.embed_dim,
                config.filter_width,
                config.num_filters,
                config.hidden_size,
                config.vocab.len(),
                out.display()
            );
            Ok(())
        }
        CliCommand::Score {
            model,
            question,
            answer,
        } => {
            let bundle = model::load_model(&model)?;
            let scorer = Scorer::new(&bundle)?;
            println!("{}", scorer.score_pair(&question, &answer));
            Ok(())
        }
        CliCommand::Serve { model, port } => {
            let bundle = model::load_model(&model)?;
            let mut scorer = Scorer::new(&bundle)?;
            let port = port.unwrap_or_else(default_port);
            let server = ScoreServer::bind(("127.0.0.1", port))?;
            eprintln!("serving getScore on {}", server.local_addr()?);
            server.run(&mut scorer)
        }
        CliCommand::Compile {
            model,
            out_dir,
            no_service,
            no_batch_cli,
            build,
        } => {
            let bundle = model::load_model(&model)?;
            let opts = GenOptions {
                emit_service: !no_service,
                emit_batch_cli: !no_batch_cli,
            };
            let source = codegen::generate_evaluator(&bundle, &opts)?;
            source.write_to_dir(&out_dir)?;
            eprintln!(
                "wrote {} file(s) to {} (entry point {})",
                source.files.len(),
                out_dir.display(),
                source.entry_point
            );
            if build {
                let binary = codegen::compile_generated(&source, &out_dir)?;
                eprintln!("built {}", binary.display());
            }
            Ok(())
        }
        CliCommand::Bench {
            pairs,
            mode,
            model,
            endpoint,
            warmup,
            format,
        } => {
            let pairs = read_pairs(&pairs)?;
            let report = match mode {
                BenchMode::Direct => {
                    let model = model.ok_or_else(|| {
                        Error::InvalidArgument("--mode direct requires --model".into())
                    })?;
                    let bundle = model::load_model(&model)?;
                    let mut scorer = Scorer::new(&bundle)?;
                    bench::run_throughput(&pairs, &mut scorer, "direct", warmup)?
                }
                BenchMode::Service => {
                    let endpoint = endpoint.ok_or_else(|| {
                        Error::InvalidArgument("--mode service requires --endpoint".into())
                    })?;
                    bench::run_service_bench(&pairs, &endpoint, warmup)?
                }
                BenchMode::Compiled => {
                    let model = model.ok_or_else(|| {
                        Error::InvalidArgument("--mode compiled requires --model".into())
                    })?;
                    bench_compiled(&model, &pairs, warmup)?
                }
            };
            print!("{}", bench::emit_report(&[report], format.into()));
            Ok(())
        }
        CliCommand::DumpStopwords => {
            let mut words: Vec<&str> = STOPWORDS.to_vec();
            words.sort_unstable();
            let mut out = String::new();
            for w in words {
                out.push_str(w);
                out.push('\n');
            }
            print!("{out}");
            Ok(())
        }
    }
}

/// Compile the evaluator from a model file, serve it on an ephemeral port,
/// and run the service benchmark against it.
fn bench_compiled(
    model: &Path,
    pairs: &[(String, String)],
    warmup: usize,
) -> Result<bench::LatencyReport> {
    let bundle = model::load_model(model)?;
    let source = codegen::generate_evaluator(&bundle, &GenOptions::default())?;
    let dir = tempfile::tempdir()?;
    let binary = codegen::compile_generated(&source, dir.path())?;

    // Reserve an ephemeral port, then hand it to the child process.
    let port = {
        let probe = TcpListener::bind("127.0.0.1:0").map_err(Error::Transport)?;
        probe.local_addr().map_err(Error::Transport)?.port()
    };
    let mut child = std::process::Command::new(&binary)
        .arg("--serve")
        .arg(port.to_string())
        .stderr(std::process::Stdio::null())
        .spawn()?;

    let endpoint = format!("127.0.0.1:{port}");
    let mut last_err = None;
    let mut report = None;
    for _ in 0..50 {
        match bench::run_service_bench(pairs, &endpoint, warmup) {
            Ok(r) => {
                report = Some(r);
                break;
            }
            Err(Error::Transport(e)) => {
                last_err = Some(Error::Transport(e));
                std::thread::sleep(std::time::Duration::from_millis(100));
            }
            Err(other) => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(other);
            }
        }
    }
    let _ = child.kill();
    let _ = child.wait();
    let mut report = report.ok_or_else(|| {
        last_err.unwrap_or_else(|| {
            Error::InvalidArgument("compiled evaluator never became reachable".into())
        })
    })?;
    report.approach = "compiled".into();
    Ok(report)
}
