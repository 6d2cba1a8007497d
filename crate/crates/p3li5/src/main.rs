use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context as _, Result};
use clap::{Args, Parser, Subcommand};
use p3li5_bench::{
    anonymity_table, cost_report, estimate_icf_size, generate_events, read_csv, run_latency_suite, write_csv, write_jsonl, BenchConfig,
    LatencyRow, WorkloadModel,
};
use p3li5_icf::{serve, Icf, IcfClient, ServerConfig, Strategy};
use p3li5_lea::{batch_resolve, read_captures, Capture, KeyStore, LeaClient};
use sparsewpir_core::{context_generation, leakage_report, KeywordType, LeakageReport};

#[derive(Parser)]
#[command(name = "p3li5", version, about = "Private identifier resolution over a weakly-private keyword cache")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the identifier cache server.
    Serve(ServeArgs),
    /// Stream JSONL association events into a running server.
    Ingest(IngestArgs),
    /// Resolve one capture. Exit status 0: found, 1: not found, 2: error.
    Resolve(ResolveArgs),
    /// Resolve every capture of a JSONL file and write a CSV report.
    Batch(BatchArgs),
    /// Write Poisson registration traffic as JSONL.
    GenEvents(GenArgs),
    #[command(subcommand)]
    Bench(BenchCmd),
    /// Print the leakage of every ε for a geometry or a running server.
    Leakage(LeakageArgs),
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    listen: Option<String>,
    #[arg(long)]
    strategy: Option<Strategy>,
    /// Comma-separated, e.g. `suci,tmsi,supi`.
    #[arg(long, value_delimiter = ',')]
    keyword_types: Option<Vec<KeywordType>>,
    #[arg(long, value_delimiter = ',')]
    peers: Option<Vec<String>>,
    #[arg(long)]
    provisioned: Option<u64>,
    #[arg(long)]
    record_bytes: Option<usize>,
    #[arg(long)]
    ring_degree: Option<usize>,
    #[arg(long)]
    theta: Option<usize>,
    #[arg(short, long)]
    d: Option<usize>,
    /// Insecure parameters for testing.
    #[arg(long)]
    toy: bool,
    #[arg(long)]
    metrics_csv: Option<PathBuf>,
    /// JSONL events loaded before accepting connections.
    #[arg(long)]
    preload: Option<PathBuf>,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long, default_value = "127.0.0.1:7878")]
    server: String,
    /// `-` reads standard input.
    #[arg(long, default_value = "-")]
    file: PathBuf,
    /// Keep reading lines appended to the file.
    #[arg(long)]
    follow: bool,
}

#[derive(Args)]
struct ClientArgs {
    #[arg(long, default_value = "127.0.0.1:7878")]
    server: String,
    #[arg(short, long, default_value_t = 0)]
    epsilon: usize,
    #[arg(short = 'k', long, default_value = "suci")]
    keyword_type: KeywordType,
    #[arg(long, default_value = ".p3li5-keys")]
    keystore: PathBuf,
    /// Accept a server running insecure toy parameters.
    #[arg(long)]
    allow_toy: bool,
}

#[derive(Args)]
struct ResolveArgs {
    #[command(flatten)]
    client: ClientArgs,
    /// JSONL capture file; its first record is resolved.
    #[arg(long, conflicts_with = "keyword", required_unless_present = "keyword")]
    capture: Option<PathBuf>,
    /// Identifier value to resolve directly.
    #[arg(long)]
    keyword: Option<String>,
}

#[derive(Args)]
struct BatchArgs {
    #[command(flatten)]
    client: ClientArgs,
    #[arg(long)]
    captures: PathBuf,
    /// Per-capture rows; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 100)]
    subscribers: u64,
    #[arg(long, default_value_t = 0.0006)]
    lambda: f64,
    #[arg(long, default_value_t = 3600.0)]
    duration: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// RFC 3339 time of the first possible arrival; now when absent.
    #[arg(long)]
    start: Option<chrono::DateTime<chrono::Utc>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum BenchCmd {
    /// Latency of every ε and of full download under each bandwidth scenario.
    Latency {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cloud cost of each row of a latency CSV.
    Cost {
        #[arg(long)]
        latency: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        price_per_cpu_hour: Option<f64>,
        #[arg(long)]
        price_per_gb_egress: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Steady-state cache size of a workload.
    Size {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        subscribers: Option<u64>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        t_short: Option<u64>,
        #[arg(long)]
        record_bytes: Option<u64>,
    },
    /// Anonymity set per ε over database and record sizes.
    Anonymity {
        #[arg(long, value_delimiter = ',', default_value = "1000000,10000000,100000000")]
        sizes: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_value = "64,250,1024")]
        record_bytes: Vec<usize>,
        #[arg(short, long, default_value_t = 3)]
        d: usize,
        #[arg(long, default_value_t = 8192)]
        ring_degree: usize,
        #[arg(long, default_value_t = 3)]
        theta: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct LeakageArgs {
    /// Ask a running server for its geometry and live event count.
    #[arg(long)]
    server: Option<String>,
    #[arg(short = 'k', long, default_value = "suci")]
    keyword_type: KeywordType,
    #[arg(long, default_value_t = 1_000_000)]
    records: u64,
    #[arg(long, default_value_t = 250)]
    record_bytes: usize,
    #[arg(short, long, default_value_t = 3)]
    d: usize,
    #[arg(long, default_value_t = 8192)]
    ring_degree: usize,
    #[arg(long, default_value_t = 3)]
    theta: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Serve(a) => cmd_serve(a).map(|_| ExitCode::SUCCESS),
        Cmd::Ingest(a) => cmd_ingest(a).map(|_| ExitCode::SUCCESS),
        Cmd::Resolve(a) => cmd_resolve(a),
        Cmd::Batch(a) => cmd_batch(a),
        Cmd::GenEvents(a) => cmd_gen(a).map(|_| ExitCode::SUCCESS),
        Cmd::Bench(b) => cmd_bench(b).map(|_| ExitCode::SUCCESS),
        Cmd::Leakage(a) => cmd_leakage(a).map(|_| ExitCode::SUCCESS),
    };
    res.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(2)
    })
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn input(path: &Path) -> Result<Box<dyn BufRead>> {
    if path == Path::new("-") {
        Ok(Box::new(io::stdin().lock()))
    } else {
        Ok(Box::new(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?)))
    }
}

fn cmd_serve(a: ServeArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => ServerConfig::from_toml_file(p)?,
        None => ServerConfig::default(),
    };
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = a.$f.clone() { cfg.$f = v; })* };
    }
    set!(listen, strategy, keyword_types, peers, provisioned, record_bytes, ring_degree, theta, d);
    cfg.toy |= a.toy;
    if a.metrics_csv.is_some() {
        cfg.metrics_csv = a.metrics_csv.clone();
    }
    if cfg.toy {
        log::warn!("toy parameters: no security");
    }
    let icf = Arc::new(Icf::new(cfg.clone())?);
    if let Some(p) = &a.preload {
        let mut n = 0;
        for line in input(p)?.lines() {
            let line = line?;
            if !line.trim().is_empty() {
                icf.ingest_json(&line)?;
                n += 1;
            }
        }
        log::info!("preloaded {n} events");
    }
    let handle = serve(icf, &cfg.listen)?;
    println!("listening on {}", handle.local_addr());
    io::stdout().flush()?;
    handle.wait();
    Ok(())
}

fn cmd_ingest(a: IngestArgs) -> Result<()> {
    let mut conn = IcfClient::connect(&a.server)?;
    let mut r = input(&a.file)?;
    let (mut sent, mut resizes) = (0u64, 0u64);
    let mut line = String::new();
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            if a.follow {
                std::thread::sleep(Duration::from_millis(200));
                continue;
            }
            break;
        }
        if line.trim().is_empty() {
            continue;
        }
        sent += 1;
        if conn.ingest_line(line.trim_end())? {
            resizes += 1;
        }
    }
    log::info!("sent {sent} events; the cache resized {resizes} times");
    Ok(())
}

fn lea_client(a: &ClientArgs) -> Result<LeaClient> {
    let mut client = LeaClient::connect(&a.server, KeyStore::open(&a.keystore)?)?;
    let ctx = client.context(a.keyword_type)?;
    if ctx.toy && !a.allow_toy {
        bail!("server runs insecure toy parameters; pass --allow-toy to continue");
    }
    Ok(client)
}

fn print_leakage(r: &LeakageReport) {
    eprintln!(
        "leakage at ε = {}: anonymity set {:.1} of {} records, {:.2} bits leaked, {:.2} bits min-entropy left",
        r.epsilon, r.anonymity_k, r.records, r.max_leakage_bits, r.min_entropy_bits
    );
}

fn cmd_resolve(a: ResolveArgs) -> Result<ExitCode> {
    let kind = a.client.keyword_type;
    let capture = match (&a.capture, &a.keyword) {
        (Some(p), _) => read_captures(input(p)?)?.into_iter().next().context("capture file is empty")?,
        (None, Some(w)) => {
            let mut c = Capture::default();
            let v = Some(w.clone());
            match kind {
                KeywordType::Supi => c.supi = v,
                KeywordType::Suci => c.suci = v,
                KeywordType::Guti => c.guti_5g = v,
                KeywordType::Tmsi => c.tmsi_5g = v,
            }
            c
        }
        (None, None) => unreachable!("clap requires one"),
    };
    let mut client = lea_client(&a.client)?;
    let res = client.resolve(&capture, a.client.epsilon, kind)?;
    print_leakage(&client.leakage(kind, a.client.epsilon)?);
    let mut out = io::stdout().lock();
    for ev in &res.events {
        writeln!(out, "{}", ev.to_json())?;
    }
    Ok(if res.events.is_empty() { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

fn cmd_batch(a: BatchArgs) -> Result<ExitCode> {
    let captures = read_captures(input(&a.captures)?)?;
    let kind = a.client.keyword_type;
    let eps = a.client.epsilon;
    let report = if captures.is_empty() {
        p3li5_lea::BatchReport { rows: Vec::new(), leakage: None }
    } else {
        let mut client = lea_client(&a.client)?;
        batch_resolve(&mut client, &captures, eps, kind)
    };
    report.write_rows(output(a.out.as_deref())?)?;
    eprint!("{}", report.summary_csv());
    if let Some(l) = &report.leakage {
        print_leakage(l);
    }
    Ok(if report.errors() > 0 { ExitCode::from(2) } else { ExitCode::SUCCESS })
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let m = WorkloadModel { n_subscribers: a.subscribers, lambda_poisson: a.lambda, ..WorkloadModel::default() };
    let events = generate_events(&m, a.duration, a.seed, a.start.unwrap_or_else(chrono::Utc::now))?;
    write_jsonl(&events, output(a.out.as_deref())?)?;
    Ok(())
}

fn bench_config(p: Option<&Path>) -> Result<BenchConfig> {
    Ok(match p {
        Some(p) => BenchConfig::from_toml_file(p)?,
        None => BenchConfig::default(),
    })
}

fn cmd_bench(b: BenchCmd) -> Result<()> {
    match b {
        BenchCmd::Latency { config, out } => {
            let cfg = bench_config(config.as_deref())?;
            let rows = run_latency_suite(&cfg.suite)?;
            write_csv(&rows, output(out.as_deref())?)?;
        }
        BenchCmd::Cost { latency, config, price_per_cpu_hour, price_per_gb_egress, out } => {
            let mut model = bench_config(config.as_deref())?.cost;
            model.price_per_cpu_hour = price_per_cpu_hour.unwrap_or(model.price_per_cpu_hour);
            model.price_per_gb_egress = price_per_gb_egress.unwrap_or(model.price_per_gb_egress);
            let rows: Vec<LatencyRow> = read_csv(input(&latency)?)?;
            write_csv(&cost_report(&rows, &model)?, output(out.as_deref())?)?;
        }
        BenchCmd::Size { config, subscribers, lambda, t_short, record_bytes } => {
            let mut m = bench_config(config.as_deref())?.workload;
            m.n_subscribers = subscribers.unwrap_or(m.n_subscribers);
            m.lambda_poisson = lambda.unwrap_or(m.lambda_poisson);
            m.t_short_s = t_short.unwrap_or(m.t_short_s);
            m.record_bytes = record_bytes.unwrap_or(m.record_bytes);
            m.validate()?;
            let bytes = estimate_icf_size(&m);
            println!("live_events,bytes,gb");
            println!("{},{},{:.3}", m.expected_live_events(), bytes, bytes / 1e9);
        }
        BenchCmd::Anonymity { sizes, record_bytes, d, ring_degree, theta, out } => {
            write_csv(&anonymity_table(&sizes, &record_bytes, d, ring_degree, theta)?, output(out.as_deref())?)?;
        }
    }
    Ok(())
}

fn cmd_leakage(a: LeakageArgs) -> Result<()> {
    let (records, geom) = match &a.server {
        Some(addr) => {
            let mut conn = IcfClient::connect(addr)?;
            let ctx = conn.get_context(a.keyword_type)?;
            (conn.stats()?.live_events.max(1), ctx.geometry()?)
        }
        None => {
            let ctx = context_generation(a.records, a.record_bytes, a.d, a.ring_degree, a.theta, false)?;
            (a.records, ctx.geometry()?)
        }
    };
    println!("{}", LeakageReport::csv_header());
    for eps in 0..=geom.d() {
        println!("{}", leakage_report(records, &geom, eps)?.csv_row());
    }
    Ok(())
}
