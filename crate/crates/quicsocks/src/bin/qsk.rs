//! One binary, four tools: the relaying proxy, a measuring client, an echo
//! server, and the dataset report generator. Everything interesting lives in
//! the library; this file only parses flags and wires sockets to stdout.

use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Duration;

use clap::{Parser, Subcommand};
use quicsocks::endpoint::{run_timing_suite, serve, ConnectConfig, Mode};
use quicsocks::latmodel::{
    dataset_stats, emit_cdf, read_raw_samples, read_triples, write_cdf, RAW_CSV_HEADER,
};
use quicsocks::proxy::{NotifyMode, ProxyServer};
use quicsocks::socks::DomainName;

#[derive(Parser)]
#[command(name = "qsk", version, about = "Handshake-forwarding SOCKS proxy tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the relaying proxy.
    Proxy {
        /// TCP address for SOCKS control connections.
        #[arg(long, default_value = "0.0.0.0:1080")]
        listen_control: SocketAddr,
        /// UDP address for encapsulated datagrams. Defaults to the control
        /// address's UDP twin.
        #[arg(long)]
        listen_relay: Option<SocketAddr>,
        /// Resolver queried for forwarded names.
        #[arg(long, default_value = "127.0.0.1:53")]
        upstream_dns: SocketAddr,
        /// When clients learn the resolved address.
        #[arg(long, default_value = "early", value_parser = parse_notify)]
        notify: NotifyMode,
        /// Relays idle longer than this are reaped.
        #[arg(long, default_value_t = 30.0)]
        idle_timeout_s: f64,
        /// Hard cap on concurrent relay entries.
        #[arg(long, default_value_t = 4096)]
        max_relays: usize,
        /// Metrics are rewritten here once a second; without it SIGUSR1 or
        /// SIGHUP prints them to stdout.
        #[arg(long)]
        metrics_file: Option<PathBuf>,
    },
    /// Connect to a target and report handshake timings.
    Client {
        /// Destination as name:port.
        #[arg(long)]
        target: String,
        /// SOCKS control address; required for cold and warm modes.
        #[arg(long)]
        proxy: Option<SocketAddr>,
        /// Resolver for default mode, which resolves before connecting.
        #[arg(long, default_value = "127.0.0.1:53")]
        resolver: SocketAddr,
        #[arg(long, default_value = "default")]
        mode: Mode,
        /// Repetitions; each gets one timing line.
        #[arg(long, default_value_t = 1)]
        reps: usize,
        /// Probe the direct path and switch to it after the handshake.
        #[arg(long)]
        migrate: bool,
        /// Start probing as soon as the address is known rather than after
        /// the handshake.
        #[arg(long)]
        probe_early: bool,
        /// Connection-ID seed; repeating one against a live server collides
        /// in its connection table. Fresh entropy when absent.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the JSON lines here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the echo server.
    Server {
        #[arg(long, default_value = "0.0.0.0:4433")]
        listen: SocketAddr,
        /// Answer first flights with a stateless retry.
        #[arg(long, default_value = "on", value_parser = parse_on_off, action = clap::ArgAction::Set)]
        retry: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Analyze a measurement dataset.
    Model {
        /// Input CSV, either per-node triples or raw five-sample rows.
        #[arg(long)]
        csv: PathBuf,
        /// Either "stats" or "cdf:<metric>".
        #[arg(long, default_value = "stats")]
        report: String,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_notify(s: &str) -> Result<NotifyMode, String> {
    match s {
        "early" => Ok(NotifyMode::Early),
        "on-first-response" => Ok(NotifyMode::OnFirstResponse),
        other => Err(format!("unknown notify mode {other:?} (early|on-first-response)")),
    }
}

fn parse_on_off(s: &str) -> Result<bool, String> {
    match s {
        "on" => Ok(true),
        "off" => Ok(false),
        other => Err(format!("expected on or off, got {other:?}")),
    }
}

static DUMP: AtomicBool = AtomicBool::new(false);
static STOP: AtomicBool = AtomicBool::new(false);

extern "C" fn on_dump(_sig: libc::c_int) {
    DUMP.store(true, Ordering::Relaxed);
}

extern "C" fn on_stop(_sig: libc::c_int) {
    STOP.store(true, Ordering::Relaxed);
}

fn install_signal_handlers() {
    unsafe {
        libc::signal(libc::SIGUSR1, on_dump as *const () as libc::sighandler_t);
        libc::signal(libc::SIGHUP, on_dump as *const () as libc::sighandler_t);
        libc::signal(libc::SIGINT, on_stop as *const () as libc::sighandler_t);
        libc::signal(libc::SIGTERM, on_stop as *const () as libc::sighandler_t);
    }
}

fn main() {
    env_logger::init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Proxy {
            listen_control,
            listen_relay,
            upstream_dns,
            notify,
            idle_timeout_s,
            max_relays,
            metrics_file,
        } => run_proxy(
            listen_control,
            listen_relay,
            upstream_dns,
            notify,
            idle_timeout_s,
            max_relays,
            metrics_file,
        ),
        Command::Client {
            target,
            proxy,
            resolver,
            mode,
            reps,
            migrate,
            probe_early,
            seed,
            out,
        } => run_client(target, proxy, resolver, mode, reps, migrate, probe_early, seed, out),
        Command::Server { listen, retry, seed } => run_server(listen, retry, seed),
        Command::Model { csv, report, out } => run_model(csv, report, out),
    };
    if let Err(msg) = result {
        eprintln!("qsk: {msg}");
        std::process::exit(1);
    }
}

#[allow(clippy::too_many_arguments)]
fn run_proxy(
    listen_control: SocketAddr,
    listen_relay: Option<SocketAddr>,
    upstream_dns: SocketAddr,
    notify: NotifyMode,
    idle_timeout_s: f64,
    max_relays: usize,
    metrics_file: Option<PathBuf>,
) -> Result<(), String> {
    let listen_relay = listen_relay.unwrap_or(listen_control);
    let mut server = ProxyServer::new(listen_control, listen_relay, upstream_dns);
    server.notify = notify;
    server.idle_timeout_s = idle_timeout_s;
    server.max_relays = max_relays;
    server.metrics_file = metrics_file.clone();
    let handle = server.start().map_err(|e| format!("bind failed: {e}"))?;
    eprintln!(
        "proxy: control {} relay {} dns {}",
        handle.control_addr(),
        handle.relay_addr(),
        upstream_dns
    );

    install_signal_handlers();
    while !STOP.load(Ordering::Relaxed) {
        if DUMP.swap(false, Ordering::Relaxed) {
            dump_metrics(&handle, metrics_file.is_some());
        }
        std::thread::sleep(Duration::from_millis(100));
    }
    dump_metrics(&handle, metrics_file.is_some());
    handle.shutdown();
    Ok(())
}

fn dump_metrics(handle: &quicsocks::proxy::ProxyHandle, to_file: bool) {
    if to_file {
        handle.write_metrics_now();
    } else {
        let json = serde_json::to_string(&handle.metrics()).expect("plain counters");
        println!("{json}");
    }
}

#[allow(clippy::too_many_arguments)]
fn run_client(
    target: String,
    proxy: Option<SocketAddr>,
    resolver: SocketAddr,
    mode: Mode,
    reps: usize,
    migrate: bool,
    probe_early: bool,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<(), String> {
    let (name, port) = target
        .rsplit_once(':')
        .ok_or_else(|| format!("target {target:?} is not name:port"))?;
    let port: u16 = port.parse().map_err(|_| format!("bad port in {target:?}"))?;
    let name = DomainName::new(name.as_bytes()).map_err(|e| e.to_string())?;

    let mut config = ConnectConfig::new(name, port, resolver);
    config.proxy = proxy;
    config.mode = mode;
    config.migration = migrate;
    config.probe_early = probe_early;
    config.seed = seed.unwrap_or_else(rand::random);

    let (records, summary) = run_timing_suite(&config, reps).map_err(|e| e.to_string())?;
    let mut sink = open_sink(out.as_deref())?;
    for record in &records {
        let line = serde_json::to_string(record).expect("timing record");
        writeln!(sink, "{line}").map_err(|e| e.to_string())?;
    }
    let line = serde_json::to_string(&summary).expect("suite summary");
    writeln!(sink, "{line}").map_err(|e| e.to_string())?;
    Ok(())
}

fn run_server(listen: SocketAddr, retry: bool, seed: u64) -> Result<(), String> {
    let handle = serve(listen, retry, seed).map_err(|e| format!("bind failed: {e}"))?;
    eprintln!(
        "server: listening on {} retry {}",
        handle.local_addr(),
        if retry { "on" } else { "off" }
    );
    install_signal_handlers();
    while !STOP.load(Ordering::Relaxed) {
        if DUMP.swap(false, Ordering::Relaxed) {
            eprintln!(
                "server: handshakes {} connections {} stats {:?}",
                handle.handshakes_completed(),
                handle.connection_count(),
                handle.stats()
            );
        }
        std::thread::sleep(Duration::from_millis(100));
    }
    eprintln!(
        "server: handshakes {} stats {:?}",
        handle.handshakes_completed(),
        handle.stats()
    );
    handle.shutdown();
    Ok(())
}

fn run_model(csv: PathBuf, report: String, out: Option<PathBuf>) -> Result<(), String> {
    let text = std::fs::read_to_string(&csv).map_err(|e| format!("{}: {e}", csv.display()))?;
    let raw = text.lines().next().map_or(false, |l| l.trim() == RAW_CSV_HEADER);
    let dataset = if raw {
        read_raw_samples(text.as_bytes()).map_err(|e| e.to_string())?
    } else {
        read_triples(text.as_bytes()).map_err(|e| e.to_string())?
    };

    let mut sink = open_sink(out.as_deref())?;
    if report == "stats" {
        let stats = dataset_stats(&dataset).map_err(|e| e.to_string())?;
        let json = serde_json::to_string_pretty(&stats).expect("stats report");
        writeln!(sink, "{json}").map_err(|e| e.to_string())?;
    } else if let Some(metric) = report.strip_prefix("cdf:") {
        let points = emit_cdf(&dataset, metric).map_err(|e| e.to_string())?;
        write_cdf(&mut sink, &points).map_err(|e| e.to_string())?;
    } else {
        return Err(format!("unknown report {report:?} (stats|cdf:<metric>)"));
    }
    Ok(())
}

fn open_sink(path: Option<&std::path::Path>) -> Result<Box<dyn Write>, String> {
    match path {
        Some(p) => {
            let file = std::fs::File::create(p).map_err(|e| format!("{}: {e}", p.display()))?;
            Ok(Box::new(file))
        }
        None => Ok(Box::new(std::io::stdout())),
    }
}
