use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};

use vpki::cert::TrustStore;
use vpki::derive;
use vpki::envelope::{Clock, SystemClock};
use vpki::gateway::config::DomainConfig;
use vpki::gateway::discovery::{DomainDescriptor, LtcaDescriptor, PcaDescriptor, Registry};
use vpki::gateway::http::{self, HttpClient};
use vpki::gateway::rca::{load_identity, CaCredential, Rca};
use vpki::guard::{GuardServer, MemoryGuard, RemoteGuard, SharedGuard};
use vpki::harness::{self, RaceMode, RunMode, SimConfig};
use vpki::ltca::Ltca;
use vpki::pca::Pca;
use vpki::ra::Ra;
use vpki::records::{self, RecordStore};
use vpki::vehicle::{PcaTarget, Vehicle};

#[derive(Parser)]
#[command(
    name = "vpki",
    version,
    about = "Pseudonymous vehicular PKI services and tools"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Root CA utilities (offline).
    Rca {
        #[command(subcommand)]
        cmd: RcaCmd,
    },
    /// Run one service until killed.
    Serve {
        #[command(subcommand)]
        cmd: ServeCmd,
    },
    /// On-board unit client with a JSON state file.
    Vehicle {
        #[command(subcommand)]
        cmd: VehicleCmd,
    },
    /// Load generation and Sybil races.
    Harness {
        #[command(subcommand)]
        cmd: HarnessCmd,
    },
    /// Record file maintenance.
    Records {
        #[command(subcommand)]
        cmd: RecordsCmd,
    },
    /// Look up a domain in a registry file.
    Discover {
        #[arg(long)]
        registry: PathBuf,
        #[arg(long)]
        rca: PathBuf,
        domain: String,
    },
}

#[derive(Subcommand)]
enum RcaCmd {
    /// Create a root key and self-signed certificate.
    Init {
        #[arg(long)]
        id: String,
        #[arg(long, default_value_t = 20)]
        years: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Certify a CA: writes a credential (key + certificate) to `out`.
    Certify {
        #[arg(long)]
        rca: PathBuf,
        #[arg(long)]
        id: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a registry file describing one domain.
    Describe {
        #[arg(long)]
        domain: String,
        #[arg(long)]
        rca: PathBuf,
        /// `CREDENTIAL=URL` for the LTCA.
        #[arg(long)]
        ltca: String,
        /// `CREDENTIAL=URL`, once per PCA.
        #[arg(long)]
        pca: Vec<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(clap::Args)]
struct ServeCommon {
    #[arg(long)]
    cred: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:0")]
    listen: String,
    /// Record file; in-memory when omitted.
    #[arg(long)]
    records: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ServeCmd {
    Ltca {
        #[command(flatten)]
        common: ServeCommon,
        /// Home LTCAs whose foreign tickets are honored.
        #[arg(long)]
        peer: Vec<PathBuf>,
    },
    Pca {
        #[command(flatten)]
        common: ServeCommon,
        /// LTCAs whose tickets are honored.
        #[arg(long, required = true)]
        ltca: Vec<PathBuf>,
        /// RAs allowed to resolve.
        #[arg(long)]
        ra: Vec<PathBuf>,
    },
    Ra {
        #[arg(long)]
        cred: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:0")]
        listen: String,
        #[arg(long)]
        ltca: Vec<PathBuf>,
        /// `IDENTITY=URL`, once per PCA.
        #[arg(long)]
        pca: Vec<String>,
    },
    Guard {
        #[arg(long, default_value = "127.0.0.1:0")]
        listen: String,
    },
}

#[derive(clap::Args)]
struct StateArg {
    #[arg(long)]
    state: PathBuf,
}

#[derive(Subcommand)]
enum VehicleCmd {
    /// Create the state file if needed and obtain an LTC.
    Register {
        #[command(flatten)]
        state: StateArg,
        #[arg(long)]
        ltca: String,
        /// Identity of the home LTCA; needed when creating the state.
        #[arg(long)]
        ltca_cert: Option<PathBuf>,
    },
    /// Obtain a ticket for `[from, to)` bound to a PCA.
    Ticket {
        #[command(flatten)]
        state: StateArg,
        #[arg(long)]
        ltca: String,
        #[arg(long)]
        pca_id: String,
        #[arg(long)]
        from: Option<u64>,
        #[arg(long)]
        to: Option<u64>,
        /// Window length when `--to` is omitted.
        #[arg(long, default_value_t = 3600)]
        span: u64,
    },
    /// Spend the newest held ticket on a batch.
    Pseudonyms {
        #[command(flatten)]
        state: StateArg,
        #[arg(long)]
        pca: String,
        #[arg(long)]
        pca_cert: PathBuf,
        /// Defaults to the domain configuration.
        #[arg(long)]
        tau_p: Option<u64>,
        #[arg(long, default_value_t = 10)]
        count: usize,
    },
    /// Top up the pool so it covers a trip starting now.
    Trip {
        #[command(flatten)]
        state: StateArg,
        #[arg(long)]
        ltca: String,
        #[arg(long)]
        pca: String,
        #[arg(long)]
        pca_cert: PathBuf,
        /// Defaults to the domain configuration.
        #[arg(long)]
        tau_p: Option<u64>,
        #[arg(long)]
        duration_s: u64,
    },
}

#[derive(Subcommand)]
enum HarnessCmd {
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "report.json")]
        out: PathBuf,
    },
    Race {
        #[arg(long, default_value_t = 64)]
        k: usize,
        #[arg(long, default_value = "ticket")]
        mode: RaceMode,
        #[arg(long, default_value_t = 4)]
        replicas: usize,
        #[arg(long, default_value_t = 1)]
        seeds: u64,
    },
}

#[derive(Subcommand)]
enum RecordsCmd {
    /// Drop tickets and batches that expired before `before`.
    Purge {
        #[arg(long)]
        file: PathBuf,
        #[arg(long)]
        before: u64,
    },
    Stats {
        #[arg(long)]
        file: PathBuf,
    },
}

fn split_pair(s: &str) -> Result<(&str, &str)> {
    s.split_once('=')
        .ok_or_else(|| anyhow!("expected PATH=URL, got {s:?}"))
}

fn guard_for(cfg: &DomainConfig) -> Result<SharedGuard> {
    if cfg.guard_addr.is_empty() {
        return Ok(Arc::new(MemoryGuard::new()));
    }
    let addr: SocketAddr = cfg.guard_addr.parse().context("guard_addr")?;
    Ok(Arc::new(RemoteGuard::new(addr)))
}

fn store_for(path: Option<&Path>, cfg: &DomainConfig) -> Result<Arc<RecordStore>> {
    Ok(Arc::new(match path {
        Some(p) => RecordStore::open(p, cfg.store_options())?,
        None => RecordStore::in_memory(),
    }))
}

fn print_json(v: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn block_forever() -> ! {
    loop {
        std::thread::park();
    }
}

fn resolve_tau(tau_p: Option<u64>) -> Result<u64> {
    match tau_p {
        Some(t) => Ok(t),
        None => Ok(DomainConfig::load(None)?.tau_p),
    }
}

fn clock() -> Arc<dyn Clock> {
    Arc::new(SystemClock)
}

fn rca(cmd: RcaCmd) -> Result<()> {
    match cmd {
        RcaCmd::Init { id, years, out } => {
            let now = SystemClock.now_s();
            let root = Rca::new(&id, now.saturating_sub(86_400), now + years * 365 * 86_400)?;
            root.save(&out)?;
            println!("{}", out.display());
        }
        RcaCmd::Certify { rca, id, out } => {
            let cred = Rca::load(&rca)?.issue_credential(&id)?;
            cred.save(&out)?;
            println!("{}", out.display());
        }
        RcaCmd::Describe {
            domain,
            rca,
            ltca,
            pca,
            config,
            out,
        } => {
            let root = Rca::load(&rca)?;
            let cfg = DomainConfig::load(config.as_deref())?;
            let (ltca_path, ltca_url) = split_pair(&ltca)?;
            let ltca_id = load_identity(ltca_path)?;
            let mut pcas = Vec::new();
            for p in &pca {
                let (path, url) = split_pair(p)?;
                let id = load_identity(path)?;
                pcas.push(PcaDescriptor {
                    id: id.id,
                    endpoint: url.to_string(),
                    certificate: id.certificate,
                    tau_p: cfg.tau_p,
                    gamma: cfg.gamma,
                });
            }
            let desc = DomainDescriptor {
                domain_id: domain,
                ltca: LtcaDescriptor {
                    id: ltca_id.id,
                    endpoint: ltca_url.to_string(),
                    certificate: ltca_id.certificate,
                },
                pcas,
                epoch: 0,
            };
            let mut trust = TrustStore::new();
            trust.add_anchor(root.certificate.clone());
            let reg = if out.exists() {
                Registry::load(&out, &trust, SystemClock.now_s())?
            } else {
                Registry::new()
            };
            reg.register(desc, &trust, SystemClock.now_s())?;
            std::fs::write(&out, reg.to_toml())?;
            println!("{}", out.display());
        }
    }
    Ok(())
}

fn serve(cmd: ServeCmd) -> Result<()> {
    match cmd {
        ServeCmd::Ltca { common, peer } => {
            let cfg = DomainConfig::load(common.config.as_deref())?;
            let cred = CaCredential::load(&common.cred)?;
            let ltca = Ltca::new(
                cfg.ltca_config(&cred.identity.id),
                cred.identity,
                cred.key,
                guard_for(&cfg)?,
                store_for(common.records.as_deref(), &cfg)?,
                clock(),
            );
            for p in &peer {
                ltca.trust_peer(load_identity(p)?);
            }
            let server = http::serve_ltca(ltca, &common.listen)?;
            println!("ltca listening on {}", server.url());
            server.wait();
        }
        ServeCmd::Pca { common, ltca, ra } => {
            let cfg = DomainConfig::load(common.config.as_deref())?;
            let cred = CaCredential::load(&common.cred)?;
            let pca = Pca::new(
                cfg.pca_config(&cred.identity.id),
                cred.identity,
                cred.key,
                guard_for(&cfg)?,
                store_for(common.records.as_deref(), &cfg)?,
                clock(),
            );
            for l in &ltca {
                pca.trust_ltca(load_identity(l)?);
            }
            for r in &ra {
                pca.authorize_ra(load_identity(r)?.certificate);
            }
            let server = http::serve_pca(pca, &common.listen)?;
            println!("pca listening on {}", server.url());
            server.wait();
        }
        ServeCmd::Ra {
            cred,
            config,
            listen,
            ltca,
            pca,
        } => {
            let cfg = DomainConfig::load(config.as_deref())?;
            let cred = CaCredential::load(&cred)?;
            let ra = Arc::new(Ra::new(
                cfg.ra_config(&cred.identity.id),
                cred.identity,
                cred.key,
                clock(),
            ));
            for l in &ltca {
                ra.trust_ltca(load_identity(l)?);
            }
            for p in &pca {
                let (path, url) = split_pair(p)?;
                ra.add_pca(load_identity(path)?, Arc::new(HttpClient::new(url)));
            }
            let server = http::serve_ra(ra, &listen)?;
            println!("ra listening on {}", server.url());
            server.wait();
        }
        ServeCmd::Guard { listen } => {
            let server = GuardServer::bind(&listen, Arc::new(MemoryGuard::new()))?;
            println!("guard listening on {}", server.local_addr());
            block_forever();
        }
    }
    Ok(())
}

fn load_vehicle(path: &Path) -> Result<Vehicle> {
    Vehicle::load(path, clock()).with_context(|| format!("loading {}", path.display()))
}

fn vehicle(cmd: VehicleCmd) -> Result<()> {
    match cmd {
        VehicleCmd::Register {
            state,
            ltca,
            ltca_cert,
        } => {
            let mut v = if state.state.exists() {
                load_vehicle(&state.state)?
            } else {
                let home = load_identity(
                    ltca_cert
                        .as_ref()
                        .context("--ltca-cert is needed for a new state file")?,
                )?;
                Vehicle::new(home, TrustStore::new(), clock())
            };
            let ltc = v.register(&HttpClient::new(&ltca), None)?.clone();
            v.save(&state.state)?;
            print_json(&ltc);
        }
        VehicleCmd::Ticket {
            state,
            ltca,
            pca_id,
            from,
            to,
            span,
        } => {
            let mut v = load_vehicle(&state.state)?;
            let t_s = from.unwrap_or_else(|| SystemClock.now_s());
            let t_e = to.unwrap_or(t_s + span);
            let held = v.request_ticket(&HttpClient::new(&ltca), &pca_id, t_s, t_e)?;
            v.save(&state.state)?;
            print_json(&held.ticket);
        }
        VehicleCmd::Pseudonyms {
            state,
            pca,
            pca_cert,
            tau_p,
            count,
        } => {
            let mut v = load_vehicle(&state.state)?;
            let identity = load_identity(&pca_cert)?;
            let tau_p = resolve_tau(tau_p)?;
            let held = v
                .state
                .tickets
                .iter()
                .rev()
                .find(|t| t.target_id == identity.id)
                .cloned()
                .ok_or_else(|| anyhow!("no unspent ticket for {}", identity.id))?;
            let target = PcaTarget {
                identity: &identity,
                tau_p,
            };
            let batch = v.acquire_pseudonyms(&HttpClient::new(&pca), target, &held, count)?;
            v.save(&state.state)?;
            print_json(&serde_json::json!({
                "issued": batch.len(),
                "pool": v.pool().len(),
                "first": batch.first().map(|p| p.pseudonym.t_s),
                "last": batch.last().map(|p| p.pseudonym.t_e),
            }));
        }
        VehicleCmd::Trip {
            state,
            ltca,
            pca,
            pca_cert,
            tau_p,
            duration_s,
        } => {
            let mut v = load_vehicle(&state.state)?;
            let identity = load_identity(&pca_cert)?;
            let tau_p = resolve_tau(tau_p)?;
            let now = SystemClock.now_s();
            v.prune(now);
            let mut requested = 0;
            if v.refill_needed(now, duration_s, tau_p) {
                let covered_until = now + v.coverage(now);
                let t_s = derive::align_up(covered_until.max(now), tau_p);
                let n = (now + duration_s)
                    .saturating_sub(t_s)
                    .div_ceil(tau_p)
                    .max(2) as usize;
                let t_e = t_s + n as u64 * tau_p;
                let held = v.request_ticket(&HttpClient::new(&ltca), &identity.id, t_s, t_e)?;
                let target = PcaTarget {
                    identity: &identity,
                    tau_p,
                };
                requested = v
                    .acquire_pseudonyms(&HttpClient::new(&pca), target, &held, n)?
                    .len();
            }
            v.save(&state.state)?;
            print_json(&serde_json::json!({
                "requested": requested,
                "pool": v.pool().len(),
                "coverage_s": v.coverage(now),
            }));
        }
    }
    Ok(())
}

fn harness(cmd: HarnessCmd) -> Result<()> {
    match cmd {
        HarnessCmd::Run { config, seed, out } => {
            let cfg = harness::RunConfig::load(&config)?;
            let report = match cfg.mode {
                RunMode::Live => harness::run_in_process(&cfg, seed),
                RunMode::Sim => {
                    let mut sim =
                        SimConfig::new(cfg.load.clone(), harness::CostModel::calibrate(3));
                    sim.ltca_scale = cfg.ltca_scale;
                    sim.pca_scale = cfg.pca_scale;
                    harness::simulate(&sim, seed)
                }
            };
            report.write_all(&out)?;
            print_json(&report.summary());
        }
        HarnessCmd::Race {
            k,
            mode,
            replicas,
            seeds,
        } => {
            if k < 1 {
                bail!("--k must be at least 1");
            }
            for seed in 0..seeds {
                let o = harness::sybil_race(k, mode, replicas, seed);
                println!("{}", serde_json::to_string(&o)?);
            }
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().cmd {
        Cmd::Rca { cmd } => rca(cmd),
        Cmd::Serve { cmd } => serve(cmd),
        Cmd::Vehicle { cmd } => vehicle(cmd),
        Cmd::Harness { cmd } => harness(cmd),
        Cmd::Records { cmd } => match cmd {
            RecordsCmd::Purge { file, before } => {
                let stats = records::purge_file(&file, before)?;
                println!("{stats:?}");
                Ok(())
            }
            RecordsCmd::Stats { file } => {
                let store = RecordStore::open(&file, Default::default())?;
                println!(
                    "tickets {} batches {}",
                    store.ticket_count(),
                    store.batch_count()
                );
                Ok(())
            }
        },
        Cmd::Discover {
            registry,
            rca,
            domain,
        } => {
            let root = Rca::load(&rca)?;
            let mut trust = TrustStore::new();
            trust.add_anchor(root.certificate);
            let reg = Registry::load(&registry, &trust, SystemClock.now_s())?;
            print_json(&reg.discover(&domain)?);
            Ok(())
        }
    }
}
