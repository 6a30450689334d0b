//! Builds shards, clients and control links for a run and spawns its
//! threads.

use std::collections::BTreeMap;
use std::net::TcpListener;
use std::sync::atomic::{AtomicBool, AtomicU64};
use std::sync::{mpsc, Arc, Mutex};
use std::thread;
use std::time::Instant;

use mlps_core::protocol::Role;
use mlps_core::schedule::{count_compatible_pairs, masked_spectral_radius, PowerIterationOptions};
use mlps_core::{StalenessBound, WorkerId};

use super::monitor::Monitor;
use super::scheduler::{stream_rng, Decider, SchedulerTask, WorkerTask};
use super::{App, Diagnostics, Mode, Parallelism, RunConfig, RunError, RunHandle, Shared};
use crate::client::{LocalClient, PsClient, RemoteClient, StalenessLog};
use crate::server::ParamServer;
use crate::table::Schema;
use crate::transport::{
    expect_hello, hello, loopback_pair, new_tap, serve_connection, ChannelLink, Link, ShardEndpoint,
    Tap, TcpLink, TransportError,
};

type Task = (String, thread::JoinHandle<Result<(), RunError>>);

fn spawn<F>(
    name: String,
    shared: &Arc<Shared>,
    servers: &[Arc<ParamServer>],
    f: F,
) -> Result<Task, RunError>
where
    F: FnOnce() -> Result<(), RunError> + Send + 'static,
{
    let shared = shared.clone();
    let servers = servers.to_vec();
    let label = name.clone();
    let handle = thread::Builder::new().name(name.clone()).spawn(move || {
        let out = f();
        if let Err(e) = &out {
            shared.fail(&label, RunError::App(e.to_string()), &servers);
        }
        out
    })?;
    Ok((name, handle))
}

struct Taps {
    enabled: bool,
    taps: BTreeMap<String, Tap>,
}

impl Taps {
    fn get(&mut self, key: String) -> Option<Tap> {
        self.enabled
            .then(|| self.taps.entry(key).or_insert_with(new_tap).clone())
    }
}

fn tapped(link: ChannelLink, tap: Option<Tap>) -> ChannelLink {
    match tap {
        Some(t) => link.with_tap(t),
        None => link,
    }
}

pub(crate) fn start<A: App>(app: Arc<A>, cfg: RunConfig) -> Result<RunHandle, RunError> {
    let model_parallel = app.parallelism() == Parallelism::Model;
    let staleness = if model_parallel { 0 } else { cfg.staleness };
    let participants = cfg.workers + usize::from(model_parallel);
    let schema = Arc::new(Schema::new(app.tables(), cfg.shards));
    let servers: Vec<Arc<ParamServer>> = (0..cfg.shards)
        .map(|i| {
            Arc::new(ParamServer::new(
                i,
                schema.clone(),
                participants,
                StalenessBound(staleness),
            ))
        })
        .collect();
    let log = Arc::new(StalenessLog::default());
    let shared = Arc::new(Shared {
        stop: AtomicBool::new(false),
        abort: AtomicBool::new(false),
        failed: AtomicBool::new(false),
        failure: Mutex::new(None),
        pulls: AtomicU64::new(0),
        degrees: Mutex::new(BTreeMap::new()),
        decisions: Mutex::new(Vec::new()),
        metrics: Mutex::new(Vec::new()),
        log: log.clone(),
        start: Instant::now(),
    });

    let corr = if model_parallel {
        app.correlation_index()
    } else {
        None
    };
    let diagnostics = match (&corr, cfg.diagnostics) {
        (Some(c), true) => {
            let theta = cfg.scheduler.theta;
            match masked_spectral_radius(c, theta, &PowerIterationOptions::default()) {
                Ok(rho) => Some(Diagnostics {
                    rho,
                    pairs: count_compatible_pairs(c, theta, &mut stream_rng(cfg.seed, u64::MAX)),
                    d: c.dim(),
                }),
                Err(e) => {
                    log::warn!("spectral diagnostics skipped: {e}");
                    None
                }
            }
        }
        _ => None,
    };
    if let Some(d) = &diagnostics {
        log::info!("masked spectral radius {:.6}, compatible pairs {:.0}", d.rho, d.pairs);
    }

    let (tx, rx) = mpsc::channel();
    for s in &servers {
        let tx = tx.clone();
        s.set_hook(Box::new(move |snap| {
            let _ = tx.send(snap);
        }));
    }
    drop(tx);
    let monitor = Monitor {
        app: app.clone(),
        cfg: cfg.clone(),
        schema: schema.clone(),
        shared: shared.clone(),
        servers: servers.clone(),
        diagnostics,
        data_parallel: !model_parallel,
    };
    let monitor = thread::Builder::new()
        .name("monitor".into())
        .spawn(move || monitor.run(rx))?;

    let mut taps = Taps {
        enabled: cfg.tap,
        taps: BTreeMap::new(),
    };
    let mut threads = Vec::new();
    let mut endpoints = Vec::new();
    let mut clients: Vec<Box<dyn PsClient>> = Vec::with_capacity(participants);
    match cfg.mode {
        Mode::InProc => {
            for p in 0..participants {
                clients.push(Box::new(LocalClient::new(
                    p as WorkerId,
                    servers.clone(),
                    Some(log.clone()),
                )));
            }
        }
        Mode::Loopback => {
            for p in 0..participants {
                let mut links = Vec::new();
                for (sh, server) in servers.iter().enumerate() {
                    let (c, srv) = loopback_pair();
                    links.push(tapped(c, taps.get(format!("p{p}->s{sh}"))));
                    let mut srv = tapped(srv, taps.get(format!("s{sh}->p{p}")));
                    let server = server.clone();
                    threads.push(spawn(format!("shard{sh}-conn{p}"), &shared, &servers, move || {
                        expect_hello(&mut srv)?;
                        Ok(serve_connection(&server, srv)?)
                    })?);
                }
                clients.push(Box::new(RemoteClient::connect(
                    p as WorkerId,
                    schema.clone(),
                    links,
                    Some(log.clone()),
                )?));
            }
        }
        Mode::Dist => {
            for (sh, server) in servers.iter().enumerate() {
                let server_taps = cfg.tap.then(|| {
                    (0..participants)
                        .map(|p| taps.get(format!("s{sh}->p{p}")).expect("enabled"))
                        .collect()
                });
                endpoints.push(ShardEndpoint::spawn(server.clone(), participants, server_taps)?);
            }
            for p in 0..participants {
                let mut links = Vec::new();
                for (sh, ep) in endpoints.iter().enumerate() {
                    let mut link = TcpLink::connect(ep.addr())?;
                    if let Some(t) = taps.get(format!("p{p}->s{sh}")) {
                        link = link.with_tap(t);
                    }
                    links.push(link);
                }
                clients.push(Box::new(RemoteClient::connect(
                    p as WorkerId,
                    schema.clone(),
                    links,
                    Some(log.clone()),
                )?));
            }
        }
    }

    let mut worker_links: Vec<Option<Box<dyn Link>>> = (0..cfg.workers).map(|_| None).collect();
    let mut scheduler_links: Vec<Box<dyn Link>> = Vec::new();
    if model_parallel {
        match cfg.mode {
            Mode::InProc | Mode::Loopback => {
                for w in 0..cfg.workers {
                    let (s_end, w_end) = loopback_pair();
                    let mut w_end = tapped(w_end, taps.get(format!("w{w}->sched")));
                    let mut s_end = tapped(s_end, taps.get(format!("sched->w{w}")));
                    w_end.send(&hello(Role::Worker, w as WorkerId))?;
                    expect_hello(&mut s_end)?;
                    worker_links[w] = Some(Box::new(w_end));
                    scheduler_links.push(Box::new(s_end));
                }
            }
            Mode::Dist => {
                let listener = TcpListener::bind(("127.0.0.1", 0))?;
                let addr = listener.local_addr()?;
                for (w, slot) in worker_links.iter_mut().enumerate() {
                    let mut link = TcpLink::connect(addr)?;
                    if let Some(t) = taps.get(format!("w{w}->sched")) {
                        link = link.with_tap(t);
                    }
                    link.send(&hello(Role::Worker, w as WorkerId))?;
                    *slot = Some(Box::new(link));
                }
                let mut accepted: BTreeMap<u32, TcpLink> = BTreeMap::new();
                for _ in 0..cfg.workers {
                    let (stream, _) = listener.accept()?;
                    let mut link = TcpLink::new(stream)?;
                    let (role, id) = expect_hello(&mut link)?;
                    if role != Role::Worker || id as usize >= cfg.workers {
                        return Err(TransportError::Unexpected(format!(
                            "scheduler got hello from {role:?} {id}"
                        ))
                        .into());
                    }
                    if let Some(t) = taps.get(format!("sched->w{id}")) {
                        link = link.with_tap(t);
                    }
                    accepted.insert(id, link);
                }
                scheduler_links = accepted
                    .into_values()
                    .map(|l| Box::new(l) as Box<dyn Link>)
                    .collect();
            }
        }
    }

    let mut clients = clients.into_iter();
    let mut worker_clients: Vec<Box<dyn PsClient>> = clients.by_ref().take(cfg.workers).collect();
    if model_parallel {
        let mut aggregator = clients.next().expect("aggregator participant");
        aggregator.set_rights(crate::client::PutRights::Any);
        let task = SchedulerTask {
            app: app.clone(),
            cfg: cfg.clone(),
            decider: Decider::new(&cfg, app.model_size(), corr)?,
            links: scheduler_links,
            aggregator,
            shared: shared.clone(),
        };
        threads.push(spawn("scheduler".into(), &shared, &servers, move || task.run())?);
    }
    for (w, client) in worker_clients.drain(..).enumerate() {
        let task = WorkerTask {
            app: app.clone(),
            cfg: cfg.clone(),
            worker: w as WorkerId,
            client,
            link: worker_links[w].take(),
            shared: shared.clone(),
        };
        threads.push(spawn(format!("worker{w}"), &shared, &servers, move || task.run())?);
    }

    Ok(RunHandle {
        shared,
        servers,
        threads,
        monitor: Some(monitor),
        endpoints,
        taps: taps.taps,
        diagnostics,
    })
}
