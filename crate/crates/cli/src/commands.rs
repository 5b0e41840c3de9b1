use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, bail, Context};
use serde_json::{json, Value};

use pipekeeper_core::agents::{AgentConfig, AGENT_IDS};
use pipekeeper_core::clock::SimTime;
use pipekeeper_core::decision::{AgentProposal, DecisionStage, Verdict};
use pipekeeper_core::evaluation::{ab_compare, replay};
use pipekeeper_core::events::{Arm, EventKind};
use pipekeeper_core::ledger::{self, query, verify_chain, LedgerEntry, LedgerQuery};
use pipekeeper_core::orchestrator::{read_run_dir, write_run_dir, RunArtifacts, RunSummary, Simulation};
use pipekeeper_core::policy::{default_bundle, evaluate, load_bundle, EvaluationContext, PolicyBundle};
use pipekeeper_core::scenario::Scenario;
use pipekeeper_core::trust::TrustTier;

use crate::{api, client, Command, Format, LedgerCommand, Mode, PolicyCommand, RunArgs, ScenarioArgs, ServeArgs, SwitchState, TierCommand};

/// Like `println!`, but a closed stdout (say, piped into `head`) ends output quietly.
macro_rules! out {
    ($($t:tt)*) => { emit(format!($($t)*) + "\n") };
}

macro_rules! out_raw {
    ($($t:tt)*) => { emit(format!($($t)*)) };
}

fn emit(s: String) {
    use std::io::Write;
    let mut o = std::io::stdout().lock();
    if let Err(e) = o.write_all(s.as_bytes()).and_then(|_| o.flush()) {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
    }
}

pub fn dispatch(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Run(a) => run(a),
        Command::Serve(a) => serve(a),
        Command::Report { run_dir, format } => report(&run_dir, format),
        Command::Replay { ledger, bundle, agents } => replay_cmd(&ledger, bundle.as_deref(), agents.as_deref()),
        Command::Ab { baseline, augmented, format } => ab(&baseline, &augmented, format),
        Command::Ledger(LedgerCommand::Verify { ledger }) => verify(&ledger),
        Command::Ledger(LedgerCommand::Query {
            ledger,
            stage,
            outcome,
            overridden,
            agent,
            trace,
            from,
            until,
            decisions_only,
        }) => {
            let q = LedgerQuery {
                stage: stage.map(|s| s.parse::<DecisionStage>().map_err(|e| anyhow!("{e}"))).transpose()?,
                from: iso(from.as_deref())?,
                until: iso(until.as_deref())?,
                policy_outcome: outcome.map(|s| s.to_ascii_uppercase().parse::<Verdict>().map_err(|e| anyhow!("{e}"))).transpose()?,
                human_overridden: overridden,
                agent_id: agent,
                trace_id: trace,
                decisions_only,
            };
            for e in query(&load_ledger(&ledger)?, &q) {
                out!("{}", e.to_line()?);
            }
            Ok(())
        }
        Command::Policy(PolicyCommand::Check { bundle }) => {
            let b = bundle_arg(bundle.as_deref())?;
            out!("{}", serde_json::to_string_pretty(&json!({"version": b.version, "digest": b.digest, "valid": true}))?);
            Ok(())
        }
        Command::Policy(PolicyCommand::Eval { proposal, context, bundle }) => {
            let b = bundle_arg(bundle.as_deref())?;
            let p: AgentProposal = read_json(&proposal)?;
            let ctx: EvaluationContext = read_json(&context)?;
            let outcome = evaluate(&p, &ctx, &b)?;
            out!("{}", serde_json::to_string_pretty(&outcome)?);
            Ok(())
        }
        Command::Tier(TierCommand::Show { run_dir: Some(dir), .. }) => {
            out!("{}", serde_json::to_string_pretty(&tiers_of_run(&dir)?)?);
            Ok(())
        }
        Command::Tier(TierCommand::Show { run_dir: None, remote }) => {
            out!("{}", serde_json::to_string_pretty(&client::get(&remote.url, "/tier")?)?);
            Ok(())
        }
        Command::Killswitch { state, remote, operator } => {
            let action = match state {
                SwitchState::Engage => "engage",
                SwitchState::Release => "release",
            };
            let v = client::post(&remote.url, "/killswitch", &json!({"action": action, "operator_id": operator}))?;
            out!("{}", serde_json::to_string_pretty(&v)?);
            Ok(())
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn iso(s: Option<&str>) -> anyhow::Result<Option<SimTime>> {
    s.map(|v| SimTime::parse_iso8601(v).ok_or_else(|| anyhow!("`{v}` is not an ISO-8601 time")))
        .transpose()
}

fn bundle_arg(path: Option<&Path>) -> anyhow::Result<PolicyBundle> {
    match path {
        None => Ok(default_bundle()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            load_bundle(&text).with_context(|| format!("loading bundle {}", p.display()))
        }
    }
}

fn scenario_arg(a: &ScenarioArgs) -> anyhow::Result<Scenario> {
    let mut sc = if a.scenario == "canonical" {
        Scenario::canonical()
    } else {
        Scenario::load(Path::new(&a.scenario)).with_context(|| format!("loading scenario {}", a.scenario))?
    };
    if let Some(seed) = a.seed {
        sc.seed = seed;
    }
    Ok(sc)
}

fn arms(mode: Mode) -> Vec<Arm> {
    match mode {
        Mode::Baseline => vec![Arm::Baseline],
        Mode::Augmented => vec![Arm::Augmented],
        Mode::Both => vec![Arm::Baseline, Arm::Augmented],
    }
}

/// `{name}-seed{seed}-{arm}`
pub fn run_dir_name(sc: &Scenario, arm: Arm) -> String {
    format!("{}-seed{}-{}", sc.name, sc.seed, arm.as_str())
}

fn write_run(dir: &Path, a: &RunArtifacts, sc: &Scenario, bundle: &PolicyBundle) -> anyhow::Result<()> {
    write_run_dir(dir, a)?;
    std::fs::write(dir.join("scenario.toml"), sc.to_toml())?;
    std::fs::write(dir.join("bundle.toml"), bundle.to_toml())?;
    Ok(())
}

fn run(a: RunArgs) -> anyhow::Result<()> {
    let sc = scenario_arg(&a.scenario)?;
    let bundle = bundle_arg(a.scenario.bundle.as_deref())?;
    let results: Vec<anyhow::Result<RunArtifacts>> = std::thread::scope(|s| {
        let handles: Vec<_> = arms(a.mode)
            .into_iter()
            .map(|arm| {
                let (sc, bundle) = (sc.clone(), bundle.clone());
                s.spawn(move || Ok(Simulation::new(sc, arm, bundle)?.run()?))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("simulation thread panicked")).collect()
    });
    for r in results {
        let art = r?;
        let dir = a.out.join(run_dir_name(&sc, art.summary.arm));
        write_run(&dir, &art, &sc, &bundle)?;
        out!("{}", dir.display());
    }
    Ok(())
}

fn report(dir: &Path, format: Format) -> anyhow::Result<()> {
    let art = read_run_dir(dir)?;
    verify_or_fail(&art.ledger)?;
    let (dora, ai) = art.recompute()?;
    if dora != art.summary.dora || ai != art.summary.ai {
        bail!("metrics recomputed from {} do not match summary.json", dir.display());
    }
    match format {
        Format::Json => out!("{}", serde_json::to_string_pretty(&art.summary)?),
        Format::MarkdownTable => out_raw!("{}", summary_markdown(&art.summary)),
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>, scale: f64, digits: usize) -> String {
    v.map_or("n/a".into(), |x| format!("{:.*}", digits, x * scale))
}

fn summary_markdown(s: &RunSummary) -> String {
    let d = &s.dora;
    let ai = &s.ai;
    let rows = [
        ("Lead time, mean (h)", fmt_opt(d.lead_time_min.as_ref().map(|x| x.mean), 1.0 / 60.0, 2)),
        ("Lead time, median (h)", fmt_opt(d.lead_time_min.as_ref().map(|x| x.median), 1.0 / 60.0, 2)),
        ("Deployments per day", fmt_opt(d.deployment_frequency_per_day, 1.0, 2)),
        ("Change failure rate (%)", fmt_opt(d.change_failure_rate, 100.0, 1)),
        ("MTTR, mean (min)", fmt_opt(d.mttr_min.as_ref().map(|x| x.mean), 1.0, 2)),
        ("Intervention accuracy (%)", fmt_opt(ai.intervention_accuracy, 100.0, 1)),
        ("Human override rate (%)", fmt_opt(ai.human_override_rate, 100.0, 1)),
        ("False positive rate (%)", fmt_opt(ai.false_positive_rate, 100.0, 1)),
        ("False negative rate (%)", fmt_opt(ai.false_negative_rate, 100.0, 1)),
        ("Policy violations blocked", ai.policy_violations_blocked.to_string()),
        ("Decision wait per deployment (min)", fmt_opt(ai.decision_wait_per_deployment_min, 1.0, 2)),
    ];
    let mut out = format!("Run `{}` seed {} ({})\n\n| Metric | Value |\n|---|---|\n", s.scenario, s.seed, s.arm.as_str());
    for (k, v) in rows {
        out.push_str(&format!("| {k} | {v} |\n"));
    }
    out
}

/// A ledger path may be a run directory holding `ledger.jsonl`.
fn ledger_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join("ledger.jsonl")
    } else {
        p.to_path_buf()
    }
}

fn load_ledger(p: &Path) -> anyhow::Result<Vec<LedgerEntry>> {
    let path = ledger_path(p);
    ledger::read_export(&path).with_context(|| format!("reading ledger {}", path.display()))
}

fn verify_or_fail(entries: &[LedgerEntry]) -> anyhow::Result<()> {
    verify_chain(entries).map_err(|b| anyhow!("chain broken at sequence {} ({:?})", b.index, b.reason))
}

fn verify(p: &Path) -> anyhow::Result<()> {
    let entries = load_ledger(p)?;
    verify_or_fail(&entries)?;
    let head = entries.last().map_or("genesis".into(), hex_head);
    out!("ok: {} entries, head {head}", entries.len());
    Ok(())
}

fn hex_head(e: &LedgerEntry) -> String {
    e.entry_hash.iter().map(|b| format!("{b:02x}")).collect()
}

fn replay_cmd(p: &Path, bundle: Option<&Path>, agents: Option<&str>) -> anyhow::Result<()> {
    let entries = load_ledger(p)?;
    verify_or_fail(&entries)?;
    let run_bundle = p.is_dir().then(|| p.join("bundle.toml")).filter(|b| b.exists());
    let b = bundle_arg(bundle.or(run_bundle.as_deref()))?;
    let cfg = match agents {
        None => AgentConfig::default(),
        Some(a) if Path::new(a).is_file() => {
            let text = std::fs::read_to_string(a)?;
            toml_agent(&text).with_context(|| format!("parsing agent config {a}"))?
        }
        Some(version) => AgentConfig {
            version: version.to_string(),
            ..AgentConfig::default()
        },
    };
    let r = replay(&entries, &cfg, &b)?;
    out!("{}", serde_json::to_string_pretty(&r)?);
    Ok(())
}

fn toml_agent(text: &str) -> anyhow::Result<AgentConfig> {
    let sc = Scenario::parse(&format!("[agents]\n{text}")).ok();
    match sc {
        Some(sc) => Ok(sc.agents),
        None => bail!("expected agent constants such as `version = \"...\"`"),
    }
}

fn ab(baseline: &Path, augmented: &Path, format: Format) -> anyhow::Result<()> {
    let b = read_run_dir(baseline)?;
    let a = read_run_dir(augmented)?;
    let r = ab_compare(&b.summary, &a.summary)?;
    match format {
        Format::Json => out!("{}", serde_json::to_string_pretty(&r)?),
        Format::MarkdownTable => out_raw!("{}", r.to_markdown()),
    }
    Ok(())
}

/// Final tiers of a finished run, rebuilt from its scenario and event log.
fn tiers_of_run(dir: &Path) -> anyhow::Result<Value> {
    let sc = Scenario::load(&dir.join("scenario.toml")).context("run directory has no readable scenario.toml")?;
    let art = read_run_dir(dir)?;
    let mut tiers: BTreeMap<&str, TrustTier> = AGENT_IDS.iter().map(|id| (*id, sc.trust.initial(id))).collect();
    let mut engaged = false;
    for e in &art.events {
        match &e.kind {
            EventKind::TierChange { agent_id, to, .. } => {
                if let Some(t) = tiers.get_mut(agent_id.as_str()) {
                    *t = *to;
                }
            }
            EventKind::KillSwitch { engaged: on, .. } => engaged = *on,
            _ => {}
        }
    }
    let agents: Vec<Value> = tiers
        .into_iter()
        .map(|(id, t)| json!({"agent_id": id, "tier": t, "effective_tier": if engaged { TrustTier::T0 } else { t }}))
        .collect();
    Ok(json!({"arm": art.summary.arm, "ended_at": art.summary.ended_at, "kill_switch_engaged": engaged, "agents": agents}))
}

fn serve(a: ServeArgs) -> anyhow::Result<()> {
    let token = std::env::var(api::TOKEN_ENV).with_context(|| format!("{} must be set to serve the API", api::TOKEN_ENV))?;
    if token.is_empty() {
        bail!("{} must not be empty", api::TOKEN_ENV);
    }
    let arm = match a.mode {
        Mode::Augmented => Arm::Augmented,
        Mode::Baseline => Arm::Baseline,
        Mode::Both => bail!("serve runs one arm; pick --mode augmented or baseline"),
    };
    if !(a.realtime_factor >= 0.0 && a.realtime_factor.is_finite()) {
        bail!("--realtime-factor must be a non-negative number");
    }
    let sc = scenario_arg(&a.scenario)?;
    let bundle = bundle_arg(a.scenario.bundle.as_deref())?;
    let sim = Simulation::new(sc.clone(), arm, bundle.clone())?;
    let state = api::AppState::new(sim, token);
    // One tick is one simulated minute.
    let interval = if a.realtime_factor == 0.0 {
        Duration::ZERO
    } else {
        Duration::from_secs_f64(60.0 / a.realtime_factor)
    };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let addr = format!("{}:{}", a.bind, a.port);
        let listener = tokio::net::TcpListener::bind(&addr).await.with_context(|| format!("binding {addr}"))?;
        eprintln!("pipekeeper serving {} ({}) on http://{addr}", sc.name, arm.as_str());
        let driver = {
            let state = state.clone();
            let out = a.out.clone();
            let (sc, bundle) = (sc.clone(), bundle.clone());
            tokio::spawn(async move {
                let res: anyhow::Result<()> = async {
                api::drive(state.clone(), interval).await?;
                eprintln!("run finished");
                if let Some(out) = out {
                    let art = state.with_sim(|sim| sim.artifacts())?;
                    let dir = out.join(run_dir_name(&sc, arm));
                    write_run(&dir, &art, &sc, &bundle)?;
                    eprintln!("wrote {}", dir.display());
                }
                Ok(())
                }
                .await;
                if let Err(e) = res {
                    eprintln!("error: {e:#}");
                }
            })
        };
        let server = axum::serve(listener, api::router(state)).with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        });
        server.await?;
        driver.abort();
        anyhow::Ok(())
    })
}
