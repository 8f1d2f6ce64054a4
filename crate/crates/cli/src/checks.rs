//! Acceptance checks shared by `selfcheck` and the acceptance test target.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use pact_core::domain::{validate_history_record, HistoryRecord, HOURS_PER_DAY};
use pact_core::memory::{cosine, embed, record_digest, MemoryStore, RetrievalQuery};
use pact_core::metrics::{clarification_utility, rollout_utility, scored_days};
use pact_core::policy::{
    decide, gae_advantages, ppo_gradient, ppo_objective, rl_reward, AskFeatures, DecideMode,
    LinearAskPolicy, PolicyKind, RlConfig, Transition, N_FEATURES,
};
use pact_core::protocols::{run_proactive_cot, run_tot, run_uot, AskChoice, StubReasoner, StubScript};
use pact_core::rollout::{
    run_setting, Agent, AgentConfig, RolloutOptions, RolloutTrace, SettingId, SettingSpec, StrategyKind,
};
use pact_core::domain::ClarifyTarget;
use pact_core::world::{stream, CollabConfig, CollabType};
use rand::Rng;

use crate::commands::{cmd_run, cmd_sweep};
use crate::config::POLICY_NAMES;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    pub fn line(&self) -> String {
        format!(
            "[{}] {} {}: {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckOptions {
    pub behavior_seeds: u64,
    pub noise_seeds: u64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            behavior_seeds: 20,
            noise_seeds: 10,
        }
    }
}

/// A record stream to audit for loop fidelity, grouped by day.
struct Audited {
    label: String,
    records: Vec<HistoryRecord>,
    budget: u32,
    days: u32,
}

fn audited(trace: &RolloutTrace, budget: u32) -> Audited {
    Audited {
        label: format!("{} {} seed {}", trace.strategy, trace.setting.setting_id.short(), trace.master_seed),
        records: trace.records().cloned().collect(),
        budget,
        days: trace.days.len() as u32,
    }
}

fn rollout(kind: StrategyKind, spec: &SettingSpec, cfg: AgentConfig, seed: u64, eval_days: u32) -> RolloutTrace {
    let agent = Agent::new(kind, cfg).expect("valid agent config");
    run_setting(
        spec,
        agent,
        seed,
        &RolloutOptions {
            eval_days,
            ..RolloutOptions::default()
        },
    )
    .expect("rollout succeeds")
    .0
}

pub fn metric_identities() -> CheckResult {
    let mut rng = stream(1, &[]);
    let (mut bad, mut worst, mut ties) = (Vec::new(), 0.0f64, 0);
    for i in 0..1000 {
        let t = rng.gen_range(1..=40);
        let binary = rng.gen_bool(0.5);
        let mut scores: Vec<f64> = (0..t)
            .map(|_| if binary { f64::from(u8::from(rng.gen_bool(0.5))) } else { rng.gen_range(0.0..=1.0) })
            .collect();
        if scores.iter().sum::<f64>() == 0.0 {
            scores[0] = 1.0;
        }
        let asks: Vec<u32> = (0..t).map(|_| rng.gen_range(0..=2)).collect();
        let u = clarification_utility(&scores, &asks).expect("non-empty");
        worst = worst.max((u.utility * (1.0 + u.ask_rate) - u.acc).abs());
        if !(0.0..=1.0).contains(&u.utility) {
            bad.push(format!("#{i} U out of range"));
        }
        let u0 = clarification_utility(&scores, &vec![0; t]).expect("non-empty");
        if u0.utility != u0.acc {
            bad.push(format!("#{i} K=0 but U != Acc"));
        }
        let mut more = asks.clone();
        more[rng.gen_range(0..t)] += 1;
        if clarification_utility(&scores, &more).expect("non-empty").utility >= u.utility {
            bad.push(format!("#{i} extra question did not lower U"));
        }
        let t2 = rng.gen_range(1..=40);
        let s2: Vec<f64> = (0..t2).map(|_| rng.gen_range(0.0..=1.0)).collect();
        let q2: Vec<u32> = (0..t2).map(|_| rng.gen_range(0..=2)).collect();
        let b = clarification_utility(&s2, &q2).expect("non-empty");
        if (b.utility - u.utility).abs() <= 1e-12 {
            ties += 1;
            continue;
        }
        let rhs = b.acc > u.acc * (1.0 + b.ask_rate) / (1.0 + u.ask_rate);
        if (b.utility > u.utility) != rhs {
            bad.push(format!("#{i} comparison inequality disagrees"));
        }
    }
    let passed = bad.is_empty() && worst <= 1e-12;
    CheckResult {
        id: 1,
        name: "metric identities",
        passed,
        detail: format!(
            "1000 fragments, max |U(1+r)-Acc| = {worst:.1e}, {ties} numerically tied pairs skipped, {} violations{}",
            bad.len(),
            bad.first().map(|b| format!(" (first: {b})")).unwrap_or_default()
        ),
    }
}

pub fn reward_table() -> CheckResult {
    let mut bad = Vec::new();
    for c in [0.1, 0.2, 0.5] {
        let cases = [
            ((false, false), 1.0),
            ((true, true), 1.0 - c),
            ((false, true), -1.0),
            ((true, false), -c),
        ];
        for ((asked, needed), want) in cases {
            match rl_reward(asked, needed, c) {
                Ok(r) if (r - want).abs() <= 1e-15 => {}
                other => bad.push(format!("c={c} asked={asked} needed={needed}: {other:?}")),
            }
        }
    }
    let mut rng = stream(2, &[]);
    for _ in 0..100 {
        let c: f64 = rng.gen_range(1e-6..1.0 - 1e-6);
        let r = |a, n| rl_reward(a, n, c).expect("c in (0,1)");
        let (tp, tn, fp, fneg) = (r(true, true), r(false, false), r(true, false), r(false, true));
        if !(tn > tp && tp > fp && fp > fneg) {
            bad.push(format!("ordering fails at c={c}"));
        }
    }
    CheckResult {
        id: 2,
        name: "reward table",
        passed: bad.is_empty(),
        detail: match bad.first() {
            None => "12 table cases + 100 sampled costs, 0 violations".into(),
            Some(first) => format!("12 table cases + 100 sampled costs, {} violations, first {first:?}", bad.len()),
        },
    }
}

fn plain_features() -> AskFeatures {
    AskFeatures {
        top_score: 0.5,
        margin: 0.1,
        set_size: 3,
        budget_fraction: 1.0,
        hour_norm: 0.0,
        day_index_norm: 0.0,
        history_size_norm: 0.0,
        target_is_task: false,
        collab_type2: true,
    }
}

pub fn l2d_oracle() -> CheckResult {
    let f = plain_features();
    let mut rng = stream(3, &[]);
    let (mut checked, mut mismatches, mut boundary) = (0, 0, 0);
    for c_err in [1.0, 2.0] {
        for ri in 1..=19 {
            let ratio = f64::from(ri) * 0.05;
            let c_ask = ratio * c_err;
            for pi in 0..=100 {
                let p_err = f64::from(pi) * 0.01;
                if (p_err - ratio).abs() < 1e-9 {
                    boundary += 1;
                    continue;
                }
                let mut policy = LinearAskPolicy::new(PolicyKind::L2d { c_ask, c_err });
                policy.weights[N_FEATURES - 1] = (p_err / (1.0 - p_err)).ln();
                let rule = decide(&policy, ClarifyTarget::Intent, &f, 1, DecideMode::Eval, &mut rng).ask;
                let brute = c_ask < c_err * p_err;
                checked += 1;
                mismatches += usize::from(rule != brute);
            }
        }
    }
    CheckResult {
        id: 3,
        name: "L2D oracle equivalence",
        passed: mismatches == 0,
        detail: format!("{checked} grid points (c_err in {{1,2}}), {mismatches} mismatches, {boundary} boundary points excluded"),
    }
}

pub fn call_accounting() -> CheckResult {
    let digest = "time: day 0 09:00\ntarget: intent\ncandidates: 3:0.4000 5:0.3500\nmargin: 0.0500\nask_count: 0 budget: 6\nhistory: 0 records; recent confirmed: none";
    let count = |n: Result<pact_core::protocols::ProtocolOutcome, _>| n.map(|o| o.calls.count()).unwrap_or(usize::MAX);
    let pcot = count(run_proactive_cot(&mut StubReasoner::new(), digest, 2));
    let tot = count(run_tot(&mut StubReasoner::new(), digest, 2, 2));
    let uot = count(run_uot(&mut StubReasoner::new(), digest, 2));
    let mut reducing = StubReasoner::scripted(StubScript {
        reduce_on_turn: Some((0, AskChoice::Ask)),
        ..StubScript::default()
    });
    let uot_early = count(run_uot(&mut reducing, digest, 2));
    CheckResult {
        id: 4,
        name: "call accounting",
        passed: pcot == 5 && tot == 13 && uot == 19 && uot_early < 19,
        detail: format!("ProactiveCoT T=2: {pcot} (want 5), ToT D=2 B=2: {tot} (want 13), UoT T=2: {uot} (want 19), UoT reducing: {uot_early} (want < 19)"),
    }
}

fn random_batch(rng: &mut impl Rng, policy: &LinearAskPolicy, zero_advantage: bool) -> Vec<Transition> {
    (0..rng.gen_range(4..=16))
        .map(|_| {
            let features = AskFeatures {
                top_score: rng.gen_range(0.0..1.0),
                margin: rng.gen_range(0.0..1.0),
                set_size: rng.gen_range(1..=5),
                budget_fraction: rng.gen_range(0.0..=1.0),
                hour_norm: rng.gen_range(0.0..=1.0),
                day_index_norm: rng.gen_range(0.0..1.0),
                history_size_norm: rng.gen_range(0.0..1.0),
                target_is_task: rng.gen_bool(0.5),
                collab_type2: rng.gen_bool(0.5),
            };
            let action = rng.gen_bool(0.5);
            Transition {
                old_log_prob: policy.log_prob(&features, action) + rng.gen_range(-0.6..0.6),
                features,
                action,
                advantage: if zero_advantage { 0.0 } else { rng.gen_range(-2.0..2.0) },
                ret: rng.gen_range(-2.0..2.0),
            }
        })
        .collect()
}

fn fd(policy: &LinearAskPolicy, batch: &[Transition], cfg: &RlConfig, value: bool, k: usize) -> f64 {
    let h = 1e-6;
    let (mut plus, mut minus) = (policy.clone(), policy.clone());
    let (p, m) = if value {
        (&mut plus.value_weights[k], &mut minus.value_weights[k])
    } else {
        (&mut plus.weights[k], &mut minus.weights[k])
    };
    *p += h;
    *m -= h;
    (ppo_objective(&plus, batch, cfg) - ppo_objective(&minus, batch, cfg)) / (2.0 * h)
}

pub fn numerical_checks() -> CheckResult {
    let mut rng = stream(5, &[]);
    let base = RlConfig::default();
    let parts = [
        ("surrogate", RlConfig { entropy_coef: 0.0, value_coef: 0.0, ..base }, false, false),
        ("entropy", RlConfig { entropy_coef: 0.05, value_coef: 0.0, ..base }, true, false),
        ("value", RlConfig { entropy_coef: 0.0, value_coef: 0.5, ..base }, false, true),
    ];
    let mut worst = [0.0f64; 3];
    for _ in 0..50 {
        let mut policy = LinearAskPolicy::new(PolicyKind::Rl);
        for k in 0..N_FEATURES {
            policy.weights[k] = rng.gen_range(-1.0..1.0);
            policy.value_weights[k] = rng.gen_range(-1.0..1.0);
        }
        for (i, (_, cfg, zero_adv, value)) in parts.iter().enumerate() {
            let batch = random_batch(&mut rng, &policy, *zero_adv);
            let (gw, gv) = ppo_gradient(&policy, &batch, cfg);
            for k in 0..N_FEATURES {
                let analytic = if *value { gv[k] } else { gw[k] };
                let numeric = fd(&policy, &batch, cfg, *value, k);
                worst[i] = worst[i].max((analytic - numeric).abs() / numeric.abs().max(1.0));
            }
        }
    }
    let mut gae_worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(1..=30);
        let rewards: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let gamma = rng.gen_range(0.5..1.0);
        let lambda = rng.gen_range(0.0..=1.0);
        let (adv, ret) = gae_advantages(&rewards, &values, gamma, lambda).expect("valid GAE input");
        let delta = |t: usize| rewards[t] + gamma * values.get(t + 1).copied().unwrap_or(0.0) - values[t];
        for t in 0..n {
            let explicit: f64 = (t..n).map(|l| (gamma * lambda).powi((l - t) as i32) * delta(l)).sum();
            gae_worst = gae_worst.max((adv[t] - explicit).abs()).max((ret[t] - (explicit + values[t])).abs());
        }
    }
    let passed = worst.iter().all(|w| *w < 1e-5) && gae_worst <= 1e-10;
    CheckResult {
        id: 5,
        name: "numerical optimization",
        passed,
        detail: format!(
            "50 batches: max rel err surrogate {:.1e}, entropy {:.1e}, value {:.1e} (tol 1e-5); GAE 100 instances max err {gae_worst:.1e} (tol 1e-10)",
            worst[0], worst[1], worst[2]
        ),
    }
}

struct Behavior {
    acc: f64,
    utility: f64,
    ask_rate: f64,
}

const EVAL_DAYS: u32 = 2;

fn behavior(kind: StrategyKind, collab: CollabConfig, seeds: u64, audit: &mut Vec<Audited>) -> Behavior {
    let spec = SettingSpec::standard(SettingId::S1SameHumanSameScene, collab);
    let cfg = AgentConfig::default();
    let (mut acc, mut utility, mut ask_rate) = (0.0, 0.0, 0.0);
    for seed in 0..seeds {
        let trace = rollout(kind, &spec, cfg, seed, EVAL_DAYS);
        let eval: Vec<_> = scored_days(&trace).into_iter().filter(|d| d.day_index >= spec.num_days).collect();
        let u = rollout_utility(&eval).expect("eval days are non-empty");
        acc += u.acc;
        utility += u.utility;
        ask_rate += u.ask_rate;
        audit.push(audited(&trace, cfg.daily_budget));
    }
    let n = seeds as f64;
    Behavior {
        acc: acc / n,
        utility: utility / n,
        ask_rate: ask_rate / n,
    }
}

fn behavioral_ordering(opts: &CheckOptions, audit: &mut Vec<Audited>) -> CheckResult {
    let high = CollabConfig::high_noise(CollabType::Type2);
    let low = CollabConfig::low_noise(CollabType::Type2);
    let n = opts.behavior_seeds;
    let never = behavior(StrategyKind::Never, high, n, audit);
    let always = behavior(StrategyKind::Always, high, n, audit);
    let l2d = behavior(StrategyKind::L2d, high, n, audit);
    let rl = behavior(StrategyKind::Rl, high, n, audit);
    let rl_high = behavior(StrategyKind::Rl, high, opts.noise_seeds, audit);
    let rl_low = behavior(StrategyKind::Rl, low, opts.noise_seeds, audit);
    let a = always.acc - never.acc >= 0.2;
    let floor = always.utility.max(never.utility);
    let b = l2d.utility > floor && rl.utility > floor;
    let c = rl_high.ask_rate - rl_low.ask_rate >= 0.1;
    CheckResult {
        id: 6,
        name: "behavioral ordering",
        passed: a && b && c && n >= 20,
        detail: format!(
            "type-2 S1 sigma {} over {n} seeds, eval days after training: \
             (a) task acc always {:.3} - never {:.3} = {:.3} (>= 0.2) {}; \
             (b) U l2d {:.3}, rl {:.3} vs always {:.3}, never {:.3} {}; \
             (c) rl ask rate high {:.3} - low {:.3} = {:.3} (>= 0.1, {} seeds) {}",
            high.observation_noise_sigma,
            always.acc, never.acc, always.acc - never.acc, ok(a),
            l2d.utility, rl.utility, always.utility, never.utility, ok(b),
            rl_high.ask_rate, rl_low.ask_rate, rl_high.ask_rate - rl_low.ask_rate, opts.noise_seeds, ok(c),
        ),
    }
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "FAILED"
    }
}

/// Budget safety, clarification dominance and history completeness.
fn fidelity_violations(a: &Audited) -> Vec<String> {
    let mut out = Vec::new();
    let steps = usize::from(HOURS_PER_DAY);
    if a.records.len() != a.days as usize * steps {
        out.push(format!("{}: {} records for {} days", a.label, a.records.len(), a.days));
    }
    for (day, chunk) in a.records.chunks(steps).enumerate() {
        let mut budget = a.budget;
        let mut asks = 0;
        for (hour, r) in chunk.iter().enumerate() {
            let ts = &r.state_digest.timestamp;
            if ts.day_index != day as u32 || usize::from(ts.hour_slot) != hour {
                out.push(format!("{}: step out of order at day {day} hour {hour}", a.label));
            }
            for v in validate_history_record(r) {
                out.push(format!("{}: day {day} hour {hour}: {}", a.label, v.0));
            }
            for d in [&r.ask_intent, &r.ask_task] {
                if d.budget_before != budget {
                    out.push(format!("{}: day {day} hour {hour}: budget_before {} but {budget} remain", a.label, d.budget_before));
                }
                if budget == 0 && d.ask {
                    out.push(format!("{}: day {day} hour {hour}: asked with no budget", a.label));
                }
                if d.ask {
                    budget = budget.saturating_sub(1);
                    asks += 1;
                }
            }
            if r.ask_intent.ask && r.ask_task.ask && !(r.outcome.intent_correct && r.outcome.task_correct) {
                out.push(format!("{}: day {day} hour {hour}: both asked yet not fully correct", a.label));
            }
        }
        if asks > a.budget {
            out.push(format!("{}: day {day} spent {asks} > {}", a.label, a.budget));
        }
    }
    out
}

fn loop_fidelity(audit: &[Audited]) -> CheckResult {
    let violations: Vec<String> = audit.iter().flat_map(fidelity_violations).collect();
    let records: usize = audit.iter().map(|a| a.records.len()).sum();
    CheckResult {
        id: 7,
        name: "protocol-loop fidelity",
        passed: violations.is_empty() && !audit.is_empty(),
        detail: format!(
            "{} traces, {records} records audited, {} violations{}",
            audit.len(),
            violations.len(),
            violations.first().map(|v| format!(" (first: {v})")).unwrap_or_default()
        ),
    }
}

/// Every policy in every setting with a tight budget, so exhaustion occurs.
fn coverage_traces(audit: &mut Vec<Audited>) {
    for (i, name) in POLICY_NAMES.iter().enumerate() {
        let kind = StrategyKind::parse(name, 0.3).expect("listed name parses");
        for id in [
            SettingId::S1SameHumanSameScene,
            SettingId::S2SameHumanDiffScene,
            SettingId::S3DiffHumanSameScene,
            SettingId::S4DiffHumanDiffScene,
        ] {
            let collab = if i % 2 == 0 { CollabType::Type1 } else { CollabType::Type2 };
            let spec = SettingSpec::standard(id, CollabConfig::high_noise(collab));
            let cfg = AgentConfig {
                daily_budget: 3,
                ..AgentConfig::default()
            };
            let trace = rollout(kind, &spec, cfg, 100 + i as u64, 1);
            audit.push(audited(&trace, cfg.daily_budget));
        }
    }
}

fn dir_bytes(dir: &Path, suffixes: &[&str]) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for e in fs::read_dir(dir).into_iter().flatten().flatten() {
        let name = e.file_name().to_string_lossy().into_owned();
        if suffixes.iter().any(|s| name.ends_with(s)) {
            out.insert(name, fs::read(e.path()).unwrap_or_default());
        }
    }
    out
}

fn determinism(audit: &mut Vec<Audited>) -> CheckResult {
    let result = (|| -> Result<(bool, bool, usize, usize), String> {
        let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
        let cfg_path = tmp.path().join("run.toml");
        fs::write(
            &cfg_path,
            "[world]\ncollab_type = \"type1\"\n\n[policy]\nname = \"rl\"\nnames = [\"never\", \"always\", \"l2d\", \"rl\", \"uot\"]\n\n[rollout]\nsetting = \"S3\"\nsettings = [\"S1\", \"S3\"]\nseeds = 2\n",
        )
        .map_err(|e| e.to_string())?;
        let (r1, r2) = (tmp.path().join("run1"), tmp.path().join("run2"));
        cmd_run(&cfg_path, Some(&r1), 0).map_err(|e| e.to_string())?;
        cmd_run(&cfg_path, Some(&r2), 0).map_err(|e| e.to_string())?;
        let traces = [".trace.jsonl", ".truth.jsonl", ".manifest.json"];
        let (a, b) = (dir_bytes(&r1, &traces), dir_bytes(&r2, &traces));
        let runs_equal = !a.is_empty() && a == b;

        let (s1, s4) = (tmp.path().join("serial"), tmp.path().join("parallel"));
        cmd_sweep(&cfg_path, Some(&s1), 1, 0).map_err(|e| e.to_string())?;
        cmd_sweep(&cfg_path, Some(&s4), 4, 0).map_err(|e| e.to_string())?;
        let csvs = [".csv"];
        let (c1, c4) = (dir_bytes(&s1, &csvs), dir_bytes(&s4, &csvs));
        let sweeps_equal = c1.len() >= 3 && c1 == c4;

        for dir in [&r1, &s1, &s4] {
            for m in crate::store::list_manifests(dir).map_err(|e| e.to_string())? {
                let cell = crate::store::load_cell(&m).map_err(|e| e.to_string())?;
                audit.push(Audited {
                    label: cell.manifest.cell.clone(),
                    records: cell.records,
                    budget: cell.manifest.daily_budget,
                    days: cell.manifest.num_days + cell.manifest.eval_days,
                });
            }
        }
        Ok((runs_equal, sweeps_equal, a.len(), c1.len()))
    })();
    match result {
        Ok((runs, sweeps, files, csvs)) => CheckResult {
            id: 8,
            name: "determinism",
            passed: runs && sweeps,
            detail: format!(
                "repeated run: {files} trace/truth/manifest files {}; sweep 1 vs 4 workers: {csvs} CSVs {}",
                if runs { "byte-identical" } else { "DIFFER" },
                if sweeps { "byte-identical" } else { "DIFFER" }
            ),
        },
        Err(e) => CheckResult {
            id: 8,
            name: "determinism",
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

fn retrieval_oracle(audit: &[Audited]) -> CheckResult {
    let pool: Vec<&HistoryRecord> = audit.iter().flat_map(|a| &a.records).take(2000).collect();
    let mut rng = stream(9, &[]);
    let (mut mismatches, mut ties, mut decayed) = (0, 0, 0);
    for case in 0..200 {
        let mut store = MemoryStore::starting_at(rng.gen_range(0..50));
        let variety = rng.gen_range(1..=20);
        let base = rng.gen_range(0..pool.len() - variety);
        for _ in 0..rng.gen_range(0..=100) {
            store.append(pool[base + rng.gen_range(0..variety)].clone()).expect("audited records are valid");
        }
        let text = match rng.gen_range(0..4) {
            0 => String::new(),
            1 if !store.is_empty() => record_digest(&store.entries()[rng.gen_range(0..store.len())].record),
            _ => format!("scene:{} hour:{}", rng.gen_range(0..5), rng.gen_range(0..12)),
        };
        let lambda = if case % 2 == 0 { 0.95 } else { 1.0 };
        decayed += usize::from(lambda < 1.0);
        let q = RetrievalQuery {
            embedding: embed(&text),
            k: rng.gen_range(1..=12),
            decay_lambda: lambda,
        };
        let now = store.next_index() + rng.gen_range(0..5);
        let got: Vec<u64> = store.retrieve(&q, now).expect("valid query").iter().map(|(e, _)| e.insertion_index).collect();
        let scored: Vec<(u64, f64)> = store
            .entries()
            .iter()
            .map(|e| (e.insertion_index, lambda.powf((now - e.insertion_index) as f64) * cosine(&q.embedding, &e.embedding)))
            .collect();
        let mut want: Vec<(usize, u64, f64)> = scored
            .iter()
            .map(|&(idx, s)| {
                let rank = scored.iter().filter(|&&(j, t)| t > s || (t == s && j > idx)).count();
                (rank, idx, s)
            })
            .collect();
        want.sort_by_key(|w| w.0);
        want.truncate(q.k);
        ties += usize::from(want.windows(2).any(|w| w[0].2 == w[1].2));
        mismatches += usize::from(got != want.iter().map(|w| w.1).collect::<Vec<_>>());
    }
    CheckResult {
        id: 9,
        name: "retrieval oracle",
        passed: mismatches == 0 && ties > 0,
        detail: format!("200 random stores (size <= 100, {decayed} with lambda 0.95), {ties} with ties in the top k, {mismatches} mismatches"),
    }
}

/// Runs every criterion in order; loop fidelity audits every trace the
/// other checks produced.
pub fn run_all(opts: &CheckOptions) -> Vec<CheckResult> {
    let mut audit = Vec::new();
    let mut results = vec![metric_identities(), reward_table(), l2d_oracle(), call_accounting(), numerical_checks()];
    let behavior = behavioral_ordering(opts, &mut audit);
    coverage_traces(&mut audit);
    let det = determinism(&mut audit);
    results.push(behavior);
    results.push(loop_fidelity(&audit));
    results.push(det);
    results.push(retrieval_oracle(&audit));
    results
}
