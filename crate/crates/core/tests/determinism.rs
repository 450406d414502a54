use std::sync::Arc;

use horizon_nav::config::{Scenario, SimConfig};
use horizon_nav::coop::{CoopDims, CoopNetParams};
use horizon_nav::harness::{evaluate, run_episode, EpisodeLog, PolicyStack, StackKind};
use horizon_nav::policy::{PolicyDims, PolicyParams};

fn learned_stack(kind: StackKind) -> PolicyStack {
    PolicyStack::new(kind)
        .with_coop(Arc::new(CoopNetParams::init(CoopDims::default(), 4)))
        .with_policy(Arc::new(PolicyParams::init(PolicyDims::default(), 4)))
}

#[test]
fn episodes_repeat_exactly() {
    let cfg = SimConfig::for_scenario(Scenario::Mid);
    for stack in [learned_stack(StackKind::Full), PolicyStack::new(StackKind::SfBaseline)] {
        let a = run_episode(&cfg, &stack, 21, "mid").unwrap();
        let b = run_episode(&cfg, &stack, 21, "mid").unwrap();
        assert_eq!(a.to_jsonl(), b.to_jsonl());
        let back = EpisodeLog::from_jsonl(a.to_jsonl().as_bytes()).unwrap();
        assert_eq!(back, a);
    }
}

#[test]
fn evaluation_matches_episode_by_episode_runs() {
    // The pooled evaluation must agree with running each seed alone.
    let cfg = SimConfig::for_scenario(Scenario::High);
    let stack = PolicyStack::new(StackKind::FixedHorizon(4));
    let mut logs = Vec::new();
    let summary = evaluate(&cfg, &stack, 4, 300, "high", |_, log| {
        logs.push(log.to_jsonl());
        Ok(())
    })
    .unwrap();
    assert_eq!(summary.n_episodes, 4);
    for (i, text) in logs.iter().enumerate() {
        let alone = run_episode(&cfg, &stack, 300 + i as u64, "high").unwrap();
        assert_eq!(&alone.to_jsonl(), text);
    }
}

#[test]
fn different_seeds_differ() {
    let cfg = SimConfig::for_scenario(Scenario::Mid);
    let stack = PolicyStack::new(StackKind::FixedHorizon(3));
    let a = run_episode(&cfg, &stack, 1, "mid").unwrap();
    let b = run_episode(&cfg, &stack, 2, "mid").unwrap();
    assert_ne!(a.to_jsonl(), b.to_jsonl());
}
