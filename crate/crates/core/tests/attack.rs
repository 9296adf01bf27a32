use vai_core::adversary::{evaluate_attack, train_adversary, AdversaryConfig};
use vai_core::envs::{Env, VicsekConfig, VicsekEnv, VicsekRulePolicy};

#[test]
fn vicsek16_k4_attack_beats_two_pooled_std() {
    let env = VicsekEnv::new(VicsekConfig {
        horizon: 30,
        ..Default::default()
    })
    .unwrap();
    let victim = VicsekRulePolicy::new(&env);
    let start = env.reset(11).unwrap();
    let attacked = [0, 1, 2, 3];
    let cfg = AdversaryConfig {
        episodes: 300,
        ..Default::default()
    };
    let adv = train_adversary(&env, &victim, &attacked, 1.0, Some(&start), &cfg, 3).unwrap();
    let r = evaluate_attack(&env, &victim, Some(&adv), &attacked, 1.0, 20, Some(&start), &[0], 1.0).unwrap();
    let margin = r.baseline_mean - r.mean;
    assert!(margin > 2.0 * r.pooled_std(), "margin {margin} vs pooled std {}", r.pooled_std());
}
