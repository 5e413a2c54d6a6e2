//! Renders the deterministic actor and critic prompts for the planted skill.

use rectune::bench;
use rectune::simpipeline::SystemConfig;
use rectune::skillhub::{render_actor_prompt, render_critic_prompt};

fn main() {
    let skill = bench::planted_skill();
    let actor = render_actor_prompt(&skill, &[], 4, &[]);
    println!("=== actor prompt ===\n{actor}");

    let mut proposal = bench::initial_config();
    proposal.params.insert("rank.w_ctr".into(), 1.8);
    let proposals = vec![
        (proposal, "push the click head harder".to_string()),
        (
            SystemConfig::from_pairs([("rank.w_ctr", 9.0)]),
            "deliberately broken proposal".to_string(),
        ),
    ];
    let critic = render_critic_prompt(
        &skill,
        &proposals,
        "task r002-c1 breached the diversity floor at topic_cap 1",
    );
    println!("=== critic prompt ===\n{critic}");
}
