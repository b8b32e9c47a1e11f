//! Similarity filtering plus refinement through a mock captioner that fails
//! for one record on every attempt.

use segqa::purify::{
    assemble_purified, build_prompt, partition_by_threshold, refine_captions, resolve_threshold, score_records,
    MockCaptionClient, RefineConfig, RefinementPrompt,
};
use segqa::synth::synthetic_captions;
use segqa::types::RngSeed;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let caps = synthetic_captions(30, 16, RngSeed(2))?;
    let mut records = segqa::purify::join_records(caps.lines, &caps.images, &caps.texts)?;
    score_records(&mut records)?;
    let tau = resolve_threshold(&records, None, 0.3)?;
    let (high, low) = partition_by_threshold(records, tau)?;
    println!("tau {tau:.4}: {} high, {} low", high.len(), low.len());

    let prompt = RefinementPrompt::default();
    println!("--- prompt for {} ---\n{}\n---", low[0].id, build_prompt(&low[0], &prompt));

    let stubborn = low[0].id.clone();
    let client = MockCaptionClient::echo("a detailed aerial view: ").fail_first(&stubborn, 100);
    let cfg = RefineConfig { backoff_ms: 5, ..Default::default() };
    let refined = refine_captions(low, &client, &prompt, &cfg);
    let ds = assemble_purified(high, refined)?;
    println!("counts: {:?}", ds.counts);
    for r in ds.records.iter().filter(|r| r.failed()) {
        println!("{} kept with original caption after {} attempts: {:?}", r.id, r.provenance.attempts, r.provenance.refine_error);
    }
    Ok(())
}
