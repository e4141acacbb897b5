//! Findings from in-memory lesion masks, the deterministic report, and
//! optional enrichment through a chat-completions endpoint.
//!
//! cargo run --example referral_report -- [grade] [endpoint_url]

use std::collections::BTreeMap;
use std::time::Duration;

use drseg::report::{
    compose_report, enrich_via_external, findings_from_masks, HttpGenerator, HttpGeneratorConfig, Lesion, Templates,
    TextGenerator,
};
use drseg::{Shape, Tensor};

fn main() -> drseg::Result<()> {
    let mut args = std::env::args().skip(1);
    let grade: u8 = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    let endpoint = args.next();

    let shape = Shape::new(1, 1, 64, 64);
    let mut haemorrhage = Tensor::<f32>::zeros(shape);
    for y in 20..28 {
        for x in 30..36 {
            haemorrhage.set(0, 0, y, x, 1.0);
        }
    }
    let mut masks = BTreeMap::new();
    masks.insert(Lesion::Haemorrhage, haemorrhage);
    masks.insert(Lesion::Microaneurysm, Tensor::zeros(shape));
    masks.insert(Lesion::HardExudate, Tensor::zeros(shape));
    // vessel, soft exudate and optic disc masks are left out and reported as unknown

    let findings = findings_from_masks(&masks, 0.001, grade)?;
    let base = compose_report(&findings, &Templates::default())?;
    let client = endpoint.map(|endpoint| HttpGenerator::new(HttpGeneratorConfig { endpoint, ..Default::default() }));
    let report = enrich_via_external(
        &findings,
        &base,
        client.as_ref().map(|c| c as &dyn TextGenerator),
        Duration::from_secs(20),
    );
    print!("{}", report.render());
    Ok(())
}
