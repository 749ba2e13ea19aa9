//! Analytic gradients of the set loss through the whole network against
//! central finite differences.
//!
//! cargo run --release --example gradcheck

use transtrack::geometry::CenterBox;
use transtrack::losses::{GroundTruth, LossWeights};
use transtrack::toynet::{grad_check, gradcheck_pair, LinearHeads, ModelConfig, ModelParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let heads = LinearHeads::random(5, 6, 3);
    let gts = [
        GroundTruth { bbox: CenterBox::new(0.3, 0.4, 0.2, 0.25), class_id: 0 },
        GroundTruth { bbox: CenterBox::new(0.7, 0.6, 0.3, 0.1), class_id: 0 },
    ];
    let r = heads.grad_check(&gts, &LossWeights::default(), 1e-6)?;
    println!("linear heads: {} parameters, max relative error {:.2e}", r.checked, r.max_rel_error);

    let cfg = ModelConfig::gradcheck();
    let params = ModelParams::init(cfg, 0)?;
    let pair = gradcheck_pair(&cfg, 0)?;
    let r = grad_check(&params, &pair, &LossWeights::default(), 1e-5)?;
    println!("full network: {} parameters, max relative error {:.2e} at {}", params.num_scalars(), r.max_rel_error, r.worst);
    Ok(())
}
