//! Per-layer parameter and MAC accounting, checked against a live model,
//! plus the width sweep against the reference budget.

use tformer::autograd::ParamStore;
use tformer::cost::{calibrate_channels, cost_report, REFERENCE_PARAMS};
use tformer::model::{TFormerConfig, TFormerModel};
use tformer::rng::Rng;

fn main() -> tformer::Result<()> {
    let config = TFormerConfig::with_channels(16);
    let report = cost_report(&config, 64, 64)?;
    print!("{}", report.to_table());

    let mut store = ParamStore::new();
    let model = TFormerModel::new(config.clone(), &mut store, &mut Rng::new(0))?;
    println!("live parameter census: {}", model.num_params(&store));

    let (best, rows) = calibrate_channels(&TFormerConfig::default(), REFERENCE_PARAMS, &[32, 40, 48, 64])?;
    for r in &rows {
        println!("C={:<3} params {:>10} ({:+.1}%)  MACs@256² {:>14} ({:+.1}%)", r.channels, r.params, 100.0 * r.param_gap, r.macs, 100.0 * r.mac_gap);
    }
    println!("closest: C={}", best.channels);
    Ok(())
}
