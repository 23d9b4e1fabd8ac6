//! Generates the synthetic reference scenario and a data-center scenario and
//! prints their certificates and a few function samples.

use ocmdp::scenario::{datacenter_config, generate, DataCenterParams, ScenarioConfig};

fn main() -> ocmdp::Result<()> {
    let reference = generate(&ScenarioConfig::reference())?;
    println!(
        "reference: hash {}, eta {:.4}, mixing r {}",
        reference.content_hash(),
        reference.certificate.eta,
        reference.mixing_r
    );
    let s = reference.functions.sample(0);
    println!("  f_0 of MDP 0: {:.3?}", s.f[0]);
    println!("  g_1,0 of MDP 0: {:.3?}", s.g[0][0]);

    let params = DataCenterParams {
        mean_price: 0.5,
        price_amplitude: 0.4,
        price_period: 96,
        arrival_rate: 1.6,
        arrival_std: 0.2,
        service_rate: 0.6,
        leakage: 0.01,
        price_trace: None,
    };
    let dc = generate(&datacenter_config(4, params, 11)?)?;
    println!("data center: {} servers, psi {:.3}, eta {:.4}", dc.models.len(), dc.psi(), dc.certificate.eta);
    for t in [0, 24, 48, 72] {
        let f = dc.functions.sample(t).f;
        println!("  price at slot {t:>2}: {:.3}", f[0][0]);
    }
    Ok(())
}
