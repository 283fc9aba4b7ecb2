//! Runs one toy trial: `cargo run --release --example trial -- key=value ...`
//! Keys: lambda, wait_k, steps, seed, train, dev, lr_scale, beam, noise, pairs.

use duplex_core::experiment::{run_trial, TrialSpec};
use duplex_core::kv::KvMap;
use duplex_core::toy_data::ToySpec;
use duplex_core::{BeamConfig, ModelConfig, TrainConfig};

fn main() -> duplex_core::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let kv = KvMap::parse(&args.join("\n"))?;
    let mut data = ToySpec::default();
    kv.read_into("noise", &mut data.noise_std)?;
    if let Some(n) = kv.get_parsed::<usize>("pairs")? {
        data.ambiguity_pairs.truncate(n);
    }
    let mut model = ModelConfig::toy(0);
    model.read_kv(&kv)?;
    let mut train = TrainConfig { steps: 1000, ..TrainConfig::default() };
    train.read_kv(&kv)?;
    let beam = kv.get_parsed::<usize>("beam")?.map(|b| BeamConfig { beam_size: b, ..BeamConfig::default() });
    let spec = TrialSpec {
        data,
        train_size: kv.get_parsed("train")?.unwrap_or(5000),
        dev_size: kv.get_parsed("dev")?.unwrap_or(500),
        model,
        train,
        beam,
    };
    let r = run_trial(&spec)?;
    for rep in r.reports.iter().filter(|r| r.step % 100 == 0) {
        println!("{}", rep.log_line());
    }
    println!("wer={:.4} bleu={:.2} dev_loss={:.4} seconds={:.1}", r.wer, r.bleu, r.dev_loss, r.seconds);
    Ok(())
}
