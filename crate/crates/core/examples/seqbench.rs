//! Sequential write and read of 16 files against each target, on simulated
//! devices where the measured rate should equal the configured one.

use twotier::bench::{run_seqbench, SeqBenchSpec, SeqTarget};
use twotier::store::MIB;
use twotier::{
    BackingStore, DeviceTiming, Direction, ServerTarget, SimClock, StoreConfig, StripeLayout,
    TieredStore,
};

fn main() -> twotier::Result<()> {
    for target in [SeqTarget::Backing, SeqTarget::Tier, SeqTarget::Tiered] {
        let servers = ServerTarget::simulated_set(
            2,
            DeviceTiming {
                read_mbps: 400.0,
                write_mbps: 200.0,
                latency_us: 0.0,
            },
        );
        let backing = BackingStore::simulated(
            servers,
            StripeLayout::new(MIB, vec![0, 1]),
            SimClock::virtual_clock(),
        )?;
        let config = StoreConfig {
            tier_timing: Some(DeviceTiming::symmetric(6000.0, 0.0)),
            ..StoreConfig::default()
        };
        let store = TieredStore::new(config, backing)?;
        for direction in [Direction::Write, Direction::Read] {
            let spec = SeqBenchSpec {
                target,
                direction,
                file_size: 4 * MIB,
                ..SeqBenchSpec::default()
            };
            let r = run_seqbench(&store, &spec)?;
            println!(
                "{target:?} {direction}: {} files, {} bytes, mean {:.1} MB/s",
                r.files.len(),
                r.total_bytes,
                r.mean_mbps
            );
        }
    }
    Ok(())
}
