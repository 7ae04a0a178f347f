//! Storage mountain on simulated devices under the virtual clock.
//!
//! The tier runs at 6,400 MB/s and each backing server at 400 MB/s, so the
//! two ridges sit an order of magnitude apart. Pass `--full` for the
//! 4 MiB to 1 GiB sweep; the default stops at 256 MiB.

use std::time::Instant;

use twotier::bench::{emit_mountain_csv, run_mountain, MountainSpec};
use twotier::store::MIB;
use twotier::{
    BackingStore, DeviceTiming, ServerTarget, SimClock, StoreConfig, StripeLayout, TieredStore,
};

fn main() -> twotier::Result<()> {
    let full = std::env::args().any(|a| a == "--full");
    let mut spec = MountainSpec::desk_scale();
    if !full {
        spec.data_sizes.retain(|&d| d <= 256 * MIB);
        spec.repetitions = 3;
    }

    let servers = ServerTarget::simulated_set(2, DeviceTiming::symmetric(400.0, 0.0));
    let backing = BackingStore::simulated(
        servers,
        StripeLayout::new(MIB, vec![0, 1]),
        SimClock::virtual_clock(),
    )?;
    let config = StoreConfig {
        tier_capacity: spec.tier_capacity,
        tier_timing: Some(DeviceTiming::symmetric(6400.0, 0.0)),
        ..StoreConfig::default()
    };
    let store = TieredStore::new(config, backing)?;

    let started = Instant::now();
    let points = run_mountain(&store, &spec)?;
    emit_mountain_csv(&points, &mut std::io::stdout().lock())?;
    eprintln!("{} points in {:.1?}", points.len(), started.elapsed());
    Ok(())
}
