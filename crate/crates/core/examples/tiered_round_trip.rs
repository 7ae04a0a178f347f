//! Write a file through the tier, read it back under each read mode, and
//! show what happens to memory-only data evicted before a checkpoint.

use twotier::store::KIB;
use twotier::{
    BackingStore, DeviceTiming, ReadMode, ServerTarget, SimClock, StoreConfig, StripeLayout,
    TieredStore, WriteMode,
};

fn main() -> twotier::Result<()> {
    let servers = ServerTarget::simulated_set(2, DeviceTiming::symmetric(200.0, 50.0));
    let backing = BackingStore::simulated(
        servers,
        StripeLayout::new(16 * KIB, vec![0, 1]),
        SimClock::virtual_clock(),
    )?;
    let config = StoreConfig {
        block_size: 64 * KIB,
        tier_capacity: 256 * KIB,
        app_buffer: 16 * KIB,
        backing_buffer: 64 * KIB,
        tier_timing: Some(DeviceTiming::symmetric(4000.0, 0.0)),
        ..StoreConfig::default()
    };
    let store = TieredStore::new(config, backing)?;

    let data: Vec<u8> = (0..512 * KIB as usize).map(|i| (i % 251) as u8).collect();
    let h = store.create("logs/day1", WriteMode::WriteThrough)?;
    for chunk in data.chunks(16 * KIB as usize) {
        store.append(&h, chunk)?;
    }
    let meta = store.seal("logs/day1")?;
    println!(
        "{} bytes in {} blocks, {:.0}% in the tier",
        meta.length,
        meta.blocks.len(),
        100.0 * store.residency_ratio("logs/day1")?
    );

    for mode in [
        ReadMode::TieredCaching,
        ReadMode::BypassNoCache,
        ReadMode::TieredCaching,
    ] {
        let before = store.clock().now_us();
        assert_eq!(store.read_all("logs/day1", mode)?, data);
        println!(
            "{mode:<16} {:>8.0} us  {:?}",
            store.clock().now_us() - before,
            store.stats()
        );
    }

    let h = store.create("scratch", WriteMode::MemoryOnly)?;
    store.append(&h, &data[..100 * KIB as usize])?;
    store.seal("scratch")?;
    store.evict_all();
    match store.read_all("scratch", ReadMode::TieredCaching) {
        Err(e) => println!(
            "after eviction without checkpoint: error: {}: {e}",
            e.code()
        ),
        Ok(_) => unreachable!("evicted memory-only data cannot be read"),
    }
    Ok(())
}
