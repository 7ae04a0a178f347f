//! Round-robin striping over directory-backed servers: where the stripes
//! land, how the manifest brings them back, and how a damaged stripe is
//! caught.

use std::fs;

use twotier::store::MIB;
use twotier::{BackingStore, Manifest, ServerTarget, SimClock, StripeLayout};

fn open(root: &std::path::Path) -> twotier::Result<BackingStore> {
    BackingStore::open(
        ServerTarget::directories(root, 2),
        StripeLayout::new(MIB, vec![0, 1]),
        SimClock::virtual_clock(),
        Manifest::open(root.join("manifest.tsv"))?,
    )
}

fn main() -> twotier::Result<()> {
    // A 512 MiB block cut into 64 MiB stripes alternates between two servers.
    let plan = StripeLayout::new(64 * MIB, vec![0, 1]).plan(0, 512 * MIB);
    let servers: Vec<usize> = plan.iter().map(|s| s.1).collect();
    println!("512 MiB / 64 MiB stripes -> servers {servers:?}");

    let dir = std::env::temp_dir().join(format!("twotier-striping-{}", std::process::id()));
    let data: Vec<u8> = (0..5 * MIB as usize + 123)
        .map(|i| (i * 31 % 256) as u8)
        .collect();
    {
        let store = open(&dir)?;
        for r in store.put_block(42, &data)? {
            println!(
                "stripe {} -> server {} ({} bytes) {}",
                r.stripe_seq,
                r.server_id,
                r.length,
                store.stripe_path(&r).unwrap().display()
            );
        }
    }

    let store = open(&dir)?;
    assert_eq!(store.get_block(42)?, data);
    println!("reopened from the manifest, {} bytes intact", data.len());

    let rec = store.records(42)?[2];
    let path = store.stripe_path(&rec).unwrap();
    let mut bytes = fs::read(&path)?;
    bytes[0] ^= 0x80;
    fs::write(&path, bytes)?;
    let err = store.get_block(42).unwrap_err();
    println!("after flipping one bit: error: {}: {err}", err.code());

    fs::remove_dir_all(&dir)?;
    Ok(())
}
