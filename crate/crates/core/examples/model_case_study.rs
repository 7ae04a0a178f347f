//! Per-node rates, aggregate throughput and HDFS crossover points for the
//! 16-node case-study cluster.

use twotier::model::{aggregate, crossover_nodes, format_mbps, DEFAULT_CROSSOVER_CEILING};
use twotier::{ClusterParams, Direction, ModelQuery, StorageKind};

fn main() -> twotier::Result<()> {
    let p = ClusterParams::case_study();

    println!(
        "{:<14} {:>10} {:>12}  binding",
        "query", "per node", "aggregate"
    );
    for q in [
        ModelQuery::new(StorageKind::Hdfs, Direction::Read),
        ModelQuery::new(StorageKind::Hdfs, Direction::Write),
        ModelQuery::new(StorageKind::Ofs, Direction::Read).pfs(10_000.0),
        ModelQuery::new(StorageKind::Tachyon, Direction::Read),
        ModelQuery::new(StorageKind::Tls, Direction::Read)
            .fraction(0.5)
            .pfs(10_000.0),
        ModelQuery::new(StorageKind::Tls, Direction::Write).pfs(10_000.0),
    ] {
        let r = aggregate(&q, &p)?;
        println!(
            "{:<14} {:>10} {:>12}  {}",
            format!("{} {}", q.label(), q.direction),
            format_mbps(r.per_node),
            format_mbps(r.aggregate),
            r.binding_resource
        );
    }

    println!("\nnodes needed before HDFS overtakes:");
    for pfs in [10_000.0, 50_000.0] {
        for (kind, dir, f) in [
            (StorageKind::Ofs, Direction::Read, 0.0),
            (StorageKind::Tls, Direction::Read, 0.2),
            (StorageKind::Tls, Direction::Read, 0.5),
            (StorageKind::Tls, Direction::Write, 0.0),
        ] {
            let q = ModelQuery::new(kind, dir).fraction(f).pfs(pfs);
            let n = crossover_nodes(&q, &p, DEFAULT_CROSSOVER_CEILING)?
                .map_or("none".to_string(), |c| c.node_count.to_string());
            println!("  {:>6} MB/s file system, {} {}: {n}", pfs, q.label(), dir);
        }
    }
    Ok(())
}
