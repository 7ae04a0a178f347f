mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn twotier(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_twotier"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("twotier.cfg");
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn model_eval_examples() {
    let o = twotier(&["model", "eval", "--kind", "hdfs", "--direction", "write"]);
    assert!(o.status.success());
    assert!(
        stdout(&o).contains("per_node_mbps: 38.667"),
        "{}",
        stdout(&o)
    );

    let o = twotier(&[
        "model",
        "eval",
        "--kind",
        "tls",
        "--direction",
        "read",
        "--f",
        "1",
    ]);
    assert!(
        stdout(&o).contains("per_node_mbps: 6267\n"),
        "{}",
        stdout(&o)
    );

    let o = twotier(&["model", "eval", "--kind", "ofs", "--aggregate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error: invalid: "), "{}", stderr(&o));
}

#[test]
fn model_eval_overrides() {
    let o = twotier(&[
        "model",
        "eval",
        "--kind",
        "hdfs",
        "--set",
        "replication=1",
        "--set",
        "n_compute=10",
    ]);
    let text = stdout(&o);
    assert!(
        text.contains("nodes: 10") && text.contains("aggregate_mbps: 2370"),
        "{text}"
    );
    let o = twotier(&["model", "eval", "--kind", "hdfs", "--set", "warp=9"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`warp`"), "{}", stderr(&o));
}

#[test]
fn crossover_examples() {
    let run = |args: &[&str]| stdout(&twotier(&[&["model", "crossover"], args].concat()));
    assert!(run(&[
        "--rival",
        "ofs",
        "--direction",
        "read",
        "--pfs-mbps",
        "10000"
    ])
    .contains("node_count: 43\n"));
    assert!(
        run(&["--rival", "tls", "--f", "0.5", "--pfs-mbps", "50000"]).contains("node_count: 414\n")
    );
    assert!(run(&[
        "--rival",
        "tls",
        "--direction",
        "write",
        "--pfs-mbps",
        "10000"
    ])
    .contains("node_count: 259\n"));
    let none = run(&["--rival", "ofs", "--pfs-mbps", "1e9", "--ceiling", "50"]);
    assert!(none.contains("node_count: none"), "{none}");
}

#[test]
fn sweep_shows_first_hdfs_win() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep.csv");
    let o = twotier(&[
        "model",
        "sweep",
        "--n",
        "1:500",
        "--pfs-mbps",
        "10000",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(&out).unwrap();
    assert!(csv.starts_with("n,kind,direction,per_node_mbps,aggregate_mbps,binding_resource\n"));
    let agg = |n: u32, kind: &str| -> f64 {
        let row = csv
            .lines()
            .find(|l| l.starts_with(&format!("{n},{kind},read,")))
            .unwrap();
        row.split(',').nth(4).unwrap().parse().unwrap()
    };
    assert!(agg(42, "hdfs") <= agg(42, "ofs"));
    assert!(agg(43, "hdfs") > agg(43, "ofs"));
    // Deterministic output.
    let again = stdout(&twotier(&[
        "model",
        "sweep",
        "--n",
        "1:500",
        "--pfs-mbps",
        "10000",
    ]));
    assert_eq!(csv, again);
}

#[test]
fn store_round_trip_and_stat() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!("root = {}\nblock_size = 64KiB\ntier_capacity = 256KiB\napp_buffer = 16KiB\nbacking_buffer = 64KiB\nstripe_size = 16KiB\n", dir.path().join("store").display()),
    );
    let local = dir.path().join("f.bin");
    fs::write(&local, common::pattern(300_000, 9)).unwrap();

    let o = twotier(&["--config", &cfg, "store", "put", local.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let back = dir.path().join("back.bin");
    let o = twotier(&[
        "--config",
        &cfg,
        "store",
        "get",
        "f.bin",
        "--out",
        back.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read(&local).unwrap(), fs::read(&back).unwrap());

    let o = twotier(&["--config", &cfg, "store", "get", "f.bin"]);
    assert_eq!(o.stdout, fs::read(&local).unwrap());

    let stat = stdout(&twotier(&["--config", &cfg, "store", "stat"]));
    assert_eq!(stat, "path,length,sealed,blocks\nf.bin,300000,true,5\n");
    let one = stdout(&twotier(&["--config", &cfg, "store", "stat", "f.bin"]));
    assert!(
        one.contains("blocks: 5") && one.contains("\tbacking\t"),
        "{one}"
    );

    let o = twotier(&["--config", &cfg, "store", "put", local.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).starts_with("error: duplicate-path: "),
        "{}",
        stderr(&o)
    );
}

#[test]
fn store_error_codes() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("store");
    let cfg = write_config(
        dir.path(),
        &format!(
            "root = {}\nblock_size = 64KiB\ntier_capacity = 128KiB\n",
            root.display()
        ),
    );
    let local = dir.path().join("big.bin");
    fs::write(&local, common::pattern(200_000, 1)).unwrap();

    // Memory-only data does not outlive the process unless checkpointed.
    let o = twotier(&[
        "--config",
        &cfg,
        "store",
        "put",
        local.to_str().unwrap(),
        "--as",
        "m",
        "--mode",
        "memory-only",
    ]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).starts_with("error: capacity: "));

    let small = dir.path().join("small.bin");
    fs::write(&small, common::pattern(100_000, 2)).unwrap();
    let o = twotier(&[
        "--config",
        &cfg,
        "store",
        "put",
        small.to_str().unwrap(),
        "--as",
        "m2",
        "--mode",
        "memory-only",
    ]);
    assert!(o.status.success());
    let o = twotier(&["--config", &cfg, "store", "get", "m2"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(
        stderr(&o).starts_with("error: data-loss: "),
        "{}",
        stderr(&o)
    );

    let o = twotier(&[
        "--config",
        &cfg,
        "store",
        "put",
        small.to_str().unwrap(),
        "--as",
        "m3",
        "--mode",
        "memory-only",
        "--checkpoint",
    ]);
    assert!(o.status.success());
    let o = twotier(&["--config", &cfg, "store", "get", "m3"]);
    assert_eq!(o.stdout, fs::read(&small).unwrap());

    let o = twotier(&["--config", &cfg, "store", "get", "nope"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).starts_with("error: not-found: "));

    // A corrupted stripe surfaces as an integrity error.
    let stripe = fs::read_dir(root.join("server-0"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    let mut bytes = fs::read(&stripe).unwrap();
    bytes[0] ^= 1;
    fs::write(&stripe, bytes).unwrap();
    let o = twotier(&["--config", &cfg, "store", "get", "m3"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(
        stderr(&o).starts_with("error: integrity: "),
        "{}",
        stderr(&o)
    );
}

#[test]
fn store_needs_a_root() {
    let o = twotier(&["store", "stat"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error: config: "));
}

#[test]
fn bad_config_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tier_capacity = 8MiB\nfrobnicate = yes\n");
    let o = twotier(&["--config", &cfg, "model", "eval", "--kind", "hdfs"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).contains("`frobnicate`") && stderr(&o).contains("line 2"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn usage_errors() {
    let o = twotier(&["model", "eval", "--kind", "hdfs", "--direction", "sideways"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error: usage: "));
    let o = twotier(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(twotier(&["--help"]).status.success());
}

#[test]
fn bench_commands_emit_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "# small mountain\nblock_size = 64KiB\ntier_capacity = 256KiB\napp_buffer = 16KiB\nbacking_buffer = 64KiB\n\
         stripe_size = 16KiB\nsim_read_mbps = 200\ntier_mbps = 3200\nmountain.data_sizes = 128KiB..1MiB\n\
         mountain.skip_sizes = 0,16KiB,64KiB\nmountain.repetitions = 3\nseq.file_size = 256KiB\nseq.target = backing\n",
    );
    let o = twotier(&["--config", &cfg, "bench", "mountain"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = stdout(&o);
    assert!(csv.starts_with("data_size,skip_size,throughput_mbps,samples\n"));
    assert_eq!(csv.lines().count(), 1 + 4 * 3);
    assert_eq!(
        csv,
        stdout(&twotier(&["--config", &cfg, "bench", "mountain"]))
    );

    let o = twotier(&["--config", &cfg, "bench", "seq", "--direction", "write"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = stdout(&o);
    assert_eq!(csv.lines().count(), 1 + 16 + 1);
    assert!(
        csv.lines()
            .last()
            .unwrap()
            .starts_with("mean,write,4194304,"),
        "{csv}"
    );
}
