use std::fs;
use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gossip-poison"))
}

fn idx_images(count: usize, seed: u32) -> Vec<u8> {
    let mut out = Vec::new();
    for v in [0x0803u32, count as u32, 28, 28] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    let mut state = seed;
    for _ in 0..count * 784 {
        state = state.wrapping_mul(1_103_515_245).wrapping_add(12_345);
        let b = (state >> 16) as u8;
        out.push(if b > 200 { b } else { 0 });
    }
    out
}

fn idx_labels(count: usize) -> Vec<u8> {
    let mut out = Vec::new();
    for v in [0x0801u32, count as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend((0..count).map(|i| (i % 10) as u8));
    out
}

/// A small synthetic corpus: 60 training and 2000 test images.
fn write_corpus(dir: &Path) {
    fs::write(dir.join("train-images-idx3-ubyte"), idx_images(60, 1)).unwrap();
    fs::write(dir.join("train-labels-idx1-ubyte"), idx_labels(60)).unwrap();
    fs::write(dir.join("t10k-images-idx3-ubyte"), idx_images(2000, 2)).unwrap();
    fs::write(dir.join("t10k-labels-idx1-ubyte"), idx_labels(2000)).unwrap();
}

const TINY: &str = "n=4 f=1 S=2 topology=fanout k=2 rounds=6 eval_every=2 shard_size=10 replicates=2\n";

struct Fixture {
    _root: tempfile::TempDir,
    data: std::path::PathBuf,
    out: std::path::PathBuf,
    plan: std::path::PathBuf,
}

fn fixture(plan: &str) -> Fixture {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("mnist");
    fs::create_dir(&data).unwrap();
    write_corpus(&data);
    let plan_path = root.path().join("plan.txt");
    fs::write(&plan_path, plan).unwrap();
    Fixture { out: root.path().join("out"), data, plan: plan_path, _root: root }
}

#[test]
fn one_cell_plan_writes_three_files() {
    let fx = fixture(TINY);
    let status = bin()
        .args(["--plan".as_ref(), fx.plan.as_os_str(), "--out".as_ref(), fx.out.as_os_str()])
        .args(["--data-dir".as_ref(), fx.data.as_os_str(), "--workers".as_ref(), "1".as_ref()])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let mut names: Vec<String> =
        fs::read_dir(&fx.out).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(
        names,
        ["fanout_n4_f1_S2_random_1.0.csv", "fanout_n4_f1_S2_random_1.0.manifest", "summary.csv"]
    );
    let csv = fs::read_to_string(fx.out.join("fanout_n4_f1_S2_random_1.0.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "round,mean_test_acc,std_test_acc,mean_backdoor_acc,std_backdoor_acc,messages_sent");
    assert_eq!(lines.len(), 1 + 4);
    let summary = fs::read_to_string(fx.out.join("summary.csv")).unwrap();
    let row = summary.lines().nth(1).unwrap();
    assert!(row.contains(&format!("ok,{},", lines[4])), "{row}");
    let manifest = fs::read_to_string(fx.out.join("fanout_n4_f1_S2_random_1.0.manifest")).unwrap();
    for key in ["replicate.1.seeds=", "replicate.0.byzantine=", "replicate.0.graph_sha256=", "software="] {
        assert!(manifest.contains(key), "{key}");
    }
}

#[test]
fn reruns_are_byte_identical() {
    let fx = fixture(TINY);
    let run = |out: &Path| {
        let status = bin()
            .args(["--plan".as_ref(), fx.plan.as_os_str(), "--out".as_ref(), out.as_os_str(), "--seed".as_ref(), "7".as_ref()])
            .env("GOSSIP_POISON_DATA_DIR", &fx.data)
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(0));
        fs::read(out.join("fanout_n4_f1_S2_random_1.0.csv")).unwrap()
    };
    assert_eq!(run(&fx.out.join("a")), run(&fx.out.join("b")));
}

#[test]
fn worker_count_does_not_change_output() {
    let fx = fixture("n=4 f=1 S=[1,2] topology=[fanout,erdos_renyi] k=2 rounds=6 eval_every=2 shard_size=10 replicates=3\n");
    let run = |workers: &str| {
        let out = fx.out.join(workers);
        let status = bin()
            .args(["--plan".as_ref(), fx.plan.as_os_str(), "--out".as_ref(), out.as_os_str()])
            .args(["--data-dir".as_ref(), fx.data.as_os_str(), "--workers".as_ref(), workers.as_ref()])
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(0));
        let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(&out)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
            })
            .collect();
        files.sort();
        files
    };
    let one = run("1");
    assert_eq!(one.len(), 4 * 2 + 1);
    assert_eq!(one, run("3"));
}

#[test]
fn failed_cell_exits_one_and_others_complete() {
    // Seven nodes with ten samples each need more than the 60 training images.
    let fx = fixture("n=[4,7] f=1 S=2 topology=fanout k=2 rounds=4 eval_every=2 shard_size=10\n");
    let status = bin()
        .args(["--plan".as_ref(), fx.plan.as_os_str(), "--out".as_ref(), fx.out.as_os_str()])
        .args(["--data-dir".as_ref(), fx.data.as_os_str()])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
    assert!(fx.out.join("fanout_n4_f1_S2_random_1.0.csv").exists());
    assert!(!fx.out.join("fanout_n7_f1_S2_random_1.0.csv").exists());
    let summary = fs::read_to_string(fx.out.join("summary.csv")).unwrap();
    assert!(summary.lines().any(|l| l.starts_with("fanout_n7_f1_S2_random_1.0,") && l.contains(",failed,")));
}

#[test]
fn config_errors_exit_two() {
    let fx = fixture("n=100 f=200\n");
    let out = bin().args(["--plan".as_ref(), fx.plan.as_os_str()]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("f exceeds n"));

    let out = bin().args(["--preset", "paper-fig9"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let fx = fixture(TINY);
    let missing = fx.out.join("nowhere");
    let out = bin()
        .args(["--plan".as_ref(), fx.plan.as_os_str(), "--data-dir".as_ref(), missing.as_os_str()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    let out = bin().output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn preset_listing() {
    let out = bin().args(["--preset", "paper-fig4", "--list"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 14);
    assert!(text.lines().all(|l| l.starts_with("zipf_n150_f") && l.contains("_S8_")));
    assert!(text.contains("zipf_n150_f40_S8_random_0.2 rounds=6000 replicates=10"));
}
