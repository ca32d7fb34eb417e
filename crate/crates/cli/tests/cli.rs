use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
# small enough to train in seconds
train_examples = 24
test_examples = 6
tokens_per_utterance = 3,5
d_model = 16
joint_dim = 16
arch = hier1
steps = 3
batch_size = 2
warmup_steps = 2
ablate_pretrain_steps = 2
ablate_archs = hier1
";

fn tst(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tst"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = tst(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn setup(dir: &Path) -> (String, String) {
    let cfg = dir.join("tiny.txt");
    fs::write(&cfg, TINY).unwrap();
    let data = dir.join("data");
    ok(&["synth", "--config", s(&cfg), "--out", s(&data)]);
    (s(&cfg).to_string(), s(&data).to_string())
}

#[test]
fn eval_of_references_against_themselves() {
    let dir = tempfile::tempdir().unwrap();
    let (_, data) = setup(dir.path());
    let manifest = fs::read_to_string(Path::new(&data).join("test.tsv")).unwrap();
    let hyps: String = manifest
        .lines()
        .map(|l| {
            let c: Vec<&str> = l.split('\t').collect();
            format!("{}\t0\t{}\n", c[0], c[3])
        })
        .collect();
    let hyp_path = dir.path().join("hyps.txt");
    fs::write(&hyp_path, hyps).unwrap();
    let out = dir.path().join("eval");
    let stdout = ok(&[
        "eval",
        "--refs",
        &format!("{data}/test.tsv"),
        "--hyps",
        s(&hyp_path),
        "--out",
        s(&out),
    ]);
    assert!(stdout.starts_with("wer\t0\nbleu\t100\nlength_ratio\t1\n"), "{stdout}");
    let report = fs::read_to_string(out.join("report.tsv")).unwrap();
    assert!(report.contains("utt00000\t0\t"));
}

#[test]
fn pretrain_then_joint_then_bp_grid() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = setup(dir.path());
    let pre = dir.path().join("pre");
    let joint = dir.path().join("joint");
    ok(&["train", "--config", &cfg, "--data", &data, "--out", s(&pre), "--stage", "asr_pretrain"]);
    for f in ["model.ckpt", "metrics.tsv", "config.txt"] {
        assert!(pre.join(f).exists(), "{f}");
    }
    let ckpt = pre.join("model.ckpt");
    ok(&[
        "train", "--config", &cfg, "--data", &data, "--out", s(&joint),
        "--stage", "joint_finetune", "--init", s(&ckpt),
    ]);
    let metrics = fs::read_to_string(joint.join("metrics.tsv")).unwrap();
    assert!(metrics.contains("\tst_pruned\t"));
    assert!(metrics.lines().any(|l| l.starts_with("2\tgrad_norm\t")));

    let dec = dir.path().join("dec");
    let stdout = ok(&[
        "decode", "--config", &cfg, "--checkpoint", s(&joint.join("model.ckpt")),
        "--data", &data, "--out", s(&dec), "--bp", "0,0.5,1,2",
    ]);
    assert_eq!(stdout.lines().count(), 4);
    for bp in ["0", "0.5", "1", "2"] {
        let hyps = dec.join(format!("hyps_bp{bp}.txt"));
        assert_eq!(fs::read_to_string(&hyps).unwrap().lines().count(), 6);
        assert!(dec.join(format!("hyps_bp{bp}.rtf")).exists());
    }
    let rep = ok(&[
        "eval", "--refs", &format!("{data}/test.tsv"),
        "--hyps", s(&dec.join("hyps_bp2.txt")), "--out", s(&dir.path().join("ev")),
    ]);
    assert!(rep.contains("\nrtf\t"));
}

#[test]
fn copied_config_reproduces_training() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = setup(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["train", "--config", &cfg, "--data", &data, "--out", s(&a), "--seed", "7"]);
    let copied = a.join("config.txt");
    ok(&["train", "--config", s(&copied), "--data", &data, "--out", s(&b)]);
    assert_eq!(fs::read(a.join("model.ckpt")).unwrap(), fs::read(b.join("model.ckpt")).unwrap());
    assert_eq!(
        fs::read_to_string(a.join("metrics.tsv")).unwrap(),
        fs::read_to_string(b.join("metrics.tsv")).unwrap()
    );
}

#[test]
fn ablation_single_cell() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = setup(dir.path());
    let out = dir.path().join("abl");
    let table = ok(&["ablate", "--config", &cfg, "--data", &data, "--out", s(&out), "--bp", "0"]);
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "config\tasr_ter\tbleu\tlength_ratio\trtf\tstatus");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("hier1_S5_w200_bp0\t"));
    assert!(lines[1].ends_with("\tok"));
    assert_eq!(fs::read_to_string(out.join("ablation.tsv")).unwrap(), table);
}

#[test]
fn failures_print_one_parseable_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.txt");
    fs::write(&bad, "prune_range = 1\n").unwrap();
    let out = tst(&["synth", "--config", s(&bad), "--out", s(&dir.path().join("x"))]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1);
    assert!(err.starts_with("error\tconfig\t"), "{err}");
    assert!(err.contains("prune_range"));

    let out = tst(&["eval", "--refs", "/nonexistent", "--hyps", "/nonexistent", "--out", s(dir.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error\tio\t"));
}
