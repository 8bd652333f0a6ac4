use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use multihop_sim::config::Config;
use multihop_sim::pipeline::{read_csv, write_csv, CsvRow};
use multihop_sim::plot::{plot_rows, Metric, PlotKind};

fn mhsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mhsim"))
        .args(args)
        .env_remove("MHSIM_CONFIG_DIR")
        .output()
        .expect("mhsim runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A small configuration whose outputs land in `dir/out`.
fn write_config(dir: &Path, extra: &str) -> String {
    let out = dir.join("out");
    let text = format!(
        "hops = 2\nms_ssim = false\n\n[image]\nheight = 64\nwidth = 64\n\n[dataset]\ncount = 2\n\n\
         [codec]\ncode_len = 768\n\n[sweep]\ntrials = 2\n\n[train]\nstage3_steps = 10\nstage1_steps = 3\nrealizations = 1\n\n\
         [output]\ndir = {:?}\n{extra}",
        out.display().to_string()
    );
    let path = dir.join("base.toml");
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

#[test]
fn run_writes_versioned_csv_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let args = [
        "run",
        "--config",
        &cfg,
        "--set",
        "snr_db=10",
        "--set",
        "hops=3",
    ];
    let first = mhsim(&args);
    assert!(first.status.success(), "{}", stderr(&first));
    let csv = dir.path().join("out/results.csv");
    let a = fs::read(&csv).unwrap();
    assert!(a.starts_with(b"# schema_version=1\n"));
    let rows = read_csv(&a[..]).unwrap();
    assert_eq!(rows.len(), 2 * 3);
    assert!(String::from_utf8_lossy(&first.stdout).contains("psnr_comp_dB"));
    assert!(mhsim(&args).status.success());
    assert_eq!(fs::read(&csv).unwrap(), a);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let missing = dir.path().join("nowhere.alist");
    let o = mhsim(&[
        "run",
        "--config",
        &cfg,
        "--set",
        &format!("residual.code={:?}", missing.display().to_string()),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere.alist"), "{}", stderr(&o));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "hops = 3\n\n[residual]\nlevls = 9\n").unwrap();
    let o = mhsim(&["run", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("levls") && e.contains("line 4"), "{e}");

    let o = mhsim(&["run", "--config", &cfg, "--set", "schedule=\"0-3\""]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn training_stages_and_dependencies() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let o = mhsim(&["train", "--config", &cfg, "--stage", "3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("stage-2"), "{}", stderr(&o));

    let o = mhsim(&["train", "--config", &cfg, "--stage", "1"]);
    assert_eq!(
        o.status.code(),
        Some(2),
        "stage 1 needs the trainable codec"
    );

    let linear = ["--set", "codec.kind=\"trainable_linear\""];
    let weights = dir.path().join("out/codec.bin");
    let mut saved = Vec::new();
    for _ in 0..2 {
        let mut args = vec!["train", "--config", &cfg, "--stage", "1", "--seed", "7"];
        args.extend(linear);
        let o = mhsim(&args);
        assert!(o.status.success(), "{}", stderr(&o));
        saved.push(fs::read(&weights).unwrap());
    }
    assert_eq!(saved[0], saved[1]);
    let curve = fs::read_to_string(dir.path().join("out/loss_stage1.csv")).unwrap();
    let evals: Vec<f64> = curve
        .lines()
        .filter(|l| l.starts_with("eval,"))
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(evals.len(), 2);
    assert!(evals[1] < evals[0], "{evals:?}");
}

fn row(id: &str, grid: f64, seed: u64, hop: usize, psnr: f64) -> CsvRow {
    CsvRow {
        experiment_id: id.into(),
        grid_value: grid,
        trial_seed: seed,
        hop,
        psnr_recon_db: psnr,
        psnr_comp_db: psnr,
        msssim_recon: None,
        msssim_comp: None,
        semantic_reals: 3072,
        residual_channel_symbols: 0,
        residual_payload_bits: 0,
        cbr: 0.0625,
        frame_status: "disabled".into(),
    }
}

fn polyline_vertices(svg: &str) -> Vec<usize> {
    svg.lines()
        .filter(|l| l.contains("class=\"series\""))
        .map(|l| {
            let pts = l
                .split("points=\"")
                .nth(1)
                .unwrap()
                .split('"')
                .next()
                .unwrap();
            pts.split_whitespace().count()
        })
        .collect()
}

#[test]
fn plots_have_one_vertex_per_grid_point_and_a_legend() {
    let mut rows = Vec::new();
    for (i, snr) in [0.0, 5.0, 10.0, 15.0].into_iter().enumerate() {
        for t in 0..3 {
            rows.push(row("full", snr, t, 1, 20.0 + i as f64));
            rows.push(row("none", snr, t, 1, 18.0 + i as f64));
        }
    }
    let svg = plot_rows(&rows, PlotKind::Snr, Metric::Psnr).unwrap();
    assert_eq!(polyline_vertices(&svg), vec![4, 4]);
    assert_eq!(svg.matches("class=\"legend-entry\"").count(), 2);

    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("r.csv");
    let mut buf = Vec::new();
    write_csv(&mut buf, &rows).unwrap();
    fs::write(&csv, buf).unwrap();
    let out = dir.path().join("r.svg");
    let o = mhsim(&[
        "plot",
        "--csv",
        csv.to_str().unwrap(),
        "--kind",
        "snr",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        polyline_vertices(&fs::read_to_string(&out).unwrap()),
        vec![4, 4]
    );
}

#[test]
fn plot_rejects_bad_tables_without_writing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.svg");
    let empty = dir.path().join("empty.csv");
    let mut buf = Vec::new();
    write_csv(&mut buf, &[]).unwrap();
    fs::write(&empty, buf).unwrap();
    let missing = dir.path().join("missing.csv");
    fs::write(
        &missing,
        "# schema_version=1\nexperiment_id,grid_value\nx,1\n",
    )
    .unwrap();
    for csv in [&empty, &missing] {
        let o = mhsim(&[
            "plot",
            "--csv",
            csv.to_str().unwrap(),
            "--kind",
            "hops",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
        assert!(!out.exists());
    }
}

#[test]
fn gen_corpus_writes_pngs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("corpus");
    let o = mhsim(&[
        "gen-corpus",
        "--out",
        out.to_str().unwrap(),
        "--count",
        "3",
        "--size",
        "16",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut names: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, ["img_0000.png", "img_0001.png", "img_0002.png"]);
}

#[test]
fn help_documents_every_flag() {
    let expected: [(&str, &[&str]); 5] = [
        ("run", &["--config", "--set", "--seed", "--jobs"]),
        (
            "train",
            &["--config", "--set", "--seed", "--jobs", "--stage"],
        ),
        ("plot", &["--csv", "--kind", "--metric", "--out"]),
        ("gen-corpus", &["--out", "--count", "--size", "--seed"]),
        ("verify", &["--criterion", "--scratch"]),
    ];
    for (cmd, flags) in expected {
        let help = String::from_utf8(mhsim(&[cmd, "--help"]).stdout).unwrap();
        for f in flags {
            let line = help
                .lines()
                .find(|l| l.contains(f))
                .unwrap_or_else(|| panic!("{cmd} {f}"));
            assert!(
                line.trim().len() > f.len() + 8,
                "{cmd} {f} has no description"
            );
        }
    }
}

#[test]
fn default_config_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    fs::rename(&cfg, dir.path().join("mhsim.toml")).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_mhsim"))
        .args(["run", "--set", "hops=1", "--set", "residual.enabled=false"])
        .env("MHSIM_CONFIG_DIR", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("out/results.csv").exists());
}

#[test]
fn config_roundtrips_through_toml() {
    let mut cfg = Config {
        hops: 7,
        ..Config::default()
    };
    cfg.residual.qam = 64;
    cfg.sweep.grid = vec![0.0, 5.0];
    assert_eq!(Config::from_toml(&cfg.to_toml()).unwrap(), cfg);
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let default = Config::load(&dir.join("default.toml")).unwrap();
    assert_eq!(default, Config::default());
    for name in ["snr_sweep.toml", "schedule.toml", "train.toml"] {
        Config::load(&dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}
