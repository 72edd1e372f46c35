//! Subcommand bodies. Each returns the text meant for standard output and
//! writes its files itself.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use ujscc_core::channel::{analytic_ser, measure_ser};
use ujscc_core::codec::{ArchitectureConfig, Setting, System};
use ujscc_core::data::{load_cifar10, split_train_val, synthetic_dataset, ImageDataset, Split};
use ujscc_core::nn::SeededRng;
use ujscc_core::pipeline::{
    evaluate_sweep, gradcheck_training_graph, history_csv, modulation_name, sweep_csv, train, TrainingScheme,
};

use crate::checkpoint::Checkpoint;
use crate::config::{DatasetSpec, RunConfig};

const INIT_STREAM: u64 = 1 << 42;
const TEST_STREAM: u64 = 1 << 43;

pub const MODEL_FILE: &str = "model.ujsc";
pub const HISTORY_FILE: &str = "history.csv";

pub fn build_system(cfg: &RunConfig) -> Result<System> {
    let arch = cfg.arch()?;
    Ok(System::build(&arch, cfg.scheme.variant(), &mut SeededRng::derive(cfg.seed, INIT_STREAM))?)
}

/// Training and validation sets for a run.
pub fn load_training_data(cfg: &RunConfig) -> Result<(ImageDataset, ImageDataset)> {
    let mut ds = match cfg.resolve_dataset()? {
        DatasetSpec::Synthetic(n) => synthetic_dataset(n, cfg.seed)?,
        DatasetSpec::Cifar(dir) => load_cifar10(&dir, Split::Train)?,
    };
    if let Some(n) = cfg.limit {
        ds = ds.take(n.min(ds.len()))?;
    }
    ensure!(ds.len() >= 2, "need at least two training images, have {}", ds.len());
    Ok(split_train_val(&ds, cfg.val_fraction, cfg.seed)?)
}

/// Held-out images: the CIFAR-10 test batch, or synthetic images from a
/// stream disjoint from training.
pub fn load_test_data(spec: &DatasetSpec, seed: u64, limit: Option<usize>) -> Result<ImageDataset> {
    let ds = match spec {
        DatasetSpec::Synthetic(n) => synthetic_dataset(*n, seed ^ TEST_STREAM)?,
        DatasetSpec::Cifar(dir) => load_cifar10(dir, Split::Test)?,
    };
    match limit {
        Some(n) => Ok(ds.take(n.min(ds.len()))?),
        None => Ok(ds),
    }
}

fn band_file(k: usize) -> String {
    format!("te.{}.ujsc", k + 1)
}

/// Trains, then writes `model.ujsc` and `history.csv` into the output
/// directory. TE also writes one `te.{k}.ujsc` per band holding only that
/// band's codec and codebook.
pub fn cmd_train(cfg: &RunConfig) -> Result<String> {
    let arch = cfg.arch()?;
    let tc = cfg.train_config(&arch)?;
    let (train_set, val) = load_training_data(cfg)?;
    let mut sys = build_system(cfg)?;
    let outcome = train(&mut sys, cfg.scheme, &train_set, &val, &tc)?;

    std::fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let text = cfg.snapshot();
    let ck = Checkpoint::from_system(&mut sys, &text, None);
    ck.save(&cfg.out.join(MODEL_FILE))?;
    let history = history_csv(&outcome.history, arch.num_orders());
    let hist_path = cfg.out.join(HISTORY_FILE);
    std::fs::write(&hist_path, &history).with_context(|| format!("writing {}", hist_path.display()))?;
    if cfg.scheme == TrainingScheme::Te {
        for k in 0..arch.num_orders() {
            let codec = format!("codec{k}.");
            let book = format!("codebook.{k}");
            ck.subset(|n| n.starts_with(&codec) || n == book).save(&cfg.out.join(band_file(k)))?;
        }
    }

    let mut s = String::new();
    writeln!(
        s,
        "trained {} {} on {} images ({} validation), {} epochs logged",
        cfg.setting,
        cfg.scheme,
        train_set.len(),
        val.len(),
        outcome.history.len()
    )?;
    for (stage, epoch, loss) in &outcome.best {
        writeln!(s, "  {stage}: best validation loss {loss:.6} at epoch {epoch}")?;
    }
    writeln!(s, "wrote {} and {}", cfg.out.join(MODEL_FILE).display(), hist_path.display())?;
    Ok(s)
}

/// Rebuilds a system from one or more checkpoints. Several files must share
/// one configuration and together cover every tensor exactly once.
pub fn load_model(paths: &[PathBuf]) -> Result<(RunConfig, System)> {
    let Some(first) = paths.first() else {
        bail!("no checkpoint given");
    };
    let cks = paths.iter().map(|p| Checkpoint::load(p)).collect::<Result<Vec<_>>>()?;
    for (p, ck) in paths.iter().zip(&cks).skip(1) {
        ensure!(ck.config == cks[0].config, "{} was written by a different run than {}", p.display(), first.display());
    }
    let cfg = RunConfig::parse(&cks[0].config).context("checkpoint configuration")?;
    let mut sys = build_system(&cfg)?;
    let mut seen = BTreeSet::new();
    for (p, ck) in paths.iter().zip(&cks) {
        for name in ck.restore_into(&mut sys).with_context(|| format!("restoring {}", p.display()))? {
            ensure!(seen.insert(name.clone()), "`{name}` appears in more than one checkpoint");
        }
    }
    let missing: Vec<String> = sys.state_mut().into_iter().map(|(n, _)| n).filter(|n| !seen.contains(n)).collect();
    ensure!(missing.is_empty(), "checkpoints do not cover {} tensors, e.g. `{}`", missing.len(), missing[0]);
    Ok((cfg, sys))
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub checkpoints: Vec<PathBuf>,
    pub snr_grid: Vec<f64>,
    pub trials: usize,
    pub dataset: Option<DatasetSpec>,
    pub limit: Option<usize>,
    pub batch_size: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

/// Metrics per SNR as CSV: `snr_db,k,modulation,mse,psnr,ssim,ser`.
pub fn cmd_eval(opts: &EvalOptions) -> Result<String> {
    ensure!(!opts.snr_grid.is_empty(), "empty SNR grid");
    let (cfg, mut sys) = load_model(&opts.checkpoints)?;
    let spec = match &opts.dataset {
        Some(d) => d.clone(),
        None => cfg.resolve_dataset()?,
    };
    let data = load_test_data(&spec, cfg.seed, opts.limit)?;
    let points = evaluate_sweep(&mut sys, &data, &opts.snr_grid, &cfg.policy()?, opts.trials, opts.batch_size, opts.seed)?;
    let csv = sweep_csv(&points);
    write_optional(opts.out.as_deref(), &csv)?;
    Ok(csv)
}

/// `from, from + step, …` up to and including `to`.
pub fn snr_range(from: f64, to: f64, step: f64) -> Result<Vec<f64>> {
    ensure!(step > 0.0 && to >= from, "need step > 0 and to >= from");
    let n = ((to - from) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| from + i as f64 * step).collect())
}

fn write_optional(path: Option<&Path>, text: &str) -> Result<()> {
    if let Some(p) = path {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn arch_for(setting: Setting, c1: Option<usize>, c2: Option<usize>) -> Result<ArchitectureConfig> {
    let cfg = RunConfig {
        setting,
        c1,
        c2,
        ..RunConfig::default()
    };
    cfg.arch()
}

/// Parameter totals and the per-layer breakdown.
pub fn cmd_params(setting: Setting, scheme: TrainingScheme, c1: Option<usize>, c2: Option<usize>) -> Result<String> {
    let arch = arch_for(setting, c1, c2)?;
    let sys = System::build(&arch, scheme.variant(), &mut SeededRng::new(0))?;
    let count = sys.param_count();
    let mut s = format!("setting={setting} scheme={scheme} total={} bn={}\n", count.total, count.bn);
    s.push_str("layer,weights,bn\n");
    for (name, c) in &count.layers {
        writeln!(s, "{name},{},{}", c.weights, c.bn)?;
    }
    Ok(s)
}

/// FLOPs per order as CSV: `k,modulation,encoder,decoder,inner_encoder,inner_decoder`.
pub fn cmd_flops(
    setting: Setting,
    scheme: TrainingScheme,
    k: Option<usize>,
    c1: Option<usize>,
    c2: Option<usize>,
) -> Result<String> {
    let arch = arch_for(setting, c1, c2)?;
    let sys = System::build(&arch, scheme.variant(), &mut SeededRng::new(0))?;
    let ks: Vec<usize> = match k {
        Some(k) => {
            ensure!(k >= 1 && k <= arch.num_orders(), "k must lie in 1..={}", arch.num_orders());
            vec![k - 1]
        }
        None => (0..arch.num_orders()).collect(),
    };
    let mut s = String::from("k,modulation,encoder,decoder,inner_encoder,inner_decoder\n");
    for k in ks {
        let f = sys.flops(k)?;
        writeln!(
            s,
            "{},{},{},{},{},{}",
            k + 1,
            modulation_name(arch.orders[k]),
            f.encoder,
            f.decoder,
            f.inner_encoder,
            f.inner_decoder
        )?;
    }
    Ok(s)
}

/// Monte-Carlo against closed-form SER as CSV:
/// `m,snr_db,trials,ser_mc,ser_analytic,std_err`. The standard error is the
/// binomial one at the closed-form rate.
pub fn cmd_ser(orders: &[usize], snr_grid: &[f64], trials: u64, seed: u64, out: Option<&Path>) -> Result<String> {
    ensure!(trials > 0, "trials must be positive");
    let mut s = String::from("m,snr_db,trials,ser_mc,ser_analytic,std_err\n");
    let mut i = 0;
    for &m in orders {
        for &snr in snr_grid {
            let est = measure_ser(m, snr, trials, &mut SeededRng::derive(seed, i))?;
            let p = analytic_ser(m, snr)?;
            writeln!(s, "{m},{snr},{trials},{},{p},{}", est.ser(), est.std_err_at(p))?;
            i += 1;
        }
    }
    write_optional(out, &s)?;
    Ok(s)
}

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    pub setting: Setting,
    pub c1: Option<usize>,
    pub c2: Option<usize>,
    pub orders: Vec<usize>,
    pub per_tensor: usize,
    pub batch: usize,
    pub seed: u64,
    pub tolerance: f64,
}

/// Finite-difference check of the noiseless uJSCC training graph. Returns
/// the report and whether every order passed.
pub fn cmd_gradcheck(o: &GradcheckOptions) -> Result<(String, bool)> {
    let arch = arch_for(o.setting, o.c1, o.c2)?;
    let cfg = RunConfig {
        setting: o.setting,
        seed: o.seed,
        ..RunConfig::default()
    };
    let tc = cfg.train_config(&arch)?;
    let sys = System::build(&arch, TrainingScheme::Ujscc.variant(), &mut SeededRng::derive(o.seed, INIT_STREAM))?;
    let x = synthetic_dataset(o.batch.max(1), o.seed)?.slice(0, o.batch.max(1))?;
    let mut s = String::from("k,modulation,checked,skipped,max_rel_error,result\n");
    let mut ok = true;
    for &k in &o.orders {
        ensure!(k >= 1 && k <= arch.num_orders(), "k must lie in 1..={}", arch.num_orders());
        let r = gradcheck_training_graph(&sys, &x, k - 1, tc.weights(k - 1), o.per_tensor, o.tolerance)?;
        ok &= r.passed();
        writeln!(
            s,
            "{k},{},{},{},{:e},{}",
            modulation_name(arch.orders[k - 1]),
            r.checked,
            r.skipped,
            r.max_rel_error,
            if r.passed() { "PASS" } else { "FAIL" }
        )?;
    }
    Ok((s, ok))
}
