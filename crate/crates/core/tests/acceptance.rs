//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use lppd::cli::{cmd_eval, cmd_fit_net, cmd_fit_pixel, cmd_gradcheck, cmd_infer, cmd_synth, FitNetOutput};
use lppd::config::Config;
use lppd::decomposition::{read_checkpoint_from, write_checkpoint_to, DecompParams, PredictorSharing};
use lppd::eval::{align_scale_shift, point_metrics, tuple_accuracy, PointMetrics};
use lppd::inference::{denormalize, extract_layers, suppress_peaks};
use lppd::losses::{loss_coverage, loss_intensity, normalize_scale_invariant};
use lppd::synth::{read_mld_from, sample_tuples, write_mld, write_mld_to, DepthTuple, Subset, SubsetRule, TupleRequest};
use lppd::{DepthUnits, Error, IntensityMixture, MixtureRule, MultiLayerDepthMap, Peak};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

type Res = Result<Outcome, Error>;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn random_mixture(rng: &mut ChaCha8Rng, n: usize, scales: (f64, f64)) -> IntensityMixture {
    let pairs: Vec<(f64, f64)> = (0..n).map(|_| (rng.random_range(-3.0..3.0), rng.random_range(scales.0..scales.1))).collect();
    IntensityMixture::from_pairs(&pairs).unwrap()
}

fn permutation_invariance() -> Res {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=6);
        let m = random_mixture(&mut rng, n, (1.0, 10.0));
        let mut gts: Vec<f64> = (0..rng.random_range(1..=6)).map(|_| rng.random_range(-3.0..3.0)).collect();
        let (li, lc) = (loss_intensity(&m, &gts)?, loss_coverage(&m, &gts)?);
        let mut comps = m.components().to_vec();
        comps.shuffle(&mut rng);
        gts.shuffle(&mut rng);
        let p = IntensityMixture::max_mixture(comps)?;
        worst = worst.max(rel(li, loss_intensity(&p, &gts)?)).max(rel(lc, loss_coverage(&p, &gts)?));
    }
    Ok(outcome(worst <= 1e-12, format!("1000 instances, worst relative change {worst:.1e}")))
}

fn gradient_oracles() -> Res {
    let reports = cmd_gradcheck(7, 500, None)?;
    let ok = reports.iter().all(|r| r.passed() && r.instances >= 500);
    let detail = reports
        .iter()
        .map(|r| format!("{} {:.1e}", r.suite, r.max_rel_error))
        .collect::<Vec<_>>()
        .join(", ");
    Ok(outcome(ok, format!("500 instances per suite, max rel err: {detail}")))
}

fn peak_oracle() -> Res {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let step = 1e-4;
    let mut bad = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=6);
        let m = random_mixture(&mut rng, n, (0.2, 5.0));
        let comps = m.components();
        let reach = 5.0 * comps.iter().map(|c| c.scale()).fold(0.0, f64::max);
        let lo = comps.iter().map(|c| c.center()).fold(f64::INFINITY, f64::min) - reach;
        let hi = comps.iter().map(|c| c.center()).fold(f64::NEG_INFINITY, f64::max) + reach;
        let grid: Vec<f64> = (0..=((hi - lo) / step).ceil() as usize).map(|k| lo + k as f64 * step).collect();
        let vals: Vec<f64> = grid.iter().map(|&x| m.eval(x)).collect::<Result<_, _>>()?;
        let dense: Vec<f64> = (1..grid.len() - 1)
            .filter(|&k| vals[k] > vals[k - 1] && vals[k] >= vals[k + 1])
            .map(|k| grid[k])
            .collect();
        let analytic: Vec<f64> = m.peaks()?.iter().map(|p| p.depth).collect();
        if dense.len() != analytic.len() {
            bad += 1;
            continue;
        }
        for (a, d) in analytic.iter().zip(&dense) {
            worst = worst.max((a - d).abs());
        }
    }
    Ok(outcome(
        bad == 0 && worst <= 2e-4,
        format!("1000 mixtures, {bad} count mismatches, worst offset {worst:.1e}"),
    ))
}

fn suppression() -> Res {
    let peak = |depth| Peak { depth, intensity: 0.5 };
    let merged = suppress_peaks(&[peak(1.0), peak(1.019)], 0.02).len();
    let kept = suppress_peaks(&[peak(1.0), peak(1.021)], 0.02).len();
    let m = |d: f64| IntensityMixture::from_pairs(&[(1.0, 1.0), (d, 1.0)]);
    let via_layers = (extract_layers(&m(1.019)?, 0.02, 0.05)?.len(), extract_layers(&m(1.021)?, 0.02, 0.05)?.len());
    Ok(outcome(
        merged == 1 && kept == 2 && via_layers == (1, 2),
        format!("0.019 -> {merged} peak, 0.021 -> {kept} peaks"),
    ))
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn normalization() -> Res {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (mut med, mut mad, mut inv): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..200 {
        let (h, w) = (rng.random_range(1..8), rng.random_range(2..8));
        let pixels: Vec<Vec<f64>> = (0..h * w)
            .map(|_| {
                let mut v: Vec<f64> = (0..rng.random_range(1..=3)).map(|_| rng.random_range(0.5..20.0)).collect();
                v.sort_by(f64::total_cmp);
                v.dedup();
                v
            })
            .collect();
        let raw = MultiLayerDepthMap::from_pixels(h, w, DepthUnits::Raw, pixels)?;
        let n = normalize_scale_invariant(&raw)?;
        let all = n.map.all_depths();
        med = med.max(median(all).abs());
        mad = mad.max((all.iter().map(|d| d.abs()).sum::<f64>() / all.len() as f64 - 1.0).abs());
        for p in 0..raw.len() {
            for (a, b) in denormalize(n.map.pixel(p), n.shift, n.scale)?.iter().zip(raw.pixel(p)) {
                inv = inv.max(rel(*a, *b));
            }
        }
    }
    Ok(outcome(
        med <= 1e-12 && mad <= 1e-12 && inv <= 1e-12,
        format!("200 maps, |median| {med:.1e}, |mean abs - 1| {mad:.1e}, inverse rel err {inv:.1e}"),
    ))
}

fn pixel_recovery(dir: &Path) -> Res {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let n = 20;
    let pixels: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let a: f64 = rng.random_range(-2.0..1.5);
            vec![a, a + rng.random_range(0.5..2.5)]
        })
        .collect();
    let gt = MultiLayerDepthMap::from_pixels(1, n, DepthUnits::Normalized, pixels)?;
    let path = dir.join("pixels.mld");
    write_mld(&gt, &path)?;
    let mut cfg = Config::default();
    cfg.pixel_fit.components = 4;
    cfg.pixel_run.seeds = 10;
    let outcomes = cmd_fit_pixel(&cfg, &path, &dir.join("pixel_fit"))?;
    let mut per_pixel: BTreeMap<usize, usize> = BTreeMap::new();
    for o in &outcomes {
        *per_pixel.entry(o.x).or_default() += o.recovered as usize;
    }
    let worst = per_pixel.values().copied().min().unwrap_or(0);
    Ok(outcome(
        per_pixel.len() == n && worst >= 9,
        format!("{n} pixels x 10 seeds, worst pixel {worst}/10"),
    ))
}

fn toy_config() -> Result<Config, Error> {
    Config::load(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy_fit.toml"))
}

struct ToyRun {
    fit: FitNetOutput,
    pred: MultiLayerDepthMap,
    quad_all: f64,
    quad_mixed: f64,
    quad_count: usize,
    point: Vec<PointMetrics>,
}

fn toy_run(cfg: &Config, data: &Path, out: &Path) -> Result<ToyRun, Error> {
    let fit = cmd_fit_net(cfg, &data.join("features.fea"), &data.join("gt.mld"), &out.join("fit"))?;
    let fit_dir = out.join("fit");
    let pred = cmd_infer(
        cfg,
        &fit_dir.join("params.ckpt"),
        &data.join("features.fea"),
        Some(&fit_dir.join("normalization.toml")),
        &out.join("infer"),
    )?;
    let report = cmd_eval(cfg, &out.join("infer/pred.mld"), &data.join("gt.mld"), Some(&data.join("tuples.csv")), None)?;
    let t = report.tuples.as_ref().expect("tuples scored");
    Ok(ToyRun {
        fit,
        pred,
        quad_all: t.accuracy(4, Subset::All).unwrap_or(0.0),
        quad_mixed: t.accuracy(4, Subset::Mixed).unwrap_or(0.0),
        quad_count: t.cell(4, Subset::All).map_or(0, |c| c.total),
        point: report.layers.iter().map(|l| l.metrics).collect(),
    })
}

fn end_to_end(run: &ToyRun, gt: &MultiLayerDepthMap, elapsed: Duration) -> Res {
    let same = (0..gt.len()).filter(|&p| run.pred.layer_count(p) == gt.layer_count(p)).count();
    let acc = same as f64 / gt.len() as f64;
    Ok(outcome(
        acc >= 0.95 && run.quad_count == 10_000 && run.quad_all >= 0.95 && elapsed < Duration::from_secs(600),
        format!(
            "layer count {:.2}%, Q {:.2}% on {} quadruplets, {:.0} s",
            100.0 * acc,
            100.0 * run.quad_all,
            run.quad_count,
            elapsed.as_secs_f64()
        ),
    ))
}

fn brute_force_correct(pred: &MultiLayerDepthMap, t: &DepthTuple) -> bool {
    let w = pred.width();
    let value = |i: usize| {
        let e = &t.entries[i];
        pred.pixel(e.y * w + e.x).get(e.layer - 1).copied()
    };
    for i in 0..t.entries.len() {
        for j in i + 1..t.entries.len() {
            match (value(i), value(j)) {
                (Some(a), Some(b)) if a < b => {}
                _ => return false,
            }
        }
    }
    true
}

fn metric_oracles(extra: &[PointMetrics]) -> Res {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let (h, w) = (16, 16);
    let mut gt_px = Vec::new();
    let mut pred_px = Vec::new();
    for _ in 0..h * w {
        let mut g: Vec<f64> = (0..rng.random_range(1..=3)).map(|_| rng.random_range(1.0..10.0)).collect();
        g.sort_by(f64::total_cmp);
        let mut p: Vec<f64> = g.iter().map(|d| d + rng.random_range(-0.8..0.8)).collect();
        p.sort_by(f64::total_cmp);
        if rng.random_bool(0.1) {
            p.pop();
        }
        gt_px.push(g);
        pred_px.push(p);
    }
    let gt = MultiLayerDepthMap::from_pixels(h, w, DepthUnits::Raw, gt_px)?;
    let pred = MultiLayerDepthMap::from_pixels(h, w, DepthUnits::Raw, pred_px)?;
    let requests = [(2, 3000), (3, 3000), (4, 4000)].map(|(arity, count)| TupleRequest {
        arity,
        count,
        rule: SubsetRule::Any,
    });
    let tuples = sample_tuples(&gt, &requests, 0.01, 16)?;
    let report = tuple_accuracy(&pred, &tuples);
    let mut brute: BTreeMap<(usize, Subset), (usize, usize)> = BTreeMap::new();
    for t in &tuples.tuples {
        let first = t.entries[0].layer;
        let tag = if t.entries.iter().all(|e| e.layer == first) {
            Subset::Layer(first)
        } else {
            Subset::Mixed
        };
        let ok = brute_force_correct(&pred, t) as usize;
        for key in [(t.arity(), Subset::All), (t.arity(), tag)] {
            let c = brute.entry(key).or_default();
            c.0 += ok;
            c.1 += 1;
        }
    }
    let tuples_match = tuples.tuples.len() == 10_000
        && brute.len() == report.cells.len()
        && brute.iter().all(|(k, &(ok, n))| report.cell(k.0, k.1).is_some_and(|c| c.correct == ok && c.total == n));

    let mut align_err: f64 = 0.0;
    let mut deltas_ok = extra.iter().all(|m| m.delta2 >= m.delta1);
    for _ in 0..1000 {
        let n = rng.random_range(2..200);
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..10.0)).collect();
        let (a, b) = (rng.random_range(0.2..3.0), rng.random_range(-2.0..2.0));
        let g: Vec<f64> = p.iter().map(|x| a * x + b + rng.random_range(-0.5..0.5)).collect();
        let valid: Vec<bool> = (0..n).map(|i| i < 2 || rng.random_bool(0.8)).collect();
        let (s, t) = align_scale_shift(&p, &g, &valid)?;
        // normal equations [spp sp; sp n] [s t]' = [spg sg]', solved by Cramer's rule
        let (mut spp, mut sp, mut spg, mut sg, mut cnt) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in (0..n).filter(|&i| valid[i]) {
            spp += p[i] * p[i];
            sp += p[i];
            spg += p[i] * g[i];
            sg += g[i];
            cnt += 1.0;
        }
        let det = spp * cnt - sp * sp;
        let s_ref = (spg * cnt - sp * sg) / det;
        let t_ref = (spp * sg - sp * spg) / det;
        align_err = align_err.max((s - s_ref).abs() / s_ref.abs().max(1.0)).max((t - t_ref).abs() / t_ref.abs().max(1.0));
        let aligned: Vec<f64> = p.iter().map(|x| s * x + t).collect();
        let m = point_metrics(&aligned, &g)?;
        deltas_ok &= m.delta2 >= m.delta1;
    }
    Ok(outcome(
        tuples_match && align_err <= 1e-10 && deltas_ok,
        format!(
            "10000 tuples {}, alignment err {align_err:.1e}, delta2 >= delta1 {}",
            if tuples_match { "match" } else { "DIFFER" },
            if deltas_ok { "everywhere" } else { "VIOLATED" }
        ),
    ))
}

fn format_offset(e: Result<impl std::fmt::Debug, Error>) -> Option<u64> {
    match e {
        Err(Error::Format { offset, .. }) => Some(offset),
        _ => None,
    }
}

fn format_round_trips() -> Res {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut failures = Vec::new();
    for case in 0..200 {
        let units = if case % 2 == 0 { DepthUnits::Raw } else { DepthUnits::Normalized };
        let (h, w) = (rng.random_range(1..6), rng.random_range(1..6));
        let pixels: Vec<Vec<f64>> = (0..h * w)
            .map(|_| {
                let lo = if units == DepthUnits::Raw { 0.1 } else { -5.0 };
                let mut v: Vec<f64> = (0..rng.random_range(0..=4)).map(|_| rng.random_range(lo..5.0f32 as f64) as f32 as f64).collect();
                v.sort_by(f64::total_cmp);
                v.dedup();
                v
            })
            .collect();
        let map = MultiLayerDepthMap::from_pixels(h, w, units, pixels)?;
        let mut a = Vec::new();
        write_mld_to(&map, &mut a)?;
        let back = read_mld_from(&a[..])?;
        let mut b = Vec::new();
        write_mld_to(&back, &mut b)?;
        if back != map || a != b {
            failures.push(format!("mld case {case} not bitwise"));
        }
        let cut = rng.random_range(0..a.len());
        match format_offset(read_mld_from(&a[..cut])) {
            Some(off) if off as usize <= cut && cut < off as usize + 4 => {}
            other => failures.push(format!("mld truncated at {cut}: {other:?}")),
        }
    }
    let mut bad = Vec::new();
    write_mld_to(&MultiLayerDepthMap::from_pixels(1, 1, DepthUnits::Raw, vec![vec![1.0, 2.0]])?, &mut bad)?;
    bad[18..22].copy_from_slice(&0.5f32.to_le_bytes());
    if format_offset(read_mld_from(&bad[..])) != Some(18) {
        failures.push("non-increasing depth offset".into());
    }
    bad[0] = b'X';
    if format_offset(read_mld_from(&bad[..])) != Some(0) {
        failures.push("mld bad magic offset".into());
    }

    for case in 0..50 {
        let sharing = if case % 2 == 0 {
            PredictorSharing::Shared
        } else {
            PredictorSharing::PerIteration
        };
        let params = DecompParams::init(rng.random_range(1..6), rng.random_range(1..6), rng.random_range(2..5), sharing, 1.0, case)?;
        let mut a = Vec::new();
        write_checkpoint_to(&params, &mut a)?;
        let back = read_checkpoint_from(&a[..])?;
        let mut b = Vec::new();
        write_checkpoint_to(&back, &mut b)?;
        if back != params || a != b {
            failures.push(format!("checkpoint case {case} not bitwise"));
        }
        let cut = rng.random_range(0..a.len());
        match format_offset(read_checkpoint_from(&a[..cut])) {
            Some(off) if off as usize <= cut && cut < off as usize + 8 => {}
            other => failures.push(format!("checkpoint truncated at {cut}: {other:?}")),
        }
        let mut wrong = a.clone();
        wrong[0] = b'Q';
        if format_offset(read_checkpoint_from(&wrong[..])) != Some(0) {
            failures.push("checkpoint bad magic offset".into());
        }
        let mut version = a.clone();
        version[4] = 9;
        if format_offset(read_checkpoint_from(&version[..])) != Some(4) {
            failures.push("checkpoint bad version offset".into());
        }
    }
    let detail = if failures.is_empty() {
        "200 MLD1 maps and 50 checkpoints bitwise, malformed inputs located".to_string()
    } else {
        failures.join("; ")
    };
    Ok(outcome(failures.is_empty(), detail))
}

struct Report {
    lines: Vec<(String, Outcome, Duration)>,
}

impl Report {
    fn record(&mut self, name: &str, f: impl FnOnce() -> Res) {
        let t0 = Instant::now();
        let out = f().unwrap_or_else(|e| outcome(false, format!("error: {e}")));
        let dt = t0.elapsed();
        println!("{} {name}: {} [{:.1} s]", if out.passed { "PASS" } else { "FAIL" }, out.detail, dt.as_secs_f64());
        let _ = std::io::stdout().flush();
        self.lines.push((name.to_string(), out, dt));
    }
}

fn main() {
    // libtest flags such as --nocapture are accepted and ignored
    let tmp = tempfile::tempdir().expect("temp dir");
    let dir: PathBuf = tmp.path().to_path_buf();
    let mut report = Report { lines: Vec::new() };
    let time_limit = |limit: u64, f: fn() -> Res| {
        move || {
            let t0 = Instant::now();
            let mut o = f()?;
            if t0.elapsed() > Duration::from_secs(limit) {
                o.passed = false;
                o.detail.push_str(&format!(", over the {limit} s limit"));
            }
            Ok(o)
        }
    };

    report.record("permutation invariance", time_limit(10, permutation_invariance));
    report.record("gradient oracles", time_limit(60, gradient_oracles));
    report.record("peak oracle", time_limit(60, peak_oracle));
    report.record("suppression semantics", suppression);
    report.record("normalization identities", normalization);
    report.record("per-pixel recovery", || {
        let t0 = Instant::now();
        let mut o = pixel_recovery(&dir)?;
        if t0.elapsed() > Duration::from_secs(120) {
            o.passed = false;
            o.detail.push_str(", over the 120 s limit");
        }
        Ok(o)
    });

    // toy experiments: one data set, max-mixture and ordered fits over three seeds
    let mut runs: Vec<(MixtureRule, u64, Result<ToyRun, String>)> = Vec::new();
    let mut main_elapsed = Duration::ZERO;
    let setup = toy_config().and_then(|cfg| Ok((cmd_synth(&cfg, &dir.join("toy"))?, cfg)));
    match &setup {
        Ok((_, cfg)) => {
            for rule in [MixtureRule::MaxMixture, MixtureRule::Ordered] {
                for seed in 0..3u64 {
                    let mut c = cfg.clone();
                    c.fit.rule = rule;
                    c.fit.seed = seed;
                    let t0 = Instant::now();
                    let out = dir.join(format!("run_{rule:?}_{seed}"));
                    let r = toy_run(&c, &dir.join("toy"), &out).map_err(|e| e.to_string());
                    if rule == MixtureRule::MaxMixture && seed == cfg.fit.seed {
                        main_elapsed = t0.elapsed();
                    }
                    runs.push((rule, seed, r));
                }
            }
        }
        Err(e) => println!("toy setup failed: {e}"),
    }
    let main_seed = setup.as_ref().map(|(_, c)| c.fit.seed).unwrap_or(0);
    let main_run = runs.iter().find(|(r, s, _)| *r == MixtureRule::MaxMixture && *s == main_seed);

    report.record("eta identity", || {
        let mut worst: f64 = 0.0;
        let mut fits = 0;
        for (_, _, r) in &runs {
            let run = r.as_ref().map_err(|e| Error::InvalidArgument(e.clone()))?;
            worst = worst.max(run.fit.result.max_eta_identity_error());
            fits += 1;
        }
        Ok(outcome(
            fits == 6 && worst <= 1e-12,
            format!("every step of {fits} fits, worst relative error {worst:.1e}"),
        ))
    });
    report.record("end-to-end toy fit", || match (&setup, main_run) {
        (Ok((synth, _)), Some((_, _, Ok(run)))) => end_to_end(run, &synth.gt, main_elapsed),
        (_, Some((_, _, Err(e)))) => Ok(outcome(false, e.clone())),
        _ => Ok(outcome(false, "toy fit did not run")),
    });
    let pipeline_metrics: Vec<PointMetrics> = runs.iter().filter_map(|(_, _, r)| r.as_ref().ok()).flat_map(|r| r.point.clone()).collect();
    report.record("metric oracles", || metric_oracles(&pipeline_metrics));
    report.record("ablation direction", || {
        let mut per_seed = Vec::new();
        let mut all_ok = true;
        let (mut sum_max, mut sum_ord) = (0.0, 0.0);
        for seed in 0..3u64 {
            let get = |rule| {
                runs.iter()
                    .find(|(r, s, _)| *r == rule && *s == seed)
                    .and_then(|(_, _, r)| r.as_ref().ok())
                    .map(|r| r.quad_mixed)
            };
            match (get(MixtureRule::MaxMixture), get(MixtureRule::Ordered)) {
                (Some(a), Some(b)) => {
                    all_ok &= a >= b;
                    sum_max += a;
                    sum_ord += b;
                    per_seed.push(format!("seed {seed}: max {:.2}% vs ordered {:.2}%", 100.0 * a, 100.0 * b));
                }
                _ => {
                    all_ok = false;
                    per_seed.push(format!("seed {seed}: missing run"));
                }
            }
        }
        Ok(outcome(
            all_ok && sum_max >= sum_ord,
            format!("Mixed Q, {}", per_seed.join("; ")),
        ))
    });
    report.record("format round trips", format_round_trips);

    let failed = report.lines.iter().filter(|(_, o, _)| !o.passed).count();
    println!("{} of {} criteria passed", report.lines.len() - failed, report.lines.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
