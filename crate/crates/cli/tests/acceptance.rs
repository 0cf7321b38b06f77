//! Acceptance suite: one PASS/FAIL line per check, grouped by criterion.
//! `OICA_ACCEPT=1,3` runs a subset; `OICA_CIFAR_BATCH=path` adds the check
//! on a real CIFAR-10 training batch. Failures are reported but only change
//! the exit status under `OICA_ACCEPT_STRICT=1`.

use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{StandardNormal, Uniform};

use overica::corela::{
    hungarian, orthonormalize_columns, project_psd_trace1, project_simplex, read_coords, sym_dim, write_coords, SymMatrix,
};
use overica::deflation::{
    estimate_subspace, overica, semi_adaptive_deflation, DeflationConfig, OverIcaConfig, Step1,
};
use overica::metrics::{a_error_partial, default_recovery_angle, perfect_count, RecoveryVector};
use overica::mixing::MixingMatrix;
use overica::moments::{gencov, kurtosis, sample_covariance, sample_probes, default_probe_scale, SampleMatrix};
use overica::solver::{fista_from, relax_objective, solve_exact_reference, SolverConfig};
use overica::subspace::population_basis;
use overica::synth::{sample_ica, sample_mixing, SamplingMode, SamplingSpec, SourceLaw};
use overica::theorylab::{dual_certificate, fit_ellipsoid, phase_transition, random_symmetric, theorem_model_points};
use overica_cli::cifar::{self, RECORD_LEN};
use overica_cli::commands::{cifar_estimate, CifarEstimateConfig};

struct Counting;

static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc(layout);
        if !p.is_null() {
            let now = CURRENT.fetch_add(layout.size(), Ordering::Relaxed) + layout.size();
            PEAK.fetch_max(now, Ordering::Relaxed);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout);
        CURRENT.fetch_sub(layout.size(), Ordering::Relaxed);
    }
}

#[global_allocator]
static ALLOC: Counting = Counting;

/// Runs `f` and returns its result with the peak heap growth during the call.
fn peak_bytes<T>(f: impl FnOnce() -> T) -> (T, usize) {
    let base = CURRENT.load(Ordering::Relaxed);
    PEAK.store(base, Ordering::Relaxed);
    let out = f();
    (out, PEAK.load(Ordering::Relaxed).saturating_sub(base))
}

#[derive(Default)]
struct Report {
    pass: usize,
    fail: usize,
    skip: usize,
}

impl Report {
    fn check(&mut self, id: &str, ok: bool, detail: String) {
        if ok {
            self.pass += 1;
        } else {
            self.fail += 1;
        }
        println!("{} [{id}] {detail}", if ok { "PASS" } else { "FAIL" });
    }

    fn skip(&mut self, id: &str, detail: &str) {
        self.skip += 1;
        println!("SKIP [{id}] {detail}");
    }
}

fn gaussian_mixing(p: usize, k: usize, rng: &mut ChaCha8Rng) -> MixingMatrix {
    MixingMatrix::normalized(DMatrix::from_fn(p, k, |_, _| rng.sample(StandardNormal))).unwrap()
}

fn c1_population_recovery(r: &mut Report) {
    let t0 = Instant::now();
    let p = 10;
    let mut fractions = Vec::new();
    for k in [5usize, 10, 15, 20, 25, 40] {
        let mut recovered = 0;
        for t in 0..10u64 {
            let d = sample_mixing(&SamplingSpec::new(p, k, SamplingMode::Normal, 1000 + t)).unwrap();
            let basis = population_basis(&d).unwrap();
            let cfg = DeflationConfig { seed: t, ..Default::default() };
            let out = semi_adaptive_deflation(&basis, k, &SolverConfig::default(), &cfg).unwrap();
            recovered += (0..k)
                .filter(|&i| out.atoms.iter().any(|a| a.dot(&d.column(i)).abs() >= 0.99))
                .count();
        }
        let frac = recovered as f64 / (10 * k) as f64;
        if k <= 25 {
            r.check("1", frac >= 0.95, format!("p=10 k={k}: recovered fraction {frac:.3} (need >= 0.95)"));
        }
        fractions.push((k, frac));
    }
    let at = |k: usize| fractions.iter().find(|f| f.0 == k).unwrap().1;
    r.check(
        "1",
        at(40) < at(25),
        format!("degradation: fraction at k=40 {:.3} < at k=25 {:.3}", at(40), at(25)),
    );
    let secs = t0.elapsed().as_secs_f64();
    r.check("1", secs < 600.0, format!("runtime {secs:.0}s (< 600s)"));
}

fn c2_phase_transition(r: &mut Report) {
    let t0 = Instant::now();
    let ks: Vec<usize> = (5..=60).step_by(5).collect();
    let n_rep = 20;
    let grid = phase_transition(&[8, 10, 12], &ks, n_rep, 2024).unwrap();
    let sigma = |q: f64| 3.0 * (q * (1.0 - q) / n_rep as f64).sqrt();
    let (lo, hi) = (0.9 - sigma(0.9), 0.3 + sigma(0.3));
    let mut low_ok = true;
    let mut high_ok = true;
    let mut notes = Vec::new();
    for c in &grid.cells {
        let (p, k) = (c.p as f64, c.k as f64);
        if k <= p * p / 4.0 - 2.0 && c.success_fraction < lo {
            low_ok = false;
            notes.push(format!("p={} k={} {:.2}", c.p, c.k, c.success_fraction));
        }
        if k >= p * (p - 1.0) / 2.0 && c.success_fraction > hi {
            high_ok = false;
            notes.push(format!("p={} k={} {:.2}", c.p, c.k, c.success_fraction));
        }
    }
    let min_low = grid
        .cells
        .iter()
        .filter(|c| (c.k as f64) <= (c.p * c.p) as f64 / 4.0 - 2.0)
        .map(|c| c.success_fraction)
        .fold(1.0, f64::min);
    let max_high = grid
        .cells
        .iter()
        .filter(|c| (c.k as f64) >= (c.p * (c.p - 1)) as f64 / 2.0)
        .map(|c| c.success_fraction)
        .fold(0.0, f64::max);
    r.check(
        "2",
        low_ok,
        format!("k <= p²/4-2: min success {min_low:.2} (need >= 0.9 - 3σ = {lo:.3}) {notes:?}"),
    );
    r.check(
        "2",
        high_ok,
        format!("k >= p(p-1)/2: max success {max_high:.2} (need <= 0.3 + 3σ = {hi:.3})"),
    );
    let secs = t0.elapsed().as_secs_f64();
    r.check("2", secs < 1800.0, format!("runtime {secs:.0}s (< 1800s)"));
}

fn c3_finite_sample(r: &mut Report) {
    let t0 = Instant::now();
    let (p, k) = (15, 30);
    let mut med = Vec::new();
    let mut rec = Vec::new();
    for n in [1000usize, 10_000, 200_000] {
        let mut errs = Vec::new();
        let mut hits = 0;
        for t in 0..10u64 {
            let d = sample_mixing(&SamplingSpec::new(p, k, SamplingMode::Normal, t)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(100 + t);
            let x = sample_ica(&d, n, &SourceLaw::Uniform, &mut rng).unwrap();
            let cfg = OverIcaConfig { seed: t, ..Default::default() };
            let out = overica(&x, k, &cfg).unwrap();
            errs.push(a_error_partial(&d, &out.mixing).unwrap());
            hits += perfect_count(&d, &out.mixing, default_recovery_angle()).unwrap();
        }
        errs.sort_by(f64::total_cmp);
        let m = (errs[4] + errs[5]) / 2.0;
        let f = hits as f64 / (10 * k) as f64;
        println!("     n={n}: median a-error {m:.4}, recovery fraction at 8° {f:.3}");
        med.push(m);
        rec.push(f);
    }
    r.check(
        "3",
        med[2] < med[0],
        format!("median a-error n=200k {:.4} < n=1k {:.4}", med[2], med[0]),
    );
    r.check(
        "3",
        rec[2] > rec[1],
        format!("recovery at 8°: n=200k {:.3} > n=10k {:.3}", rec[2], rec[1]),
    );
    let secs = t0.elapsed().as_secs_f64();
    r.check("3", secs < 1800.0, format!("runtime {secs:.0}s (< 1800s)"));
}

fn c4_moments(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    // (a) t = 0 is the sample covariance.
    let a = DMatrix::from_fn(6, 6, |_, _| rng.sample::<f64, _>(StandardNormal));
    let z = DMatrix::from_fn(6, 5000, |_, _| rng.sample::<f64, _>(Uniform::new(-1.0, 1.0).unwrap()));
    let x = SampleMatrix::new(&a * z).unwrap();
    let g0 = gencov(&x, &DVector::zeros(6)).unwrap();
    let diff = (g0.hessian.matrix() - sample_covariance(&x).matrix()).amax();
    r.check("4a", diff <= 1e-12, format!("max |gencov(0) - cov| = {diff:.2e} (<= 1e-12)"));

    // (b) Gaussian data: the generalized covariance does not depend on t.
    let n = 1_000_000;
    let p = 4;
    let l = DMatrix::from_fn(p, p, |i, j| if j <= i { 1.0 / (1.0 + i as f64 + j as f64) } else { 0.0 });
    let z = DMatrix::from_fn(p, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let x = SampleMatrix::new(&l * z).unwrap();
    let sigma = &l * l.transpose();
    let c0 = gencov(&x, &DVector::zeros(p)).unwrap();
    let probes = sample_probes(p, 10, default_probe_scale(&x), &mut rng).unwrap();
    let worst = probes
        .iter()
        .map(|t| (gencov(&x, t).unwrap().hessian.matrix() - c0.hessian.matrix()).norm())
        .fold(0.0, f64::max);
    let bound = 5.0 / (n as f64).sqrt() * sigma.norm();
    r.check(
        "4b",
        worst <= bound,
        format!("max_t ‖C(t) - C(0)‖_F = {worst:.3e} (<= 5·n^-1/2·‖Σ‖_F = {bound:.3e})"),
    );

    // (c) kurtosis of unit-variance laws.
    let tol = |c: f64| c / (n as f64).sqrt();
    let s3 = 3f64.sqrt();
    let uni: Vec<f64> = (0..n).map(|_| rng.sample(Uniform::new(-s3, s3).unwrap())).collect();
    let gau: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let lap: Vec<f64> = (0..n).map(|_| SourceLaw::Laplace.draw(&mut rng)).collect();
    for (name, sample, want, c) in [
        ("uniform", &uni, -1.2, 10.0),
        ("gaussian", &gau, 0.0, 10.0),
        ("laplace", &lap, 3.0, 20.0),
    ] {
        let got = kurtosis(sample).unwrap();
        r.check(
            "4c",
            (got - want).abs() <= tol(c),
            format!("{name} kurtosis {got:.4} vs {want} (tolerance {c}/√n = {:.4})", tol(c)),
        );
    }
}

fn random_sym(p: usize, rng: &mut ChaCha8Rng) -> SymMatrix {
    let a = DMatrix::from_fn(p, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    SymMatrix::new((&a + a.transpose()) * 0.5).unwrap()
}

/// Exact simplex projection by enumerating supports.
fn simplex_brute(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1..(1u32 << n) {
        let support: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
        let shift = (support.iter().map(|&i| v[i]).sum::<f64>() - 1.0) / support.len() as f64;
        let mut x = vec![0.0; n];
        let mut feasible = true;
        for &i in &support {
            x[i] = v[i] - shift;
            feasible &= x[i] >= -1e-15;
        }
        if feasible {
            let d: f64 = x.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum();
            if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                best = Some((d, x));
            }
        }
    }
    best.unwrap().1
}

/// Projection onto {B ⪰ 0, tr B = 1} by Dykstra's alternating projections.
fn psd_trace1_dykstra(b: &DMatrix<f64>) -> DMatrix<f64> {
    let p = b.nrows();
    let mut x = b.clone();
    let mut pinc = DMatrix::zeros(p, p);
    let mut qinc = DMatrix::zeros(p, p);
    for _ in 0..20_000 {
        // Affine set {tr = 1}.
        let y0 = &x + &pinc;
        let mut y = y0.clone();
        let shift = (y.trace() - 1.0) / p as f64;
        for i in 0..p {
            y[(i, i)] -= shift;
        }
        pinc = y0 - &y;
        // PSD cone.
        let z0 = &y + &qinc;
        let eig = z0.clone().symmetric_eigen();
        let lam = eig.eigenvalues.map(|l| l.max(0.0));
        let z = &eig.eigenvectors * DMatrix::from_diagonal(&lam) * eig.eigenvectors.transpose();
        qinc = z0 - &z;
        let change = (&z - &x).norm();
        x = z;
        if change < 1e-14 {
            break;
        }
    }
    x
}

fn c5_solver(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    // Gradient against central differences along every symmetric coordinate.
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let p = rng.random_range(2..=6);
        let m = sym_dim(p);
        let b = random_sym(p, &mut rng);
        let g = random_sym(p, &mut rng);
        let q = rng.random_range(1..m.max(2));
        let mut null = DMatrix::from_fn(m, q, |_, _| rng.sample::<f64, _>(StandardNormal));
        orthonormalize_columns(&mut null);
        let mu = 10f64.powf(rng.random_range(-1.0..3.0));
        let (_, grad) = relax_objective(&b, &g, &null, mu).unwrap();
        let mut gc = vec![0.0; m];
        write_coords(grad.matrix(), &mut gc);
        let mut bc = vec![0.0; m];
        write_coords(b.matrix(), &mut bc);
        let f = |c: &[f64]| {
            let mut s = DMatrix::zeros(p, p);
            read_coords(c, &mut s);
            relax_objective(&SymMatrix::new(s).unwrap(), &g, &null, mu).unwrap().0
        };
        let h = 1e-5;
        let fd: Vec<f64> = (0..m)
            .map(|a| {
                let mut plus = bc.clone();
                let mut minus = bc.clone();
                plus[a] += h;
                minus[a] -= h;
                (f(&plus) - f(&minus)) / (2.0 * h)
            })
            .collect();
        let num: f64 = fd.iter().zip(&gc).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den: f64 = gc.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
        worst = worst.max(num / den);
    }
    r.check("5", worst < 1e-5, format!("gradient vs central differences: worst relative error {worst:.2e} (< 1e-5)"));

    // Every projected iterate is feasible.
    let mut min_eig = f64::INFINITY;
    let mut trace_dev = 0.0f64;
    let mut iterates = 0usize;
    for t in 0..20 {
        let p = 4 + t % 5;
        let k = p + t % (sym_dim(p) - p);
        let d = gaussian_mixing(p, k, &mut rng);
        let basis = population_basis(&d).unwrap();
        let g = random_sym(p, &mut rng);
        let init = SymMatrix::identity(p).scale(1.0 / p as f64);
        let cfg = SolverConfig {
            max_iter: 50,
            mm_rounds: 5,
            ..Default::default()
        };
        fista_from(&g, &basis, &cfg, &init, &mut |b| {
            let e = b.clone().symmetric_eigen().eigenvalues.min();
            min_eig = min_eig.min(e);
            trace_dev = trace_dev.max((b.trace() - 1.0).abs());
            iterates += 1;
        })
        .unwrap();
    }
    r.check(
        "5",
        min_eig >= -1e-8 && trace_dev <= 1e-8,
        format!("{iterates} projected iterates: min λ {min_eig:.2e} (>= -1e-8), max |tr-1| {trace_dev:.2e} (<= 1e-8)"),
    );

    // Projections against brute-force oracles in dimensions 2 and 3.
    let mut worst_simplex = 0.0f64;
    let mut worst_psd = 0.0f64;
    for i in 0..200 {
        let n = 2 + i % 2;
        let v: Vec<f64> = (0..n).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        let got = project_simplex(&v).unwrap();
        let want = simplex_brute(&v);
        worst_simplex = worst_simplex.max(got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        let b = random_sym(n, &mut rng);
        let got = project_psd_trace1(&b).unwrap();
        let want = psd_trace1_dykstra(b.matrix());
        worst_psd = worst_psd.max((got.matrix() - want).amax());
    }
    r.check(
        "5",
        worst_simplex <= 1e-6 && worst_psd <= 1e-6,
        format!("projections vs oracles (dims 2-3): simplex {worst_simplex:.2e}, PSD∩trace-1 {worst_psd:.2e} (<= 1e-6)"),
    );
}

fn c6_theory(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for (p, k, want_high) in [(20usize, 30usize, true), (10, 54, false)] {
        let ok = (0..100)
            .filter(|_| fit_ellipsoid(&theorem_model_points(p, k, &mut rng)).unwrap().success)
            .count();
        let plain = (0..100)
            .filter(|_| {
                let v = DMatrix::from_fn(p, k, |_, _| rng.sample::<f64, _>(StandardNormal));
                fit_ellipsoid(&v).unwrap().success
            })
            .count();
        let rate = ok as f64 / 100.0;
        if want_high {
            r.check("6", rate >= 0.95, format!("ellipsoid fit p={p} k={k}: {ok}/100 (>= 95); plain Gaussian points {plain}/100"));
        } else {
            r.check("6", rate <= 0.1, format!("ellipsoid fit p={p} k={k}: {ok}/100 (<= 10); plain Gaussian points {plain}/100"));
        }
    }
    let mut certified = 0;
    let mut unsound = 0;
    for t in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + t);
        let p = 6 + (t % 5) as usize;
        let k = p + (t as usize * 7) % (p * p / 3);
        let d = gaussian_mixing(p, k, &mut rng);
        let g = if t % 2 == 0 {
            let u = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
            SymMatrix::outer(&u)
        } else {
            random_symmetric(p, &mut rng)
        };
        let scores: Vec<f64> = (0..k).map(|i| d.column(i).dot(&(g.matrix() * d.column(i)))).collect();
        let j = (0..k).max_by(|&a, &b| scores[a].total_cmp(&scores[b])).unwrap();
        if dual_certificate(&d, &g, j).unwrap().feasible {
            certified += 1;
            let reference = solve_exact_reference(&d, &g).unwrap();
            if !(reference.success && reference.nearest_atom == j) {
                unsound += 1;
            }
        }
    }
    r.check(
        "6",
        unsound == 0 && certified > 0,
        format!("dual certificate: {certified}/200 certified, {unsound} disagree with the exact solver"),
    );
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for perm in permutations(k - 1) {
        for pos in 0..=perm.len() {
            let mut p = perm.clone();
            p.insert(pos, k - 1);
            out.push(p);
        }
    }
    out
}

fn c7_metrics(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let k = 1 + i % 6;
        let cost = DMatrix::from_fn(k, k, |_, _| rng.random::<f64>() * 10.0);
        let got = hungarian(&cost).unwrap().cost(&cost);
        let best = permutations(k)
            .iter()
            .map(|p| (0..k).map(|r| cost[(r, p[r])]).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        worst = worst.max((got - best).abs());
    }
    r.check("7", worst < 1e-9, format!("Hungarian vs exhaustive search (k <= 6, 100 matrices): max gap {worst:.1e}"));
    let v = RecoveryVector::from_counts(5, &[2, 4, 3]).unwrap();
    r.check(
        "7",
        v.r == vec![1.0, 1.0, 2.0 / 3.0, 1.0 / 3.0, 0.0],
        format!("worked recovery example: {:?}", v.r),
    );
}

fn synthetic_batch(path: &std::path::Path, images: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bytes = Vec::with_capacity(images * RECORD_LEN);
    for i in 0..images {
        bytes.push((i % 10) as u8);
        // Smooth random images: a few Gaussian bumps per channel.
        let bumps: Vec<(f64, f64, f64, f64)> = (0..6)
            .map(|_| {
                (
                    rng.random_range(0.0..32.0),
                    rng.random_range(0.0..32.0),
                    rng.random_range(2.0..8.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        for c in 0..3 {
            for y in 0..32 {
                for x in 0..32 {
                    let v: f64 = bumps
                        .iter()
                        .map(|&(by, bx, w, a)| a * (-((y as f64 - by).powi(2) + (x as f64 - bx).powi(2)) / (2.0 * w * w)).exp())
                        .sum();
                    let noise: f64 = rng.random_range(-8.0..8.0);
                    bytes.push((128.0 + 100.0 * v + noise + 5.0 * c as f64).clamp(0.0, 255.0) as u8);
                }
            }
        }
    }
    std::fs::write(path, bytes).unwrap();
}

fn c8_cifar(r: &mut Report) {
    let dir = tempfile::tempdir().unwrap();
    for n in [1usize, 3] {
        let input = dir.path().join(format!("b{n}.bin"));
        synthetic_batch(&input, n, n as u64);
        let out = dir.path().join(format!("p{n}.oica"));
        let count = cifar::extract_patches(&input, &out, cifar::Gray::Luma).unwrap();
        let dims = overica_cli::formats::container_dims(&out).unwrap();
        r.check(
            "8",
            count == 676 * n && dims == (49, 676 * n),
            format!("synthetic {n}-image batch: {} patches of dimension {}", dims.1, dims.0),
        );
    }
    match std::env::var("OICA_CIFAR_BATCH") {
        Ok(path) => {
            let out = dir.path().join("real.oica");
            let count = cifar::extract_patches(std::path::Path::new(&path), &out, cifar::Gray::Luma).unwrap();
            r.check("8", count == 6_760_000, format!("real batch {path}: {count} patches (want 6,760,000)"));
        }
        Err(_) => r.skip("8", "real 10,000-image batch: set OICA_CIFAR_BATCH to a CIFAR-10 training batch"),
    }
    let input = dir.path().join("smoke.bin");
    synthetic_batch(&input, 74, 8);
    let patches = dir.path().join("smoke.oica");
    cifar::extract_patches(&input, &patches, cifar::Gray::Luma).unwrap();
    let cfg = CifarEstimateConfig {
        input: Some(patches),
        k: 20,
        subsample: Some(50_000),
        out: dir.path().join("est"),
        ..Default::default()
    };
    let t0 = Instant::now();
    let res = cifar_estimate(&cfg);
    let secs = t0.elapsed().as_secs_f64();
    r.check(
        "8",
        res.is_ok() && secs < 300.0,
        format!("k=20 smoke run on 50,000 patches: {secs:.1}s (< 300s) {:?}", res.err()),
    );
}

fn c9_scaling(r: &mut Report) {
    let (p, k, n) = (40, 40, 100_000);
    let d = sample_mixing(&SamplingSpec::new(p, k, SamplingMode::Normal, 9)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(90);
    let x = sample_ica(&d, n, &SourceLaw::Uniform, &mut rng).unwrap().center().unwrap();
    let gcfg = OverIcaConfig::default();
    let ccfg = OverIcaConfig {
        step1: Step1::Cum4,
        ..Default::default()
    };
    let t0 = Instant::now();
    let (g, gmem) = peak_bytes(|| estimate_subspace(&x, k, &gcfg).unwrap());
    let gt = t0.elapsed().as_secs_f64();
    let t0 = Instant::now();
    let (c, cmem) = peak_bytes(|| estimate_subspace(&x, k, &ccfg).unwrap());
    let ct = t0.elapsed().as_secs_f64();
    drop((g, c));
    r.check("9", gt < ct, format!("Step I at p=40, n=100k: gencov {gt:.1}s < cum4 {ct:.1}s"));
    let mb = |b: usize| b as f64 / (1 << 20) as f64;
    r.check(
        "9",
        (gmem as f64) < cmem as f64 / 4.0,
        format!("peak memory (s=10k=400): gencov {:.1} MiB < cum4 {:.1} MiB / 4", mb(gmem), mb(cmem)),
    );
}

fn main() {
    let only: Option<Vec<u32>> = std::env::var("OICA_ACCEPT")
        .ok()
        .map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());
    let criteria: [(u32, &str, fn(&mut Report)); 9] = [
        (1, "population recovery", c1_population_recovery),
        (2, "phase transition", c2_phase_transition),
        (3, "finite-sample trend", c3_finite_sample),
        (4, "moment estimators", c4_moments),
        (5, "solver numerics", c5_solver),
        (6, "theory lab", c6_theory),
        (7, "metrics", c7_metrics),
        (8, "CIFAR ingestion", c8_cifar),
        (9, "scaling guard", c9_scaling),
    ];
    let mut report = Report::default();
    let t0 = Instant::now();
    for (id, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        println!("== criterion {id}: {name}");
        let t = Instant::now();
        run(&mut report);
        println!("   ({:.1}s)", t.elapsed().as_secs_f64());
    }
    println!(
        "acceptance: {} passed, {} failed, {} skipped in {:.0}s",
        report.pass,
        report.fail,
        report.skip,
        t0.elapsed().as_secs_f64()
    );
    if report.fail > 0 && std::env::var("OICA_ACCEPT_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
