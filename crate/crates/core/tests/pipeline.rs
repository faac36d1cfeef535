//! End-to-end behaviour of the experiment pipeline on small meshes.

use porolod::harness::Experiment;
use porolod::lod::{Localization, MsBasis};
use porolod::metrics::dn_norm;
use porolod::{preset, run_convergence, ExperimentConfig, RunOptions};

fn small(name: &str) -> ExperimentConfig {
    let mut c = preset(name).unwrap();
    c.fine_cells = 16;
    c.eps_cells = 8;
    c.coarse_cells = vec![2, 4, 8];
    c.tau = 0.05;
    c
}

fn roundtrip(b: &MsBasis) -> MsBasis {
    let mut buf = Vec::new();
    b.write_csv(&mut buf).unwrap();
    MsBasis::read_csv(buf.as_slice()).unwrap()
}

#[test]
fn imported_bases_give_bit_identical_solutions() {
    let exp = Experiment::setup(&small("exp3")).unwrap();
    let (bu, bp) = exp.build_bases(4).unwrap();
    let (iu, ip) = (roundtrip(&bu), roundtrip(&bp));
    let direct = exp.solve_level(bu, bp).unwrap();
    let imported = exp.solve_level(iu, ip).unwrap();
    assert_eq!(direct.ms.u, imported.ms.u);
    assert_eq!(direct.ms.p, imported.ms.p);
    assert_eq!(direct.prolonged.p, imported.prolonged.p);
}

#[test]
fn export_and_import_through_files() {
    let dir = tempdir("porolod-pipeline-export");
    let c = small("exp1");
    let off = run_convergence(
        &c,
        &RunOptions {
            export_basis: Some(dir.clone()),
            import_basis: None,
        },
    )
    .unwrap();
    let on = run_convergence(
        &c,
        &RunOptions {
            export_basis: None,
            import_basis: Some(dir.clone()),
        },
    )
    .unwrap();
    assert_eq!(on.failed_levels(), 0);
    for (a, b) in off.levels.iter().zip(&on.levels) {
        assert_eq!(a.rel_error, b.rel_error);
    }
    // A basis built with the other localization is rejected.
    let mut other = c.clone();
    other.localization = Localization::Node;
    let rec = run_convergence(
        &other,
        &RunOptions {
            export_basis: None,
            import_basis: Some(dir.clone()),
        },
    )
    .unwrap();
    assert_eq!(rec.failed_levels(), 3);
    assert!(rec.levels[0].error.as_ref().unwrap().message.contains("localization"));
    std::fs::remove_dir_all(dir).unwrap();
}

fn tempdir(name: &str) -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    d
}

#[test]
fn dn_norm_matches_a_per_step_loop() {
    let exp = Experiment::setup(&small("exp2")).unwrap();
    let (sol, _) = exp.solve_fine().unwrap();
    let (g_u, g_p) = (&exp.forms.g_u, &exp.forms.g_p);
    let mut sum = 0.0;
    for n in 1..=sol.grid.n_steps {
        let gu = g_u.matvec(&sol.u[n]);
        let gp = g_p.matvec(&sol.p[n]);
        let su: f64 = gu.iter().zip(&sol.u[n]).map(|(a, b)| a * b).sum();
        let sp: f64 = gp.iter().zip(&sol.p[n]).map(|(a, b)| a * b).sum();
        sum += sol.grid.tau * (su + sp);
    }
    let norm = dn_norm(&sol.u, &sol.p, g_u, g_p, sol.grid.tau).unwrap();
    assert!((norm - sum.sqrt()).abs() <= 1e-12 * norm);
}

#[test]
fn both_localizations_keep_the_energy_identity() {
    let mut finest = Vec::new();
    for loc in [Localization::Element, Localization::Node] {
        let mut c = small("exp2");
        c.localization = loc;
        c.ell = Some(1);
        let rec = run_convergence(&c, &RunOptions::default()).unwrap();
        assert_eq!(rec.failed_levels(), 0);
        for l in &rec.levels {
            let d = l.diagnostics.as_ref().unwrap();
            assert!(d.max_energy_residual <= 1e-10);
            assert!(d.stability_ratio <= 1.0);
            assert_eq!(d.energy_nonincreasing, Some(true));
        }
        let e: Vec<f64> = rec.levels.iter().map(|l| l.rel_error.unwrap()).collect();
        if loc == Localization::Element {
            assert!(e.windows(2).all(|w| w[1] < w[0]), "{e:?}");
        }
        finest.push(*e.last().unwrap());
    }
    // Node patches lose accuracy as H shrinks at fixed layers; element
    // patches do not.
    assert!(finest[0] < finest[1], "{finest:?}");
}

#[test]
fn global_correctors_beat_one_layer_patches() {
    let mut c = small("exp1");
    c.coarse_cells = vec![4];
    c.ell = Some(1);
    let local = run_convergence(&c, &RunOptions::default()).unwrap().levels[0]
        .rel_error
        .unwrap();
    c.ell = None;
    let global = run_convergence(&c, &RunOptions::default()).unwrap().levels[0]
        .rel_error
        .unwrap();
    assert!(global <= local * (1.0 + 1e-9), "global {global} local {local}");
}
