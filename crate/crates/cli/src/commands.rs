//! The four subcommands. Each returns the process exit code on its success
//! path: 0 all good, 2 a scientific tolerance failed. Configuration and
//! precondition problems surface as `Err` and map to exit 1 (audit failures
//! to exit 2) in `main`.


use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::Serialize;

use walkphase_core::continuum::{
    continuous_residual_modes, continuum_entry, convergence_order, Correction, ScalingFamily,
    SlopeFit, VariantFlags,
};
use walkphase_core::io::{table_csv_bytes, write_atomic, write_json, write_wigner_csv, CsvCell};
use walkphase_core::lattice::{AxisLabel, AxisSpec, ComplexLatticeField, LatticeShape};
use walkphase_core::spectral::{dft_forward, dft_inverse, pair, pair_spectral, spectral_derivative_check};
use walkphase_core::walk::{
    eom_residual, evolve, gaussian_packet, CoinMatrix, PacketParams, SpinMix, SpinorHistory,
    SpinorState, WavePacket,
};
use walkphase_core::wigner::{
    build_omega, commensurate_eigenmode, omega_derivative_audit, transport_audit,
    transport_audit_modes, wigner_transform, Taper, WignerField, AUDIT_VARIANT, PRINTED_VARIANT,
};
use walkphase_core::{Error, ResidualReport, Result};

use crate::config::ExperimentConfig;

#[derive(Debug, Serialize)]
struct Check {
    name: String,
    max_err: f64,
    tol: f64,
    pass: bool,
}

#[derive(Debug, Serialize)]
struct IdentitiesReport<'a> {
    config: &'a ExperimentConfig,
    checks: Vec<Check>,
    pass: bool,
}

fn random_field(
    shape: &[usize],
    axes: Vec<AxisSpec>,
    rng: &mut impl Rng,
) -> Result<ComplexLatticeField> {
    ComplexLatticeField::random_unit(shape, axes, rng)
}

/// Runs the discrete-calculus and spectral identity suites on seeded random
/// data and writes a JSON report. Exit 0 iff every check passes tolerance.
pub fn cmd_identities(cfg: &ExperimentConfig) -> Result<i32> {
    LatticeShape::new(cfg.steps, cfg.n_sites)?;
    let fault_d2 = matches!(cfg.fault.as_deref(), Some("d2-double"));
    if let Some(f) = cfg.fault.as_deref() {
        if f != "d2-double" {
            return Err(Error::Config(format!("unknown fault '{f}'")));
        }
    }
    let d2_of = |field: &ComplexLatticeField, axis: AxisLabel| -> Result<ComplexLatticeField> {
        let d = field.d2(axis)?;
        Ok(if fault_d2 {
            d.scaled(Complex64::new(2.0, 0.0))
        } else {
            d
        })
    };

    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let axes = vec![
        AxisSpec::windowed(AxisLabel::Time),
        AxisSpec::periodic(AxisLabel::Space),
    ];
    let mut inversion_dev: f64 = 0.0;
    let mut product_dev: f64 = 0.0;
    let mut linearity_dev: f64 = 0.0;
    let mut commute_dev: f64 = 0.0;
    for _ in 0..cfg.trials {
        let f = random_field(&[cfg.steps, cfg.n_sites], axes.clone(), &mut rng)?;
        let g = random_field(&[cfg.steps, cfg.n_sites], axes.clone(), &mut rng)?;
        for axis in [AxisLabel::Time, AxisLabel::Space] {
            let d1 = f.d1(axis)?;
            let d2 = d2_of(&f, axis)?;
            let plus = f.add(&d1)?.add(&d2)?;
            let minus = f.sub(&d1)?.add(&d2)?;
            inversion_dev = inversion_dev.max(f.shift(axis, 1)?.max_abs_diff(&plus)?);
            inversion_dev = inversion_dev.max(f.shift(axis, -1)?.max_abs_diff(&minus)?);

            let lhs = f.mul(&g)?.d1(axis)?;
            let d1g = g.d1(axis)?;
            let d2g = d2_of(&g, axis)?;
            let rhs = d1
                .mul(&g)?
                .add(&f.mul(&d1g)?)?
                .add(&d1.mul(&d2g)?)?
                .add(&d2.mul(&d1g)?)?;
            product_dev = product_dev.max(lhs.max_abs_diff(&rhs)?);
        }
        let alpha = Complex64::new(0.7, -0.4);
        let lin_lhs = f.scaled(alpha).add(&g)?.d1(AxisLabel::Space)?;
        let lin_rhs = f
            .d1(AxisLabel::Space)?
            .scaled(alpha)
            .add(&g.d1(AxisLabel::Space)?)?;
        linearity_dev = linearity_dev.max(lin_lhs.max_abs_diff(&lin_rhs)?);
        let c1 = f.shift(AxisLabel::Space, 3)?.d1(AxisLabel::Space)?;
        let c2 = f.d1(AxisLabel::Space)?.shift(AxisLabel::Space, 3)?;
        commute_dev = commute_dev.max(c1.max_abs_diff(&c2)?);
    }

    // spectral side
    let seq: Vec<Complex64> = (0..cfg.n_sites)
        .map(|_| {
            Complex64::new(
                rng.random::<f64>() * 2.0 - 1.0,
                rng.random::<f64>() * 2.0 - 1.0,
            )
        })
        .collect();
    let seq2: Vec<Complex64> = (0..cfg.n_sites)
        .map(|_| {
            Complex64::new(
                rng.random::<f64>() * 2.0 - 1.0,
                rng.random::<f64>() * 2.0 - 1.0,
            )
        })
        .collect();
    let hat = dft_forward(&seq)?;
    let back = dft_inverse(&hat);
    let roundtrip_dev = seq
        .iter()
        .zip(&back)
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    let deriv_report = spectral_derivative_check(&seq)?;
    let pairing_lhs = pair_spectral(&dft_forward(&seq)?, &dft_forward(&seq2)?)?;
    let pairing_rhs: Complex64 = (0..cfg.n_sites)
        .map(|i| seq[i] * seq2[(cfg.n_sites - i) % cfg.n_sites])
        .sum();
    let pairing_dev = (pairing_lhs - pairing_rhs).norm();
    let parseval_lhs: Complex64 = seq.iter().zip(&seq2).map(|(a, b)| a * b.conj()).sum();
    let parseval_rhs = {
        let f2 = dft_forward(&seq2)?;
        hat.amps()
            .iter()
            .zip(f2.amps())
            .map(|(a, b)| a * b.conj())
            .sum::<Complex64>()
            / cfg.n_sites as f64
    };
    let parseval_dev = (parseval_lhs - parseval_rhs).norm();
    let bilinear_dev = {
        let mut delta = vec![Complex64::ZERO; cfg.n_sites];
        delta[0] = Complex64::ONE;
        (pair(&delta, &seq)? - seq[0]).norm()
    };

    let checks = vec![
        Check {
            name: "neighbor_reconstruction".into(),
            max_err: inversion_dev,
            tol: 1e-13,
            pass: inversion_dev <= 1e-13,
        },
        Check {
            name: "product_rule".into(),
            max_err: product_dev,
            tol: 1e-13,
            pass: product_dev <= 1e-13,
        },
        Check {
            name: "d1_linearity".into(),
            max_err: linearity_dev,
            tol: 1e-13,
            pass: linearity_dev <= 1e-13,
        },
        Check {
            name: "d1_commutes_with_shift".into(),
            max_err: commute_dev,
            tol: 1e-13,
            pass: commute_dev <= 1e-13,
        },
        Check {
            name: "dft_roundtrip".into(),
            max_err: roundtrip_dev,
            tol: 1e-12,
            pass: roundtrip_dev <= 1e-12,
        },
        Check {
            name: "spectral_derivative_sin_form".into(),
            max_err: deriv_report.get("sin_form_max_dev").unwrap(),
            tol: 1e-12,
            pass: deriv_report.get("sin_form_max_dev").unwrap() <= 1e-12,
        },
        Check {
            name: "spectral_derivative_tan_form".into(),
            max_err: deriv_report.get("tan_form_max_dev").unwrap(),
            tol: 1e-10,
            pass: deriv_report.get("tan_form_max_dev").unwrap() <= 1e-10,
        },
        Check {
            name: "distributional_pairing".into(),
            max_err: pairing_dev,
            tol: 1e-12,
            pass: pairing_dev <= 1e-12,
        },
        Check {
            name: "parseval".into(),
            max_err: parseval_dev,
            tol: 1e-12,
            pass: parseval_dev <= 1e-12,
        },
        Check {
            name: "bilinear_pairing_delta".into(),
            max_err: bilinear_dev,
            tol: 1e-14,
            pass: bilinear_dev <= 1e-14,
        },
    ];
    let pass = checks.iter().all(|c| c.pass);
    std::fs::create_dir_all(&cfg.out)?;
    write_json(
        &cfg.out.join("identities_report.json"),
        &IdentitiesReport {
            config: cfg,
            checks,
            pass,
        },
    )?;
    Ok(if pass { 0 } else { 2 })
}

fn audit_packet(cfg: &ExperimentConfig, coin: &CoinMatrix, tail_clean: bool) -> Result<WavePacket> {
    if cfg.amplitude == 0.0 {
        return Err(Error::DegenerateInput(
            "zero-amplitude state carries no audit information".into(),
        ));
    }
    let mut params = PacketParams::new(cfg.n_sites, cfg.k0, cfg.effective_sigma_k());
    params.require_tail_clean = tail_clean;
    if cfg.spin_mix_angle >= 0.0 {
        params.spin_mix = Some(SpinMix {
            angle: cfg.spin_mix_angle,
            phase: cfg.spin_mix_phase,
        });
    }
    gaussian_packet(&params, coin)
}

fn history_for_window(packet: &WavePacket, coin: &CoinMatrix, window: usize, steps: usize) -> Result<SpinorHistory> {
    let needed = 2 * window + 3;
    evolve(&packet.initial_state(), coin, steps.max(needed))
}

#[derive(Debug, Serialize)]
struct ContinuumFlags {
    phase_sign: f64,
    mass_coeff: f64,
    correction: &'static str,
}

#[derive(Debug, Serialize)]
struct ErrataLedger<'a> {
    config: &'a ExperimentConfig,
    eom: ResidualReport,
    omega_identity: ResidualReport,
    transport_grid_eigenmode: ResidualReport,
    eigenmode_theta: f64,
    transport_distribution_packet: ResidualReport,
    transport_theta0_window: ResidualReport,
    exact_variant: &'static str,
    printed_variant: &'static str,
    continuum_flags: ContinuumFlags,
    pass: bool,
}

/// Runs the equation-of-motion, window-identity, and transport audits and
/// writes the errata ledger. Exit 0 iff each identity has exactly one
/// machine-exact variant (degenerate flags are quotiented out and recorded).
pub fn cmd_audit(cfg: &ExperimentConfig) -> Result<i32> {
    LatticeShape::new(cfg.steps.max(2 * cfg.window + 3), cfg.n_sites)?;
    let coin = CoinMatrix::new(cfg.theta);
    let packet = audit_packet(cfg, &coin, false)?;
    let history = history_for_window(&packet, &coin, cfg.window, cfg.steps)?;
    let j0 = cfg.effective_base_time();

    let eom = eom_residual(&history, &coin)?;
    let omega_identity = omega_derivative_audit(&history, j0, cfg.window)?;

    // grid-path transport audit on a window-commensurate eigenmode
    let mode = commensurate_eigenmode(cfg.n_sites, cfg.window, cfg.q_time, cfg.q_space)?;
    let mode_history = evolve(
        &mode.packet.initial_state(),
        &mode.coin,
        2 * cfg.window + 3,
    )?;
    let transport_grid = transport_audit(&mode_history, cfg.window + 1, cfg.window, &mode.coin)?;

    // distribution-path transport audit on the configured packet
    let transport_modes = transport_audit_modes(&packet, &coin)?;

    // theta = 0 full-period window: exact grid data with the mass flag
    // degenerate by construction
    let theta0 = {
        let coin0 = CoinMatrix::new(0.0);
        let n = 16;
        let mut params = PacketParams::new(n, 0.9, 0.45);
        params.spin_mix = Some(SpinMix {
            angle: 0.7,
            phase: 0.5,
        });
        params.require_tail_clean = false;
        let p0 = gaussian_packet(&params, &coin0)?;
        let h0 = evolve(&p0.initial_state(), &coin0, n + 3)?;
        transport_audit(&h0, n / 2 + 1, n / 2, &coin0)?
    };

    let identified = |r: &ResidualReport| r.exact.is_some();
    // on data where degenerate flags were quotiented out, the audited
    // variant must still sit inside the machine-exact class
    let audited_in_class = |r: &ResidualReport| {
        identified(r)
            && r.get(&format!("variant[{AUDIT_VARIANT}]_rel_l2"))
                .map(|v| v <= 1e-11)
                .unwrap_or(false)
    };
    let strict = |r: &ResidualReport| r.exact.as_deref() == Some(AUDIT_VARIANT);
    let modes_ok = if cfg.theta > 0.1 {
        strict(&transport_modes)
    } else {
        audited_in_class(&transport_modes)
    };
    let pass = identified(&eom)
        && identified(&omega_identity)
        && strict(&transport_grid)
        && modes_ok
        && audited_in_class(&theta0);

    std::fs::create_dir_all(&cfg.out)?;
    write_json(
        &cfg.out.join("errata_ledger.json"),
        &ErrataLedger {
            config: cfg,
            eom,
            omega_identity,
            transport_grid_eigenmode: transport_grid,
            eigenmode_theta: mode.coin.theta(),
            transport_distribution_packet: transport_modes,
            transport_theta0_window: theta0,
            exact_variant: AUDIT_VARIANT,
            printed_variant: PRINTED_VARIANT,
            continuum_flags: ContinuumFlags {
                phase_sign: -1.0,
                mass_coeff: 2.0,
                correction: "-eps m sigma2 (dx - i kx) W",
            },
            pass,
        },
    )?;
    Ok(if pass { 0 } else { 2 })
}

#[derive(Debug, Serialize)]
struct SlopeRow {
    metric: String,
    slope: f64,
    intercept: f64,
    r_squared: f64,
}

#[derive(Debug, Serialize)]
struct ConvergeReport<'a> {
    config: &'a ExperimentConfig,
    selected_flags: VariantFlags,
    slopes: Vec<SlopeRow>,
    bare_slope: f64,
    audited_gain: f64,
    ms_reduction_slope: Option<f64>,
    notes: Vec<String>,
    pass: bool,
}

/// Runs the continuum-residual family and writes the slope table and plot
/// data. Exit 0 iff the bare slope is >= 0.7, the audited correction gains
/// >= 0.5, and the sesquilinear-mass reduction fits slope >= 2.5.
pub fn cmd_converge(cfg: &ExperimentConfig) -> Result<i32> {
    cfg.validate_variant()?;
    if cfg.eps_list.len() < 4 {
        return Err(Error::NotEnoughPoints {
            needed: 4,
            got: cfg.eps_list.len(),
        });
    }
    let family = ScalingFamily::new(
        cfg.eps_list.clone(),
        cfg.mass,
        cfg.box_len,
        cfg.t_final,
    )?;
    let selected = if cfg.variant == "printed" {
        VariantFlags::printed()
    } else {
        VariantFlags::audited()
    };

    let flag_sets = [
        VariantFlags::audited(),
        VariantFlags::printed(),
        VariantFlags {
            phase_sign: 1.0,
            mass_coeff: 2.0,
        },
        VariantFlags {
            phase_sign: -1.0,
            mass_coeff: 1.0,
        },
    ];
    let mut rows: Vec<Vec<CsvCell>> = Vec::new();
    let mut series: std::collections::BTreeMap<String, Vec<(f64, f64)>> =
        std::collections::BTreeMap::new();
    for &eps in &family.eps_list {
        let n = family.n_sites(eps);
        let coin = CoinMatrix::new(family.theta(eps));
        let mut params = PacketParams::new(n, cfg.k0_physical * eps, cfg.sigma_physical * eps);
        params.require_tail_clean = false;
        if cfg.spin_mix_angle >= 0.0 {
            params.spin_mix = Some(SpinMix {
                angle: cfg.spin_mix_angle,
                phase: cfg.spin_mix_phase,
            });
        }
        let packet = gaussian_packet(&params, &coin)?;
        let report = continuous_residual_modes(&packet, &coin, eps, family.mass)?;
        for flags in flag_sets {
            for corr in Correction::ALL {
                let key = continuum_entry(flags, corr);
                let value = report.get(&key).unwrap();
                rows.push(vec![
                    CsvCell::Num(eps),
                    CsvCell::Text(flags.name().replace(',', ";")),
                    CsvCell::Text(corr.name().into()),
                    CsvCell::Num(value),
                ]);
                series.entry(key).or_default().push((eps, value));
            }
        }
        for key in [
            "ms_reduction[audited_coeff_+1]_rel",
            "ms_reduction[printed_coeff_-2]_rel",
        ] {
            let value = report.get(key).unwrap();
            rows.push(vec![
                CsvCell::Num(eps),
                CsvCell::Text(key.into()),
                CsvCell::Text("-".into()),
                CsvCell::Num(value),
            ]);
            series.entry(key.into()).or_default().push((eps, value));
        }
    }

    let mut notes = Vec::new();
    let fit_of = |key: &str, series: &std::collections::BTreeMap<String, Vec<(f64, f64)>>| -> Result<SlopeFit> {
        convergence_order(&series[key])
    };
    let bare_key = continuum_entry(selected, Correction::None);
    let audited_key = continuum_entry(selected, Correction::Audited);
    let printed_key = continuum_entry(selected, Correction::Printed);
    let bare = fit_of(&bare_key, &series)?;
    let with_audited = fit_of(&audited_key, &series)?;
    let with_printed = fit_of(&printed_key, &series)?;
    let ms_fit = if family.mass == 0.0 {
        notes.push("mass = 0: sesquilinear-mass reduction vanishes identically; fit skipped".into());
        None
    } else {
        Some(fit_of("ms_reduction[audited_coeff_+1]_rel", &series)?)
    };

    let mut slopes = vec![
        SlopeRow {
            metric: bare_key.clone(),
            slope: bare.slope,
            intercept: bare.intercept,
            r_squared: bare.r_squared,
        },
        SlopeRow {
            metric: audited_key.clone(),
            slope: with_audited.slope,
            intercept: with_audited.intercept,
            r_squared: with_audited.r_squared,
        },
        SlopeRow {
            metric: printed_key.clone(),
            slope: with_printed.slope,
            intercept: with_printed.intercept,
            r_squared: with_printed.r_squared,
        },
    ];
    if let Some(fit) = &ms_fit {
        slopes.push(SlopeRow {
            metric: "ms_reduction[audited_coeff_+1]_rel".into(),
            slope: fit.slope,
            intercept: fit.intercept,
            r_squared: fit.r_squared,
        });
        let printed_ms = fit_of("ms_reduction[printed_coeff_-2]_rel", &series)?;
        slopes.push(SlopeRow {
            metric: "ms_reduction[printed_coeff_-2]_rel".into(),
            slope: printed_ms.slope,
            intercept: printed_ms.intercept,
            r_squared: printed_ms.r_squared,
        });
    }

    let gain = with_audited.slope - bare.slope;
    let mass_gate = if family.mass == 0.0 {
        notes.push("mass = 0: correction vanishes; slope-gain gate skipped".into());
        true
    } else {
        gain >= 0.5
    };
    let ms_gate = ms_fit.as_ref().map(|f| f.slope >= 2.5).unwrap_or(true);
    let pass = bare.slope >= 0.7 && mass_gate && ms_gate;

    std::fs::create_dir_all(&cfg.out)?;
    write_atomic(
        &cfg.out.join("convergence_residuals.csv"),
        &table_csv_bytes("eps,variant,with_correction,residual_norm", &rows, cfg),
    )?;
    let slope_rows: Vec<Vec<CsvCell>> = slopes
        .iter()
        .map(|s| {
            vec![
                CsvCell::Text(s.metric.clone()),
                CsvCell::Num(s.slope),
                CsvCell::Num(s.intercept),
                CsvCell::Num(s.r_squared),
            ]
        })
        .collect();
    write_atomic(
        &cfg.out.join("convergence_slopes.csv"),
        &table_csv_bytes("metric,slope,intercept,r_squared", &slope_rows, cfg),
    )?;
    write_json(
        &cfg.out.join("convergence_report.json"),
        &ConvergeReport {
            config: cfg,
            selected_flags: selected,
            slopes,
            bare_slope: bare.slope,
            audited_gain: gain,
            ms_reduction_slope: ms_fit.map(|f| f.slope),
            notes,
            pass,
        },
    )?;
    Ok(if pass { 0 } else { 2 })
}

#[derive(Debug, Serialize)]
struct WignerHeader<'a> {
    config: &'a ExperimentConfig,
    source: String,
    theta_used: f64,
    base_time: usize,
    kj_values: Vec<f64>,
    kp_values: Vec<f64>,
    boundary_max: f64,
    wrap_mismatch: f64,
    hermiticity_defect: f64,
    exact_variant: &'static str,
}

/// Evolves the configured state, builds the correlation window, transforms,
/// and writes the long-format CSV plus a JSON header.
pub fn cmd_dump_wigner(cfg: &ExperimentConfig) -> Result<i32> {
    let j0 = cfg.effective_base_time();
    LatticeShape::new(cfg.steps.max(j0 + cfg.window + 2), cfg.n_sites)?;
    let needed_steps = j0 + cfg.window + 2;
    let (history, theta_used): (SpinorHistory, f64) = if cfg.amplitude == 0.0 {
        let h = evolve(
            &SpinorState::zeros(cfg.n_sites),
            &CoinMatrix::new(cfg.theta),
            cfg.steps.max(needed_steps),
        )?;
        (h, cfg.theta)
    } else {
        match cfg.source.as_str() {
            "plane-wave" => {
                let mode =
                    commensurate_eigenmode(cfg.n_sites, cfg.window, cfg.q_time, cfg.q_space)?;
                let h = evolve(
                    &mode.packet.initial_state(),
                    &mode.coin,
                    cfg.steps.max(needed_steps),
                )?;
                (h, mode.coin.theta())
            }
            "packet" => {
                let coin = CoinMatrix::new(cfg.theta);
                let packet = audit_packet(cfg, &coin, false)?;
                let h = evolve(
                    &packet.initial_state(),
                    &coin,
                    cfg.steps.max(needed_steps),
                )?;
                (h, cfg.theta)
            }
            other => {
                return Err(Error::Config(format!(
                    "source must be 'packet' or 'plane-wave', got '{other}'"
                )))
            }
        }
    };
    let omega = build_omega(&history, j0, cfg.window, Taper::None)?;
    let w: WignerField = wigner_transform(&omega)?;

    std::fs::create_dir_all(&cfg.out)?;
    write_wigner_csv(&cfg.out.join("wigner.csv"), &w, cfg)?;
    write_json(
        &cfg.out.join("wigner_header.json"),
        &WignerHeader {
            config: cfg,
            source: cfg.source.clone(),
            theta_used,
            base_time: j0,
            kj_values: w.kj_grid().values().to_vec(),
            kp_values: w.kp_grid().values().to_vec(),
            boundary_max: omega.boundary_max,
            wrap_mismatch: omega.wrap_mismatch,
            hermiticity_defect: w.hermiticity_defect(),
            exact_variant: AUDIT_VARIANT,
        },
    )?;
    Ok(0)
}
