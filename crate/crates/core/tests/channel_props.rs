use nalgebra::DMatrix;
use owalloc::channel::*;
use owalloc::config::RoomConfig;
use owalloc::dataset::{derive_seed, sample_scenario, GenConfig};
use proptest::prelude::*;

const LAMBDA: f64 = 830e-9;

/// Rank by Gaussian elimination with full pivoting, counting pivots above
/// `1e-10 * ||H||_F`.
fn elimination_rank(m: &DMatrix<f64>) -> usize {
    let tol = 1e-10 * m.norm();
    let mut a = m.clone();
    let (rows, cols) = a.shape();
    let mut rank = 0;
    for _ in 0..rows.min(cols) {
        let mut best = (rank, rank, 0.0);
        for i in rank..rows {
            for j in rank..cols {
                if a[(i, j)].abs() > best.2 {
                    best = (i, j, a[(i, j)].abs());
                }
            }
        }
        if best.2 <= tol {
            break;
        }
        a.swap_rows(rank, best.0);
        a.swap_columns(rank, best.1);
        for i in rank + 1..rows {
            let f = a[(i, rank)] / a[(rank, rank)];
            for j in rank..cols {
                a[(i, j)] -= f * a[(rank, j)];
            }
        }
        rank += 1;
    }
    rank
}

#[test]
fn covered_users_have_full_rank_by_independent_elimination() {
    let gen = GenConfig::default();
    for i in 0..20 {
        let sc = sample_scenario(derive_seed(42, i), &gen).unwrap();
        let cfg = gen.channel.with_beam_waist_um(sc.beam_waist_um);
        let topo = NetworkTopology::new(
            gen.room.dims,
            gen.room.ap_positions(),
            sc.user_positions.clone(),
            gen.room.plane_gap,
            &cfg,
        )
        .unwrap();
        for u in 0..topo.num_users() {
            let h = build_channel_matrix(&topo, &cfg, u).unwrap();
            assert_eq!(h.dim(), 16);
            assert_eq!(elimination_rank(&h.gains), 16, "scenario {i} user {u}");
            assert!(h.gains.iter().all(|g| *g >= 0.0));
            assert!(h.noise_var > 0.0);
        }
    }
}

#[test]
fn median_best_link_snr_is_near_20_db() {
    let room = RoomConfig::default();
    let cfg = ChannelConfig::default();
    let aps = room.ap_positions();
    let mut snrs = Vec::new();
    // user grid over the receiving plane
    for ix in 0..25 {
        for iy in 0..25 {
            let p = Point::new(
                0.1 + 0.2 * ix as f64,
                0.1 + 0.2 * iy as f64,
                room.plane_height(),
            );
            let topo = NetworkTopology::new(room.dims, aps.clone(), vec![p], room.plane_gap, &cfg)
                .unwrap();
            if let Ok(h) = build_channel_matrix(&topo, &cfg, 0) {
                snrs.push(10.0 * h.peak_snr(cfg.stream_power()).log10());
            }
        }
    }
    assert!(
        snrs.len() > 100,
        "too few covered grid points: {}",
        snrs.len()
    );
    snrs.sort_by(f64::total_cmp);
    let median = snrs[snrs.len() / 2];
    assert!((median - 20.0).abs() <= 3.0, "median SNR {median} dB");
}

#[test]
fn preset_orientations_have_unit_norm() {
    for m in 1..=17 {
        for v in preset_orientations(m, 25.0) {
            assert!((v.norm() - 1.0).abs() <= 1e-9);
        }
    }
}

proptest! {
    #[test]
    fn beam_radius_is_monotone_and_starts_at_waist(w0 in 5e-6..50e-6f64, d1 in 0.0..5.0f64, d2 in 0.0..5.0f64) {
        prop_assert_eq!(beam_radius(w0, LAMBDA, 0.0).unwrap(), w0);
        let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        prop_assert!(beam_radius(w0, LAMBDA, lo).unwrap() <= beam_radius(w0, LAMBDA, hi).unwrap());
    }

    #[test]
    fn axial_power_bounds_and_monotonicity(a1 in 1e-8..1e-3f64, a2 in 1e-8..1e-3f64, w0 in 10e-6..30e-6f64, pt in 1e-3..1.0f64) {
        let w = beam_radius(w0, LAMBDA, 2.15).unwrap();
        let p1 = axial_received_power(pt, w, a1, ApertureModel::Encircled).unwrap();
        prop_assert!(p1 > 0.0 && p1 < pt);
        let (lo, hi) = if a1 < a2 { (a1, a2) } else { (a2, a1) };
        if hi > lo * (1.0 + 1e-9) {
            prop_assert!(
                axial_received_power(pt, w, lo, ApertureModel::Encircled).unwrap()
                    < axial_received_power(pt, w, hi, ApertureModel::Encircled).unwrap()
            );
        }
    }

    #[test]
    fn axial_power_increases_with_waist_in_far_field(w_a in 10e-6..30e-6f64, w_b in 10e-6..30e-6f64) {
        prop_assume!((w_a - w_b).abs() > 1e-9);
        let (lo, hi) = if w_a < w_b { (w_a, w_b) } else { (w_b, w_a) };
        let a_m = 15e-6 / 16.0;
        let p = |w0: f64| axial_received_power(1.0, beam_radius(w0, LAMBDA, 2.15).unwrap(), a_m, ApertureModel::Encircled).unwrap();
        prop_assert!(p(lo) < p(hi));
    }

    #[test]
    fn off_axis_gain_is_bounded_by_on_axis(x in 0.0..5.0f64, y in 0.0..5.0f64, tilt in 0.0..60.0f64, az in 0.0..std::f64::consts::TAU) {
        let vcsel = ChannelConfig::default().vcsel();
        let link = ChannelConfig::default().link_model();
        let ap = Point::new(2.5, 2.5, 3.0);
        let user = Point::new(x, y, 0.85);
        let (st, ct) = tilt.to_radians().sin_cos();
        let n = nalgebra::Vector3::new(st * az.cos(), st * az.sin(), ct);
        let g = los_gain(&ap, &user, &n, 45.0, &vcsel, &link);
        let w = beam_radius(vcsel.beam_waist, LAMBDA, 2.15).unwrap();
        let axial = axial_received_power(1.0, w, link.photodiode_area, link.aperture).unwrap();
        prop_assert!(g >= 0.0);
        prop_assert!(g <= axial * (1.0 + 1e-12));
        let inc = (ap - user).normalize().dot(&n).acos().to_degrees();
        if inc > 45.0 {
            prop_assert_eq!(g, 0.0);
        }
    }

    #[test]
    fn received_power_scales_with_tx_power(c in 0.1..10.0f64, x in 0.5..4.5f64, y in 0.5..4.5f64) {
        let base = ChannelConfig::default();
        let scaled = ChannelConfig { tx_power_mw: base.tx_power_mw * c, ..base.clone() };
        let ap = Point::new(2.5, 2.5, 3.0);
        let user = Point::new(x, y, 0.85);
        let up = nalgebra::Vector3::new(0.0, 0.0, 1.0);
        let p = |cfg: &ChannelConfig| {
            cfg.vcsel().tx_power * los_gain(&ap, &user, &up, 90.0, &cfg.vcsel(), &cfg.link_model())
        };
        let (p0, p1) = (p(&base), p(&scaled));
        prop_assert!((p1 - c * p0).abs() <= 1e-12 * p1.abs().max(1e-300));
    }

    #[test]
    fn noise_variance_is_monotone_in_power(p1 in 0.0..1e-2f64, p2 in 0.0..1e-2f64) {
        let v = ChannelConfig::default().vcsel();
        let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
        prop_assert!(noise_variance(lo, &v, 300.0, 50.0) <= noise_variance(hi, &v, 300.0, 50.0));
    }
}
