use dustflow::raster::{derivatives, load_grid, save_grid, Grid};
use proptest::prelude::*;

fn grid_strategy() -> impl Strategy<Value = Grid> {
    (1usize..6, 1usize..6).prop_flat_map(|(r, c)| {
        prop::collection::vec(
            prop_oneof![
                -1e6f64..1e6,
                any::<f64>().prop_filter("finite", |v| v.is_finite()),
                Just(0.0),
                Just(-0.0),
                Just(f64::MIN_POSITIVE),
            ],
            r * c,
        )
        .prop_map(move |d| Grid::new(r, c, d).unwrap())
    })
}

proptest! {
    #[test]
    fn text_round_trip_is_exact(g in grid_strategy()) {
        let text = g.to_grid_text();
        let back = Grid::parse_grid_text(&text).unwrap();
        prop_assert_eq!(back.shape(), g.shape());
        for (a, b) in back.data().iter().zip(g.data()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
        prop_assert_eq!(back.to_grid_text(), text);
    }

    #[test]
    fn affine_fields_have_exact_interior_derivatives(
        a in -5.0f64..5.0, b in -3.0f64..3.0, c in -3.0f64..3.0, rows in 3usize..8, cols in 3usize..8,
    ) {
        // Dyadic coefficients keep every stencil evaluation exact.
        let q = |v: f64| (v * 64.0).round() / 64.0;
        let (a, b, c) = (q(a), q(b), q(c));
        let g = Grid::from_fn(rows, cols, |i, j| a + b * j as f64 + c * i as f64);
        let d = derivatives(&g, &g).unwrap();
        for i in 0..rows {
            for j in 0..cols {
                prop_assert_eq!(d.eta_x.get(i, j), b);
                prop_assert_eq!(d.eta_y.get(i, j), c);
                prop_assert_eq!(d.eta_t.get(i, j), 0.0);
            }
        }
    }

    #[test]
    fn derivatives_are_linear(
        seed in prop::collection::vec(-1.0f64..1.0, 4 * 25),
        s in -2.0f64..2.0, t in -2.0f64..2.0,
    ) {
        let g = |k: usize| Grid::new(5, 5, seed[k * 25..(k + 1) * 25].to_vec()).unwrap();
        let (a, b, a2, b2) = (g(0), g(1), g(2), g(3));
        let mix = |x: &Grid, y: &Grid| x.zip_map(y, |p, q| s * p + t * q).unwrap();
        let lhs = derivatives(&mix(&a, &a2), &mix(&b, &b2)).unwrap();
        let d1 = derivatives(&a, &b).unwrap();
        let d2 = derivatives(&a2, &b2).unwrap();
        for (l, (x, y)) in [
            (&lhs.eta_x, (&d1.eta_x, &d2.eta_x)),
            (&lhs.eta_y, (&d1.eta_y, &d2.eta_y)),
            (&lhs.eta_t, (&d1.eta_t, &d2.eta_t)),
            (&lhs.eta, (&d1.eta, &d2.eta)),
        ] {
            for k in 0..25 {
                let expect = s * x.data()[k] + t * y.data()[k];
                prop_assert!((l.data()[k] - expect).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn file_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.grid");
    std::fs::write(&path, "grid 2 3\n1.0 -2.50 3\n0.1 1e3 -0\n").unwrap();
    let g = load_grid(&path).unwrap();
    let out = dir.path().join("h.grid");
    save_grid(&g, &out).unwrap();
    let canonical = std::fs::read_to_string(&out).unwrap();
    assert_eq!(canonical, "grid 2 3\n1 -2.5 3\n0.1 1e3 -0\n");
    save_grid(&load_grid(&out).unwrap(), &path).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), canonical);
}

#[test]
fn stencils_match_literal_definitions() {
    let mut state = 0x9e3779b97f4a7c15u64;
    let mut next = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    let a = Grid::from_fn(5, 5, |_, _| next());
    let b = Grid::from_fn(5, 5, |_, _| next());
    let d = derivatives(&a, &b).unwrap();
    let m = |i: usize, j: usize| 0.5 * (a.get(i, j) + b.get(i, j));
    for i in 0..5 {
        for j in 0..5 {
            let ex = match j {
                0 => m(i, 1) - m(i, 0),
                4 => m(i, 4) - m(i, 3),
                _ => 0.5 * (m(i, j + 1) - m(i, j - 1)),
            };
            let ey = match i {
                0 => m(1, j) - m(0, j),
                4 => m(4, j) - m(3, j),
                _ => 0.5 * (m(i + 1, j) - m(i - 1, j)),
            };
            assert_eq!(d.eta_x.get(i, j), ex);
            assert_eq!(d.eta_y.get(i, j), ey);
            assert_eq!(d.eta_t.get(i, j), b.get(i, j) - a.get(i, j));
            assert_eq!(d.eta.get(i, j), m(i, j));
        }
    }
}
