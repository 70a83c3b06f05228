//! Frozen reference values for the validity statistics.
//!
//! The binary-vector t statistics have the closed form
//! sqrt(x (n-1) / (n - x)) for x detections among n participants, and the
//! expected values below were computed independently of the library (exact
//! closed form for t; high-precision numerical integration for p). They pin
//! down the whole chain: sample statistics, the t formula, and the
//! regularized-incomplete-beta tail evaluation.

use become_net::validity::{
    mimicry_validity, one_sample_t, p_from_t, report_csv, Sidedness,
};

fn binary(n: usize, ones: usize) -> Vec<f64> {
    (0..n).map(|i| if i < ones { 1.0 } else { 0.0 }).collect()
}

#[test]
fn detection_count_table_matches_reference_t_and_p() {
    // (detections among n=20, expected t, expected two-sided p or None for
    // "< 0.001").
    let table: &[(usize, f64, Option<f64>)] = &[
        (1, 1.000, Some(0.330)),
        (3, 1.831, Some(0.083)),
        (5, 2.517, Some(0.021)),
        (7, 3.199, Some(0.005)),
        (10, 4.359, None),
        (17, 10.376, None),
        (18, 13.077, None),
    ];
    for &(x, t_ref, p_ref) in table {
        let test = one_sample_t(&binary(20, x), 0.0, Sidedness::TwoSided).unwrap();
        let t = test.t.unwrap();
        let p = test.p.unwrap();
        assert!(
            (t - t_ref).abs() <= 0.001,
            "x={x}: t {t} should match reference {t_ref} within 0.001"
        );
        match p_ref {
            Some(p_ref) => assert!(
                (p - p_ref).abs() <= 0.001,
                "x={x}: p {p} should match reference {p_ref} within 0.001"
            ),
            None => assert!(p < 0.001, "x={x}: p {p} should fall below 0.001"),
        }
    }
}

#[test]
fn one_sided_p_values_at_seventeen_degrees_of_freedom() {
    // Reference pairs computed with arbitrary-precision numerics.
    let table = [(3.523, 0.001), (2.291, 0.018), (2.566, 0.010)];
    for (t, p_ref) in table {
        let p = p_from_t(t, 17.0, Sidedness::Greater).unwrap();
        assert!(
            (p - p_ref).abs() <= 0.0005,
            "t={t}, df=17: p {p} should match reference {p_ref} within 0.0005"
        );
    }
}

#[test]
fn zero_detections_render_the_undefined_marker() {
    let row = mimicry_validity(&[0; 20], 0.05).unwrap();
    assert_eq!(row.t, None);
    assert_eq!(row.p, None);
    assert!(!row.valid);
    let csv = report_csv(&[row]);
    let line = csv.lines().nth(1).unwrap();
    assert!(line.contains("--*"), "row should carry the marker: {line}");
    assert!(!line.contains("inf") && !line.contains("NaN"));
}
