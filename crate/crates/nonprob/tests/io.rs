use std::fs;

use nonprob::harness::{draw_s, SDesign};
use nonprob::io::{self, Margins, SFrame};
use nonprob_core::popgen::{draw_b_sample, generate_population, CovariateSpec, DgpSpec, Frame};
use proptest::prelude::*;

fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, body).unwrap();
    p
}

#[test]
fn three_row_b_file() {
    let dir = tempfile::tempdir().unwrap();
    let b = write(&dir, "b.csv", "unit_id,y,x\n9,1.5,1\n2,-3,0\n4,0.25,1\n");
    let data = io::ingest(&b, None, None, SFrame::Full).unwrap();
    assert_eq!(data.b.len(), 3);
    assert_eq!(data.b.members, vec![2, 4, 9]);
    assert_eq!(data.b.y, vec![-3.0, 0.25, 1.5]);
    assert_eq!(data.b.x, vec![0, 1, 1]);
}

#[test]
fn string_labels_follow_margins_order() {
    let dir = tempfile::tempdir().unwrap();
    let b = write(&dir, "b.csv", "unit_id,y,x\n0,1,north\n1,2,south\n");
    let m = write(&dir, "m.csv", "x,N_x\nsouth,5\nnorth,7\n");
    let data = io::ingest(&b, None, Some(&m), SFrame::Full).unwrap();
    assert_eq!(data.b.x, vec![1, 0]);
    assert_eq!(data.cell_sizes(), Some(vec![5, 7]));

    let m = write(&dir, "m2.csv", "x,N_x\nsouth,5\n");
    let err = io::ingest(&b, None, Some(&m), SFrame::Full).unwrap_err();
    assert!(err.to_string().contains("b.csv:2"), "{err}");
}

#[test]
fn totals_margins() {
    let dir = tempfile::tempdir().unwrap();
    let m = write(&dir, "m.csv", "t_component,total\n1,100\nx=1,40\n");
    assert_eq!(io::read_margins(&m).unwrap(), Margins::Totals(vec![("1".into(), 100.0), ("x=1".into(), 40.0)]));
    let m = write(&dir, "m.csv", "stratum,count\n1,100\n");
    assert_eq!(io::read_margins(&m).unwrap_err().kind(), "schema");
}

#[test]
fn schema_and_value_errors_name_the_place() {
    let dir = tempfile::tempdir().unwrap();
    let b = write(&dir, "b.csv", "unit_id,y\n0,1\n");
    assert!(io::read_b(&b).unwrap_err().to_string().contains("missing column x"));
    let b = write(&dir, "b.csv", "unit_id,y,x\n0,1,0\n1,abc,0\n");
    let e = io::read_b(&b).unwrap_err().to_string();
    assert!(e.contains("b.csv:3") && e.contains("column y"), "{e}");
    let s = write(&dir, "s.csv", "unit_id,pi\n0,1.5\n");
    assert!(io::read_s(&s).unwrap_err().to_string().contains("s.csv:2"));
    let s = write(&dir, "s.csv", "unit_id,pi,w\n0,0.5,1\n");
    assert_eq!(io::read_s(&s).unwrap_err().kind(), "schema");
}

#[test]
fn population_blank_columns_must_be_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(&dir, "p.csv", "unit_id,y,x,z,p_true,mu\n0,1,0,,0.5,\n1,2,0,,0.5,\n");
    let pop = io::read_population(&p).unwrap();
    assert!(pop.z.is_none() && pop.mu.is_none());
    let p = write(&dir, "p.csv", "unit_id,y,x,z,p_true,mu\n0,1,0,0.3,0.5,\n1,2,0,,0.5,\n");
    assert!(io::read_population(&p).unwrap_err().to_string().contains("p.csv:3"));
    let p = write(&dir, "p.csv", "unit_id,y,x,z,p_true,mu\n1,1,0,,0.5,\n");
    assert!(io::read_population(&p).is_err());
}

fn dgp() -> impl Strategy<Value = (DgpSpec, u64)> {
    (1usize..4, 20usize..300, any::<bool>(), any::<u64>()).prop_map(|(k, n, with_z, seed)| {
        let mut spec = DgpSpec::new(
            n,
            vec![1.0 / k as f64; k],
            (0..k).map(|c| c as f64 * 1.37 - 0.2).collect(),
            (0..k).map(|c| 0.2 + 0.15 * c as f64).collect(),
            0.731,
        );
        if with_z {
            spec.covariate = CovariateSpec::Uniform;
            spec.covariate_slope = 0.9;
        }
        (spec, seed)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn export_then_ingest_is_identity((spec, seed) in dgp()) {
        let dir = tempfile::tempdir().unwrap();
        let pop = generate_population(&spec, seed).unwrap();
        let p = write(&dir, "p.csv", &io::population_csv(&pop));
        prop_assert_eq!(&io::read_population(&p).unwrap(), &pop);

        let b = draw_b_sample(&pop, seed ^ 1).unwrap();
        let s = draw_s(&pop, &SDesign::SrsFraction { fraction: 0.3 }, Frame::ComplementOf(&b), seed ^ 2).unwrap();
        let bp = write(&dir, "b.csv", &io::b_csv(&b));
        let sp = write(&dir, "s.csv", &io::s_csv(&s));
        let mp = write(&dir, "m.csv", &io::margins_csv(&pop));
        let data = io::ingest(&bp, Some(&sp), Some(&mp), SFrame::Complement).unwrap();
        prop_assert_eq!(&data.b, &b);
        let got = data.s.clone().unwrap();
        prop_assert_eq!(&got.members, &s.members);
        prop_assert_eq!(&got.pi, &s.pi);
        prop_assert_eq!(&got.d, &s.d);
        prop_assert_eq!(&got.x, &s.x);
        prop_assert_eq!(&got.y, &s.y);
        prop_assert_eq!(&got.z, &s.z);
        prop_assert_eq!(data.cell_sizes().unwrap(), pop.stratum_sizes());
    }

    #[test]
    fn row_order_does_not_matter(perm in Just((0..12usize).collect::<Vec<_>>()).prop_shuffle()) {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::from("unit_id,y,x\n");
        for &i in &perm {
            body.push_str(&format!("{},{},{}\n", i * 3, i as f64 / 7.0, i % 3));
        }
        let data = io::ingest(&write(&dir, "b.csv", &body), None, None, SFrame::Full).unwrap();
        prop_assert_eq!(data.b.members, (0..12).map(|i| i * 3).collect::<Vec<_>>());
        prop_assert_eq!(data.b.y, (0..12).map(|i| i as f64 / 7.0).collect::<Vec<_>>());
    }
}
