// Scratch measurements; not part of the suite.

use gofd::cloud::{cloud_graded, cloud_rings};
use gofd::metrics::{exact_disk_solution, l2_error};
use gofd::solver::{solve, FractionalProblem};
use gofd::spectral::FractionalOrder;
use gofd::transfer::{build_cdt, TransferMethod};
use gofd::DomainSpec;

#[test]
#[ignore]
fn graded_decomposition() {
    let domain = DomainSpec::unit_disk();
    let s = FractionalOrder::new(0.5).unwrap();
    for (idx, n) in [400usize, 800, 1600, 3200].iter().enumerate() {
        let cloud = cloud_graded(&domain, *n, s, 1 + idx as u64).unwrap();
        let tri = build_cdt(&cloud, &domain).unwrap();
        let exact_nodal: Vec<f64> = cloud
            .points()
            .iter()
            .map(|&p| exact_disk_solution(s, p))
            .collect();
        let interp_err =
            l2_error(&cloud, &tri, &exact_nodal, |p| exact_disk_solution(s, p)).unwrap();
        let problem = FractionalProblem::new(domain.clone(), s, |_| 1.0);
        let report = solve(&problem, &cloud, TransferMethod::Delaunay).unwrap();
        let vals = report.nodal_values(&cloud);
        let solve_err = l2_error(&cloud, &tri, &vals, |p| exact_disk_solution(s, p)).unwrap();
        let mut acc = 0.0;
        for (i, _) in cloud.points().iter().enumerate() {
            let d = vals[i] - exact_nodal[i];
            acc += d * d;
        }
        let rms = (acc / cloud.n_total() as f64).sqrt();
        println!(
            "graded n={n} N_v={} h_bar={:.4e} interp={:.4e} solve={:.4e} rms={:.4e} N_FD={} iters={}",
            cloud.n_total(),
            cloud.h_bar(),
            interp_err,
            solve_err,
            rms,
            report.n_fd,
            report.iterations
        );
    }
}

#[test]
#[ignore]
fn rings_decomposition_s075() {
    let domain = DomainSpec::unit_disk();
    let s = FractionalOrder::new(0.75).unwrap();
    for j in [10usize, 20, 40, 80] {
        let cloud = cloud_rings(j).unwrap();
        let tri = build_cdt(&cloud, &domain).unwrap();
        let exact_nodal: Vec<f64> = cloud
            .points()
            .iter()
            .map(|&p| exact_disk_solution(s, p))
            .collect();
        let interp_err =
            l2_error(&cloud, &tri, &exact_nodal, |p| exact_disk_solution(s, p)).unwrap();
        let problem = FractionalProblem::new(domain.clone(), s, |_| 1.0);
        let report = solve(&problem, &cloud, TransferMethod::Delaunay).unwrap();
        let vals = report.nodal_values(&cloud);
        let solve_err = l2_error(&cloud, &tri, &vals, |p| exact_disk_solution(s, p)).unwrap();
        let mut acc = 0.0;
        for (i, _) in cloud.points().iter().enumerate() {
            let d = vals[i] - exact_nodal[i];
            acc += d * d;
        }
        let rms = (acc / cloud.n_total() as f64).sqrt();
        println!(
            "rings J={j} N_v={} h_bar={:.4e} interp={:.4e} solve={:.4e} rms={:.4e} N_FD={}",
            cloud.n_total(),
            cloud.h_bar(),
            interp_err,
            solve_err,
            rms,
            report.n_fd
        );
    }
}
