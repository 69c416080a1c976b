use chns_core::mms::*;

fn main() {
    let case = builtin_case(0.5, 1.0);
    let t2 = std::time::Instant::now();
    let table = run_convergence(&case, 1, &[(32, 4), (32, 8), (32, 16)], 0.5, StudyAxis::TimeStep).unwrap();
    for (row, eoc) in table.rows.iter().zip(table.eoc()) {
        println!(
            "n={:<3} tau={:.5} c_dg={:.4e} v_l2={:.4e} v_dgacc={:.4e} mu={:.4e} eoc={:?}",
            row.n, row.tau, row.err_c_dg, row.err_v_l2, row.err_v_dg_acc, row.err_mu_dg_acc,
            eoc.iter().map(|e| e.map(|v| (v * 100.0).round() / 100.0)).collect::<Vec<_>>()
        );
    }
    println!("temporal n=32 kappa=0.5: {:?}", t2.elapsed());

    let t1 = std::time::Instant::now();
    let t_final = 0.1;
    let configs: Vec<(usize, usize)> = [4usize, 8, 16]
        .iter()
        .map(|&n| {
            let h = 2f64.sqrt() / n as f64;
            (n, (t_final / (0.1 * h)).round().max(1.0) as usize)
        })
        .collect();
    let table = run_convergence(&case, 1, &configs, t_final, StudyAxis::MeshWidth).unwrap();
    for (row, eoc) in table.rows.iter().zip(table.eoc()) {
        println!(
            "n={:<3} tau={:.5} c_dg={:.4e} v_l2={:.4e} mu={:.4e} eoc={:?}",
            row.n, row.tau, row.err_c_dg, row.err_v_l2, row.err_mu_dg_acc,
            eoc.iter().map(|e| e.map(|v| (v * 100.0).round() / 100.0)).collect::<Vec<_>>()
        );
    }
    println!("spatial q=1 kappa=0.5: {:?}", t1.elapsed());
}
