use meshvox::ops::gradcheck::{op_names, run_op, DEFAULT_STEP, DEFAULT_TOL};

#[test]
fn probe_all_ops() {
    let seeds: Vec<u64> = (0..5).collect();
    let start = std::time::Instant::now();
    let mut all_pass = true;
    for op in op_names() {
        let reports = run_op(op, &seeds, DEFAULT_STEP, DEFAULT_TOL).unwrap();
        let worst = reports.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
        let pass = reports.iter().all(|r| r.pass);
        println!("{op:28} worst {worst:.3e} pass={pass}");
        all_pass &= pass;
    }
    println!("total {:?}", start.elapsed());
    assert!(all_pass);
}
