fn main() {
    let t0 = std::time::Instant::now();
    let reports = mcl::gradcheck::run_suite(1, 1.0);
    for r in &reports { println!("{r}"); }
    println!("elapsed: {:.1}s, all passed: {}", t0.elapsed().as_secs_f64(), mcl::gradcheck::suite_passed(&reports));
}
