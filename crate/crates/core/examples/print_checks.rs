fn main() {
    for c in blurdiff_core::verify::run_all(&blurdiff_core::verify::VerifyOptions::default()) {
        println!("{} {} {}", if c.passed { "PASS" } else { "FAIL" }, c.id, c.detail);
    }
}
