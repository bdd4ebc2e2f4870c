fn main() {
    let dir = std::env::var("CARGO_MANIFEST_DIR").unwrap();
    let cfg = cbindgen::Config::from_file(format!("{dir}/cbindgen.toml")).expect("cbindgen.toml");
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");
    match cbindgen::generate_with_config(&dir, cfg) {
        Ok(b) => {
            b.write_to_file(format!("{dir}/include/sepcross.h"));
        }
        Err(e) => println!("cargo:warning=header not generated: {e}"),
    }
}
