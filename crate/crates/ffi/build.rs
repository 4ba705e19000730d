fn main() {
    let crate_dir = std::env::var("CARGO_MANIFEST_DIR").unwrap();
    let out = std::path::Path::new(&crate_dir).join("include").join("pme_lab.h");
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=build.rs");
    let mut config = cbindgen::Config::default();
    config.usize_is_size_t = true;
    cbindgen::Builder::new()
        .with_config(config)
        .with_crate(&crate_dir)
        .with_language(cbindgen::Language::C)
        .with_cpp_compat(true)
        .with_include_guard("PME_LAB_H")
        .with_documentation(true)
        .generate()
        .expect("cbindgen could not generate the header")
        .write_to_file(out);
}
