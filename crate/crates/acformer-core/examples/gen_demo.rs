fn main() {
    let ds = acformer_core::data::ett_like_series(17420, 2026);
    acformer_core::data::write_csv(&ds, std::path::Path::new("/tmp/desk/etth1_like.csv")).unwrap();
}
