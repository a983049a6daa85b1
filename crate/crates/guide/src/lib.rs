//! The book's chapters, compiled as doc comments so `cargo test --doc`
//! runs every code block. One module per chapter keeps failures traceable
//! to their source file.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/activations.md")]
pub mod activations {}

#[doc = include_str!("../../../book/src/synthetic.md")]
pub mod synthetic {}

#[doc = include_str!("../../../book/src/probes.md")]
pub mod probes {}

#[doc = include_str!("../../../book/src/hnodes.md")]
pub mod hnodes {}

#[doc = include_str!("../../../book/src/attacks.md")]
pub mod attacks {}

#[doc = include_str!("../../../book/src/defense.md")]
pub mod defense {}

#[doc = include_str!("../../../book/src/pipeline.md")]
pub mod pipeline {}

#[cfg(test)]
mod tests {
    use std::fs;
    use std::path::Path;

    /// Every chapter listed in the summary is included above.
    #[test]
    fn summary_matches_included_chapters() {
        let book = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../book/src");
        let summary = fs::read_to_string(book.join("SUMMARY.md")).unwrap();
        let lib = include_str!("lib.rs");
        let mut count = 0;
        for line in summary.lines() {
            if let Some(start) = line.find("](") {
                let file = &line[start + 2..line.len() - 1];
                assert!(book.join(file).exists(), "{file} missing");
                assert!(lib.contains(&format!("book/src/{file}")), "{file} not compiled");
                count += 1;
            }
        }
        assert_eq!(count, 8);
    }
}
