use std::process::Command;

fn main() {
    println!("cargo:rerun-if-changed=../../.git/HEAD");
    let describe = Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok());
    if let Some(d) = describe {
        let d = d.trim();
        if !d.is_empty() {
            println!(
                "cargo:rustc-env=FANOTRAP_GIT_DESCRIBE={} ({d})",
                std::env::var("CARGO_PKG_VERSION").unwrap_or_default()
            );
        }
    }
}
