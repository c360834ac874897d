//! Test support for hdb: seeded fixture databases, an independent HTML
//! conformance checker and a mock analysis slave.

pub mod fixtures;
pub mod html;
pub mod mock_slave;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;

/// Environment variable that overrides the mock slave binary location.
pub const MOCK_SLAVE_ENV: &str = "HDB_MOCK_SLAVE";

/// Path of the `hdb-mock-slave` binary, building it on first use.
///
/// The build goes to its own target directory so it never contends with the
/// lock held by the cargo invocation running the tests.
pub fn mock_slave_path() -> PathBuf {
    static PATH: OnceLock<PathBuf> = OnceLock::new();
    PATH.get_or_init(|| {
        if let Some(p) = std::env::var_os(MOCK_SLAVE_ENV) {
            return PathBuf::from(p);
        }
        let target = target_dir().join("mock-slave");
        let cargo = std::env::var_os("CARGO").unwrap_or_else(|| "cargo".into());
        let manifest = Path::new(env!("CARGO_MANIFEST_DIR")).join("Cargo.toml");
        let status = Command::new(cargo)
            .args(["build", "--offline", "--quiet", "--bin", "hdb-mock-slave", "--manifest-path"])
            .arg(&manifest)
            .arg("--target-dir")
            .arg(&target)
            .status()
            .expect("run cargo to build the mock slave");
        assert!(status.success(), "building hdb-mock-slave failed");
        let exe = target.join("debug").join(format!("hdb-mock-slave{}", std::env::consts::EXE_SUFFIX));
        assert!(exe.is_file(), "{} missing after build", exe.display());
        exe
    })
    .clone()
}

fn target_dir() -> PathBuf {
    if let Some(t) = std::env::var_os("CARGO_TARGET_DIR") {
        return PathBuf::from(t);
    }
    // Test binaries live in <target>/debug/deps.
    let exe = std::env::current_exe().expect("current exe");
    exe.ancestors()
        .find(|p| p.file_name().is_some_and(|n| n == "deps"))
        .and_then(|deps| deps.parent()?.parent())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| std::env::temp_dir().join("hdb-target"))
}
