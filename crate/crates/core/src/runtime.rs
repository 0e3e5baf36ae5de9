//! Process-level tuning.

/// Keep freed heap memory around instead of returning it to the kernel.
///
/// Every graph node allocates a fresh output buffer, and glibc serves the
/// large ones with `mmap` and unmaps them on free, so each training step
/// would fault every page in again. Raising the mmap and trim thresholds lets
/// the next step reuse the same pages. A no-op on other platforms. Call it
/// once, early, from binaries; it is process wide.
pub fn tune_allocator() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    // SAFETY: mallopt only adjusts allocator parameters; called before heavy
    // allocation, and glibc serializes it with the allocator lock.
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 1 << 30);
        libc::mallopt(libc::M_TRIM_THRESHOLD, i32::MAX);
        libc::mallopt(libc::M_TOP_PAD, 64 << 20);
    }
}
