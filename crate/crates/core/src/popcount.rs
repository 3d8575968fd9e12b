//! Population-count primitives over 64-bit words.
//!
//! The hot kernels are compiled once per instruction-set tier (portable,
//! `popcnt`, AVX2, AVX-512 with vector popcount). The tier is probed once and
//! cached; callers dispatch a whole kernel at a time so inner loops stay
//! branch-free.

use std::sync::atomic::{AtomicU8, Ordering};

const UNKNOWN: u8 = 0;
const NATIVE: u8 = 1;
const PORTABLE: u8 = 2;

static DETECTED: AtomicU8 = AtomicU8::new(UNKNOWN);
static FORCE_PORTABLE: AtomicU8 = AtomicU8::new(0);

/// Whether the CPU provides a hardware population-count instruction.
pub fn native_available() -> bool {
    if FORCE_PORTABLE.load(Ordering::Relaxed) != 0 {
        return false;
    }
    match DETECTED.load(Ordering::Relaxed) {
        NATIVE => true,
        PORTABLE => false,
        _ => {
            let native = detect();
            DETECTED.store(if native { NATIVE } else { PORTABLE }, Ordering::Relaxed);
            native
        }
    }
}

/// Forces every kernel onto the portable path (used to cross-check the two).
pub fn force_portable(on: bool) {
    FORCE_PORTABLE.store(on as u8, Ordering::Relaxed);
}

#[cfg(target_arch = "x86_64")]
fn detect() -> bool {
    std::arch::is_x86_feature_detected!("popcnt")
}

#[cfg(not(target_arch = "x86_64"))]
fn detect() -> bool {
    // aarch64 and friends lower count_ones to a native instruction already.
    true
}

/// Number of differing bits between two equally long word slices.
#[inline(always)]
pub(crate) fn xor_popcount_words(a: &[u64], b: &[u64]) -> u32 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

#[inline(always)]
pub(crate) fn popcount_words(a: &[u64]) -> u32 {
    a.iter().map(|x| x.count_ones()).sum()
}

/// Instruction-set tier a multiversioned kernel runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tier {
    Portable,
    Popcnt,
    Avx2,
    Avx512,
}

static TIER: AtomicU8 = AtomicU8::new(u8::MAX);

/// Best tier for this CPU (always [`Tier::Portable`] while forced).
pub fn tier() -> Tier {
    if !native_available() {
        return Tier::Portable;
    }
    let t = match TIER.load(Ordering::Relaxed) {
        u8::MAX => {
            let t = detect_tier();
            TIER.store(t as u8, Ordering::Relaxed);
            t
        }
        v => [Tier::Portable, Tier::Popcnt, Tier::Avx2, Tier::Avx512][v as usize],
    };
    t
}

#[cfg(target_arch = "x86_64")]
fn detect_tier() -> Tier {
    use std::arch::is_x86_feature_detected as has;
    if has!("avx512f") && has!("avx512bw") && has!("avx512vl") && has!("avx512vpopcntdq") && has!("avx2") {
        Tier::Avx512
    } else if has!("avx2") {
        Tier::Avx2
    } else {
        Tier::Popcnt
    }
}

#[cfg(not(target_arch = "x86_64"))]
fn detect_tier() -> Tier {
    Tier::Popcnt
}

/// Defines a function whose body is compiled once per [`Tier`] and
/// dispatched at runtime. The body is inlined into each variant, so
/// `count_ones` and the integer loops pick up the enabled instructions.
macro_rules! multiversion {
    ($(#[$m:meta])* $vis:vis fn $name:ident($($arg:ident : $ty:ty),* $(,)?) -> $ret:ty $body:block) => {
        $(#[$m])*
        $vis fn $name($($arg: $ty),*) -> $ret {
            #[inline(always)]
            fn body($($arg: $ty),*) -> $ret $body
            #[cfg(target_arch = "x86_64")]
            {
                #[target_feature(enable = "avx512f,avx512bw,avx512vl,avx512vpopcntdq,avx2,popcnt")]
                unsafe fn v512($($arg: $ty),*) -> $ret {
                    body($($arg),*)
                }
                #[target_feature(enable = "avx2,popcnt")]
                unsafe fn v256($($arg: $ty),*) -> $ret {
                    body($($arg),*)
                }
                #[target_feature(enable = "popcnt")]
                unsafe fn vpop($($arg: $ty),*) -> $ret {
                    body($($arg),*)
                }
                // SAFETY: each variant runs only when `tier()` detected its features.
                match $crate::popcount::tier() {
                    $crate::popcount::Tier::Avx512 => return unsafe { v512($($arg),*) },
                    $crate::popcount::Tier::Avx2 => return unsafe { v256($($arg),*) },
                    $crate::popcount::Tier::Popcnt => return unsafe { vpop($($arg),*) },
                    $crate::popcount::Tier::Portable => {}
                }
            }
            body($($arg),*)
        }
    };
}
pub(crate) use multiversion;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xor_popcount_counts_differences() {
        let a = [0b1011u64, u64::MAX];
        let b = [0b0010u64, 0];
        assert_eq!(xor_popcount_words(&a, &b), 2 + 64);
        assert_eq!(popcount_words(&a), 3 + 64);
    }

    multiversion! {
        fn xor_count(a: &[u64], b: &[u64]) -> u32 {
            xor_popcount_words(a, b)
        }
    }

    #[test]
    fn dispatch_paths_agree() {
        let a: Vec<u64> = (0..37u64).map(|i| i.wrapping_mul(0x9E37_79B9_7F4A_7C15)).collect();
        let b: Vec<u64> = a.iter().map(|w| w.rotate_left(7) ^ 0xFF00).collect();
        let naive: u32 = a.iter().zip(&b).map(|(x, y)| (0..64).filter(|i| (x ^ y) >> i & 1 == 1).count() as u32).sum();
        assert_eq!(xor_count(&a, &b), naive);
        assert_eq!(tier() == Tier::Portable, !native_available());
    }
}
