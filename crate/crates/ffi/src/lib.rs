//! C ABI over the structdrift library.
//!
//! Profiles and diffs are handed out as opaque pointers and released with
//! their `*_free` function. Every fallible call returns an [`SdStatus`]; the
//! message for the most recent failure on the calling thread is available
//! from [`sd_last_error`]. Strings returned through out-parameters are owned
//! by the caller and released with [`sd_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use structdrift::diff::{diff_profiles, summarize_diff, DiffReport};
use structdrift::error::{Error, ExtractError, StoreError};
use structdrift::extract::{extract_profile, ExtractionHints};
use structdrift::profile::{read_profile, write_profile};
use structdrift::Profile;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    NotElf = 4,
    UnknownArchitecture = 5,
    NoDebugInfo = 6,
    MalformedDwarf = 7,
    Schema = 8,
    Invariant = 9,
    NotFound = 10,
    Analysis = 11,
    Panic = 12,
}

/// A structure profile.
pub struct SdProfile(Profile);

/// The differences between two profiles.
pub struct SdDiff(DiffReport);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SdChangeCounts {
    pub offset_changes: u64,
    pub member_additions: u64,
    pub member_removals: u64,
    pub structure_removals: u64,
    pub structure_additions: u64,
    pub total_impact: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let message = message.into().replace('\0', " ");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = CString::new(message).ok());
}

fn clear_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

struct Failure(SdStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Extract(x) => match x {
                ExtractError::Io { .. } => SdStatus::Io,
                ExtractError::NotElf { .. } => SdStatus::NotElf,
                ExtractError::UnknownArchitecture { .. } => SdStatus::UnknownArchitecture,
                ExtractError::NoDebugInfo { .. } => SdStatus::NoDebugInfo,
                ExtractError::MalformedDwarf { .. } => SdStatus::MalformedDwarf,
            },
            Error::Store(x) => match x {
                StoreError::Io { .. } | StoreError::RootMissing(_) => SdStatus::Io,
                StoreError::Schema { .. } => SdStatus::Schema,
                StoreError::Invariant { .. } => SdStatus::Invariant,
            },
            Error::Analysis(_) | Error::Render(_) => SdStatus::Analysis,
        };
        Failure(status, e.to_string())
    }
}

impl From<ExtractError> for Failure {
    fn from(e: ExtractError) -> Self {
        Error::from(e).into()
    }
}

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Self {
        Error::from(e).into()
    }
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> SdStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            clear_error();
            SdStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SdStatus::Panic
        }
    }
}

unsafe fn text<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return Err(Failure(SdStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| Failure(SdStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn handle<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, Failure> {
    ptr.as_ref()
        .ok_or_else(|| Failure(SdStatus::NullArgument, format!("{what} is null")))
}

unsafe fn store<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(SdStatus::NullArgument, format!("{what} is null")));
    }
    out.write(value);
    Ok(())
}

fn owned_string(s: String) -> *mut c_char {
    CString::new(s).map_or(ptr::null_mut(), CString::into_raw)
}

/// Message describing the last failed call on this thread, or NULL. The
/// pointer stays valid until the next call into this library on the same
/// thread.
#[no_mangle]
pub extern "C" fn sd_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Extracts a profile from the ELF binary at `path`, labelled with
/// `version`. The architecture is taken from the ELF header.
///
/// # Safety
/// `path` and `version` must be NUL-terminated strings; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn sd_extract_profile(
    path: *const c_char,
    version: *const c_char,
    out: *mut *mut SdProfile,
) -> SdStatus {
    guard(|| {
        let path = text(path, "path")?;
        let hints = ExtractionHints {
            platform_version: text(version, "version")?.to_owned(),
            ..ExtractionHints::default()
        };
        if out.is_null() {
            return Err(Failure(SdStatus::NullArgument, "out is null".into()));
        }
        let extraction = extract_profile(Path::new(path), &hints)?;
        store(out, Box::into_raw(Box::new(SdProfile(extraction.profile))), "out")
    })
}

/// Reads a profile file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sd_profile_read(path: *const c_char, out: *mut *mut SdProfile) -> SdStatus {
    guard(|| {
        let path = text(path, "path")?;
        if out.is_null() {
            return Err(Failure(SdStatus::NullArgument, "out is null".into()));
        }
        let profile = read_profile(Path::new(path))?;
        store(out, Box::into_raw(Box::new(SdProfile(profile))), "out")
    })
}

/// Writes `profile` to `path` in the canonical file format.
///
/// # Safety
/// `profile` must come from this library; `path` must be a NUL-terminated
/// string.
#[no_mangle]
pub unsafe extern "C" fn sd_profile_write(profile: *const SdProfile, path: *const c_char) -> SdStatus {
    guard(|| {
        let profile = handle(profile, "profile")?;
        let path = text(path, "path")?;
        write_profile(&profile.0, Path::new(path))?;
        Ok(())
    })
}

/// Canonical JSON text of `profile`; free with [`sd_string_free`].
///
/// # Safety
/// `profile` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sd_profile_to_json(profile: *const SdProfile, out: *mut *mut c_char) -> SdStatus {
    guard(|| {
        let profile = handle(profile, "profile")?;
        let json = profile.0.to_canonical_json().map_err(|violation| {
            Failure::from(StoreError::Invariant {
                origin: "profile".into(),
                violation,
            })
        })?;
        store(out, owned_string(json), "out")
    })
}

/// # Safety
/// `profile` must come from this library and not be used afterwards. NULL
/// is ignored.
#[no_mangle]
pub unsafe extern "C" fn sd_profile_free(profile: *mut SdProfile) {
    if !profile.is_null() {
        drop(Box::from_raw(profile));
    }
}

/// Number of structures in `profile`; 0 for NULL.
///
/// # Safety
/// `profile` must be NULL or come from this library.
#[no_mangle]
pub unsafe extern "C" fn sd_profile_structure_count(profile: *const SdProfile) -> usize {
    profile.as_ref().map_or(0, |p| p.0.len())
}

/// Byte size of the named structure. Returns `NotFound` when absent.
///
/// # Safety
/// `profile` must come from this library; `name` must be a NUL-terminated
/// string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sd_profile_structure_size(
    profile: *const SdProfile,
    name: *const c_char,
    out: *mut u64,
) -> SdStatus {
    guard(|| {
        let profile = handle(profile, "profile")?;
        let name = text(name, "name")?;
        let record = profile
            .0
            .get(name)
            .ok_or_else(|| Failure(SdStatus::NotFound, format!("no structure {name:?}")))?;
        store(out, record.size, "out")
    })
}

/// Offset of `member` within `structure`. Returns `NotFound` when either is
/// absent.
///
/// # Safety
/// `profile` must come from this library; `structure` and `member` must be
/// NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sd_profile_member_offset(
    profile: *const SdProfile,
    structure: *const c_char,
    member: *const c_char,
    out: *mut u64,
) -> SdStatus {
    guard(|| {
        let profile = handle(profile, "profile")?;
        let structure = text(structure, "structure")?;
        let member = text(member, "member")?;
        let offset = profile
            .0
            .get(structure)
            .and_then(|r| r.member(member))
            .map(|m| m.offset)
            .ok_or_else(|| Failure(SdStatus::NotFound, format!("no member {structure}.{member}")))?;
        store(out, offset, "out")
    })
}

/// Diffs two profiles over all structures.
///
/// # Safety
/// `old` and `new` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sd_diff(old: *const SdProfile, new: *const SdProfile, out: *mut *mut SdDiff) -> SdStatus {
    guard(|| {
        let old = handle(old, "old")?;
        let new = handle(new, "new")?;
        if out.is_null() {
            return Err(Failure(SdStatus::NullArgument, "out is null".into()));
        }
        let report = diff_profiles(&old.0, &new.0, None);
        store(out, Box::into_raw(Box::new(SdDiff(report))), "out")
    })
}

/// # Safety
/// `diff` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sd_diff_counts(diff: *const SdDiff, out: *mut SdChangeCounts) -> SdStatus {
    guard(|| {
        let c = summarize_diff(&handle(diff, "diff")?.0);
        store(
            out,
            SdChangeCounts {
                offset_changes: c.offset_changes,
                member_additions: c.member_additions,
                member_removals: c.member_removals,
                structure_removals: c.structure_removals,
                structure_additions: c.structure_additions,
                total_impact: c.total_impact,
            },
            "out",
        )
    })
}

/// Canonical JSON text of `diff`; free with [`sd_string_free`].
///
/// # Safety
/// `diff` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sd_diff_to_json(diff: *const SdDiff, out: *mut *mut c_char) -> SdStatus {
    guard(|| {
        let diff = handle(diff, "diff")?;
        store(out, owned_string(diff.0.to_canonical_json()), "out")
    })
}

/// # Safety
/// `diff` must come from this library and not be used afterwards. NULL is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn sd_diff_free(diff: *mut SdDiff) {
    if !diff.is_null() {
        drop(Box::from_raw(diff));
    }
}

/// # Safety
/// `s` must be a string returned by this library and not be used
/// afterwards. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn sd_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
