#ifndef STRUCTDRIFT_H
#define STRUCTDRIFT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SdStatus {
  SD_STATUS_OK = 0,
  SD_STATUS_NULL_ARGUMENT = 1,
  SD_STATUS_INVALID_UTF8 = 2,
  SD_STATUS_IO = 3,
  SD_STATUS_NOT_ELF = 4,
  SD_STATUS_UNKNOWN_ARCHITECTURE = 5,
  SD_STATUS_NO_DEBUG_INFO = 6,
  SD_STATUS_MALFORMED_DWARF = 7,
  SD_STATUS_SCHEMA = 8,
  SD_STATUS_INVARIANT = 9,
  SD_STATUS_NOT_FOUND = 10,
  SD_STATUS_ANALYSIS = 11,
  SD_STATUS_PANIC = 12,
} SdStatus;

/**
 * The differences between two profiles.
 */
typedef struct SdDiff SdDiff;

/**
 * A structure profile.
 */
typedef struct SdProfile SdProfile;

typedef struct SdChangeCounts {
  uint64_t offset_changes;
  uint64_t member_additions;
  uint64_t member_removals;
  uint64_t structure_removals;
  uint64_t structure_additions;
  uint64_t total_impact;
} SdChangeCounts;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failed call on this thread, or NULL. The
 * pointer stays valid until the next call into this library on the same
 * thread.
 */
const char *sd_last_error(void);

/**
 * Extracts a profile from the ELF binary at `path`, labelled with
 * `version`. The architecture is taken from the ELF header.
 *
 * # Safety
 * `path` and `version` must be NUL-terminated strings; `out` must be
 * writable.
 */
enum SdStatus sd_extract_profile(const char *path, const char *version, struct SdProfile **out);

/**
 * Reads a profile file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum SdStatus sd_profile_read(const char *path, struct SdProfile **out);

/**
 * Writes `profile` to `path` in the canonical file format.
 *
 * # Safety
 * `profile` must come from this library; `path` must be a NUL-terminated
 * string.
 */
enum SdStatus sd_profile_write(const struct SdProfile *profile, const char *path);

/**
 * Canonical JSON text of `profile`; free with [`sd_string_free`].
 *
 * # Safety
 * `profile` must come from this library; `out` must be writable.
 */
enum SdStatus sd_profile_to_json(const struct SdProfile *profile, char **out);

/**
 * # Safety
 * `profile` must come from this library and not be used afterwards. NULL
 * is ignored.
 */
void sd_profile_free(struct SdProfile *profile);

/**
 * Number of structures in `profile`; 0 for NULL.
 *
 * # Safety
 * `profile` must be NULL or come from this library.
 */
size_t sd_profile_structure_count(const struct SdProfile *profile);

/**
 * Byte size of the named structure. Returns `NotFound` when absent.
 *
 * # Safety
 * `profile` must come from this library; `name` must be a NUL-terminated
 * string; `out` must be writable.
 */
enum SdStatus sd_profile_structure_size(const struct SdProfile *profile,
                                        const char *name,
                                        uint64_t *out);

/**
 * Offset of `member` within `structure`. Returns `NotFound` when either is
 * absent.
 *
 * # Safety
 * `profile` must come from this library; `structure` and `member` must be
 * NUL-terminated strings; `out` must be writable.
 */
enum SdStatus sd_profile_member_offset(const struct SdProfile *profile,
                                       const char *structure,
                                       const char *member,
                                       uint64_t *out);

/**
 * Diffs two profiles over all structures.
 *
 * # Safety
 * `old` and `new` must come from this library; `out` must be writable.
 */
enum SdStatus sd_diff(const struct SdProfile *old,
                      const struct SdProfile *new_,
                      struct SdDiff **out);

/**
 * # Safety
 * `diff` must come from this library; `out` must be writable.
 */
enum SdStatus sd_diff_counts(const struct SdDiff *diff, struct SdChangeCounts *out);

/**
 * Canonical JSON text of `diff`; free with [`sd_string_free`].
 *
 * # Safety
 * `diff` must come from this library; `out` must be writable.
 */
enum SdStatus sd_diff_to_json(const struct SdDiff *diff, char **out);

/**
 * # Safety
 * `diff` must come from this library and not be used afterwards. NULL is
 * ignored.
 */
void sd_diff_free(struct SdDiff *diff);

/**
 * # Safety
 * `s` must be a string returned by this library and not be used
 * afterwards. NULL is ignored.
 */
void sd_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STRUCTDRIFT_H */
