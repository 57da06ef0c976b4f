#ifndef EVOLGYM_H
#define EVOLGYM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EvolgymStatus {
  EVOLGYM_STATUS_OK = 0,
  EVOLGYM_STATUS_NULL_ARGUMENT = 1,
  EVOLGYM_STATUS_INVALID_UTF8 = 2,
  EVOLGYM_STATUS_UNKNOWN_ENV = 3,
  EVOLGYM_STATUS_UNKNOWN_INSTRUCTION = 4,
  EVOLGYM_STATUS_UNKNOWN_SESSION = 5,
  EVOLGYM_STATUS_SESSION_DONE = 6,
  EVOLGYM_STATUS_BAD_REQUEST = 7,
  /**
   * Agent output without a usable `Action:` block.
   */
  EVOLGYM_STATUS_PARSE_ERROR = 8,
  /**
   * A number outside the accepted range.
   */
  EVOLGYM_STATUS_DOMAIN_ERROR = 9,
  /**
   * A bug on this side of the boundary, including caught panics.
   */
  EVOLGYM_STATUS_INTERNAL = 10,
} EvolgymStatus;

/**
 * Opaque session table over the built-in environments at their default
 * difficulties. Sessions are created from seeds.
 */
typedef struct EvolgymEnv EvolgymEnv;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null after a
 * successful one. Owned by the library.
 */
const char *evolgym_last_error(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library, freed once.
 */
void evolgym_string_free(char *s);

/**
 * Library version, owned by the library.
 */
const char *evolgym_version(void);

/**
 * A new session table, or null if construction failed.
 */
struct EvolgymEnv *evolgym_env_new(void);

/**
 * # Safety
 * `env` must be null or a handle from [`evolgym_env_new`], freed once.
 */
void evolgym_env_free(struct EvolgymEnv *env);

/**
 * Starts a session of `env_name` from `seed`. `out` receives
 * `{"session_id", "system_prompt", "observation"}`.
 *
 * # Safety
 * Pointers must be valid; strings nul-terminated.
 */
enum EvolgymStatus evolgym_env_create(const struct EvolgymEnv *env,
                                      const char *env_name,
                                      uint64_t seed,
                                      char **out);

/**
 * Applies `action`. `out` receives
 * `{"observation", "step_reward", "reward", "done", "available_actions"}`.
 *
 * # Safety
 * Pointers must be valid; strings nul-terminated.
 */
enum EvolgymStatus evolgym_env_step(const struct EvolgymEnv *env,
                                    const char *session_id,
                                    const char *action,
                                    char **out);

/**
 * `out` receives the current observation as plain text.
 *
 * # Safety
 * Pointers must be valid; strings nul-terminated.
 */
enum EvolgymStatus evolgym_env_observation(const struct EvolgymEnv *env,
                                           const char *session_id,
                                           char **out);

/**
 * `out` receives the available actions as a JSON array of strings.
 *
 * # Safety
 * Pointers must be valid; strings nul-terminated.
 */
enum EvolgymStatus evolgym_env_available_actions(const struct EvolgymEnv *env,
                                                 const char *session_id,
                                                 char **out);

/**
 * Restarts the session's episode; `out` receives the first observation.
 *
 * # Safety
 * Pointers must be valid; strings nul-terminated.
 */
enum EvolgymStatus evolgym_env_reset(const struct EvolgymEnv *env,
                                     const char *session_id,
                                     char **out);

/**
 * Drops a session. Unknown ids are ignored.
 *
 * # Safety
 * Pointers must be valid; strings nul-terminated.
 */
enum EvolgymStatus evolgym_env_close(const struct EvolgymEnv *env, const char *session_id);

/**
 * Number of open sessions, or 0 for a null handle.
 *
 * # Safety
 * `env` must be null or a live handle.
 */
size_t evolgym_env_session_count(const struct EvolgymEnv *env);

/**
 * Splits agent output into its last thought and action. `out` receives
 * `{"thought", "action"}`.
 *
 * # Safety
 * Pointers must be valid; strings nul-terminated.
 */
enum EvolgymStatus evolgym_parse_react(const char *text_in, char **out);

/**
 * Writes 1 to `out` if `reward` is 1 and 0 otherwise. Rewards outside
 * [0, 1] are a domain error.
 *
 * # Safety
 * `out` must be valid for a write.
 */
enum EvolgymStatus evolgym_binarize_reward(double reward, uint8_t *out);

/**
 * Scores `guess` against `target`, both five lowercase ASCII letters.
 * `out` receives the marks as `"b y g b b"`.
 *
 * # Safety
 * Pointers must be valid; strings nul-terminated.
 */
enum EvolgymStatus evolgym_wordle_feedback(const char *target, const char *guess, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EVOLGYM_H */
