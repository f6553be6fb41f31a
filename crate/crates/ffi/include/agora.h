#ifndef AGORA_H
#define AGORA_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AgoraStatus {
  AGORA_STATUS_OK = 0,
  AGORA_STATUS_NULL_POINTER = 1,
  AGORA_STATUS_INVALID_UTF8 = 2,
  AGORA_STATUS_INVALID_ARGUMENT = 3,
  AGORA_STATUS_INVALID_CONFIG = 4,
  AGORA_STATUS_NO_SCREENER_CONFIGURED = 5,
  AGORA_STATUS_NOT_SCREENED = 6,
  AGORA_STATUS_UNKNOWN_STATEMENT = 7,
  AGORA_STATUS_NOT_VOTABLE = 8,
  AGORA_STATUS_GATE_NOT_MET = 9,
  AGORA_STATUS_EMPTY_TEXT = 10,
  AGORA_STATUS_NOT_PENDING = 11,
  AGORA_STATUS_LOW_DATA = 12,
  AGORA_STATUS_INVALID_TRANSITION = 13,
  AGORA_STATUS_CONSTITUTION_ERROR = 14,
  AGORA_STATUS_ELO_ERROR = 15,
  AGORA_STATUS_IO = 16,
  AGORA_STATUS_PANIC = 17,
} AgoraStatus;

typedef enum AgoraExport {
  AGORA_EXPORT_EVENTS = 0,
  AGORA_EXPORT_VOTES_CSV = 1,
  AGORA_EXPORT_REPORT_JSON = 2,
  AGORA_EXPORT_CONSTITUTION_TEXT = 3,
  AGORA_EXPORT_CONSTITUTION_JSON = 4,
} AgoraExport;

// Opaque conversation handle.
typedef struct AgoraConversation AgoraConversation;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string. Do not free.
const char *agora_version(void);

// Copy of the last error message on this thread, or NULL if none.
// Free with `agora_string_free`.
char *agora_last_error_message(void);

// Releases a string returned by this library. NULL is ignored.
//
// # Safety
// `s` must come from this library and not have been freed already.
void agora_string_free(char *s);

// Creates a conversation from a JSON config (empty string for defaults).
//
// # Safety
// `config_json` must be a valid C string; `out` must be writable.
enum AgoraStatus agora_conversation_new(const char *config_json, struct AgoraConversation **out);

// Rebuilds a conversation from a line-delimited JSON event log.
//
// # Safety
// `events_jsonl` must be a valid C string; `out` must be writable.
enum AgoraStatus agora_conversation_from_events(const char *events_jsonl,
                                                struct AgoraConversation **out);

// Destroys a handle. NULL is ignored.
//
// # Safety
// `conv` must come from this library and not have been freed already.
void agora_conversation_free(struct AgoraConversation *conv);

// Records a vote (+1 agree, -1 disagree, 0 pass). On success writes the
// votes still needed before the participant may submit.
//
// # Safety
// `conv` must be a live handle; strings valid; `out_votes_remaining`
// writable or NULL.
enum AgoraStatus agora_cast_vote(struct AgoraConversation *conv,
                                 const char *participant,
                                 uint32_t statement,
                                 int8_t vote,
                                 size_t *out_votes_remaining);

// Submits a participant statement for moderation; writes its id.
//
// # Safety
// `conv` must be a live handle; strings valid; `out_statement` writable.
enum AgoraStatus agora_submit_statement(struct AgoraConversation *conv,
                                        const char *participant,
                                        const char *text,
                                        uint32_t *out_statement);

// Applies a moderation decision given as JSON: `"Accept"`,
// `{"Reject": "Duplicate"}` or `{"Rewrite": "new text"}`.
//
// # Safety
// `conv` must be a live handle; `decision_json` a valid C string.
enum AgoraStatus agora_moderate(struct AgoraConversation *conv,
                                uint32_t statement,
                                const char *decision_json);

// Picks the next statement for a participant. `*out_found` is false when
// they have voted on everything.
//
// # Safety
// `conv` must be a live handle; `participant` valid; outputs writable.
enum AgoraStatus agora_next_statement(struct AgoraConversation *conv,
                                      const char *participant,
                                      bool *out_found,
                                      uint32_t *out_statement);

// Analytics snapshot at the current head as JSON.
//
// # Safety
// `conv` must be a live handle; `out` writable.
enum AgoraStatus agora_analytics_json(struct AgoraConversation *conv, char **out);

// Renders one of the export documents.
//
// # Safety
// `conv` must be a live handle; `out` writable.
enum AgoraStatus agora_export(struct AgoraConversation *conv, enum AgoraExport what, char **out);

// Group-aware consensus of one statement from per-group counts. Passes
// count as seen.
//
// # Safety
// The three arrays must each hold `n_groups` elements.
enum AgoraStatus agora_gac(const uint32_t *agree,
                           const uint32_t *disagree,
                           const uint32_t *pass,
                           size_t n_groups,
                           double *out);

// Polarization index and its pass-adjusted form. Fails when no votes.
//
// # Safety
// Outputs must be writable.
enum AgoraStatus agora_polarization(uint32_t agree,
                                    uint32_t disagree,
                                    uint32_t pass,
                                    double *out_pi,
                                    double *out_adjusted);

// Fits Elo ratings from CSV records and returns the JSON report.
//
// # Safety
// Strings must be valid; `out` writable.
enum AgoraStatus agora_elo_report_json(const char *records_csv,
                                       const char *anchor,
                                       size_t n_resamples,
                                       uint64_t seed,
                                       char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AGORA_H */
