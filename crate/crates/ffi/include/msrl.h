#ifndef MSRL_H
#define MSRL_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

#define MSRL_FORMAT_THINK_ANSWER 0

#define MSRL_FORMAT_TYPED_THINK_ANSWER 1

#define MSRL_LABEL_A 0

#define MSRL_LABEL_B 1

#define MSRL_TASK_IMAGE_UNDERSTANDING 0

#define MSRL_TASK_IMAGE_GENERATION 1

#define MSRL_TASK_VIDEO_UNDERSTANDING 2

#define MSRL_TASK_VIDEO_GENERATION 3

#define MSRL_CHANNEL_VISUAL 0

#define MSRL_CHANNEL_CAPTION 1

#define MSRL_CHANNEL_TEXT_ONLY 2

typedef enum MsrlStatus {
  MSRL_STATUS_OK = 0,
  MSRL_STATUS_NULL_POINTER = 1,
  MSRL_STATUS_INVALID_UTF8 = 2,
  MSRL_STATUS_IO = 3,
  MSRL_STATUS_PARSE = 4,
  MSRL_STATUS_INVALID = 5,
  MSRL_STATUS_PANIC = 6,
} MsrlStatus;

// Opaque corpus handle.
typedef struct MsrlCorpus MsrlCorpus;

// Opaque policy handle.
typedef struct MsrlPolicy MsrlPolicy;

// Reward components in reward units.
typedef struct MsrlRewardBreakdown {
  double format;
  double accuracy;
  double task;
  double total;
} MsrlRewardBreakdown;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null after a
// successful call. Valid until the next `msrl_*` call on the same thread.
const char *msrl_last_error_message(void);

// Library version as a static string.
const char *msrl_version(void);

// 1.0 when `text` parses in `format`, 0.0 otherwise.
//
// # Safety
// `text` must be null or a valid NUL-terminated string; `out` must be null
// or writable.
enum MsrlStatus msrl_format_reward(const char *text, int32_t format, double *out);

// Full reward for one output. The task component uses the default value
// of 0.2 when `use_task_reward` is set.
//
// # Safety
// As for [`msrl_format_reward`].
enum MsrlStatus msrl_score(const char *text,
                           int32_t format,
                           int32_t gold,
                           int32_t task,
                           bool use_task_reward,
                           struct MsrlRewardBreakdown *out);

// Parses `text` and writes the rationale as a JSON object to `*out_json`.
// Returns `MSRL_STATUS_PARSE` with the violation as the error message when
// the text does not conform.
//
// # Safety
// `text` as for [`msrl_format_reward`]; `out_json` must be null or
// writable. Free the result with [`msrl_string_free`].
enum MsrlStatus msrl_parse_rationale(const char *text, int32_t format, char **out_json);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must be null or a pointer obtained from this library that has not
// been freed.
void msrl_string_free(char *s);

// Bradley-Terry loss `-log sigmoid(s_pref - s_other)`.
//
// # Safety
// `out` must be null or writable.
enum MsrlStatus msrl_bt_loss(double score_a, double score_b, int32_t preferred, double *out);

// Loads a policy checkpoint.
//
// # Safety
// `path` as for [`msrl_format_reward`]; `out` must be null or writable.
enum MsrlStatus msrl_policy_load(const char *path, struct MsrlPolicy **out);

// # Safety
// `policy` must be null or a live handle from [`msrl_policy_load`].
void msrl_policy_free(struct MsrlPolicy *policy);

// Length of the policy's feature vector.
//
// # Safety
// `policy` must be null or a live handle; `out` must be null or writable.
enum MsrlStatus msrl_policy_feature_dim(const struct MsrlPolicy *policy, size_t *out);

// Loads and validates a JSONL corpus.
//
// # Safety
// As for [`msrl_policy_load`].
enum MsrlStatus msrl_corpus_load(const char *path, struct MsrlCorpus **out);

// # Safety
// `corpus` must be null or a live handle from [`msrl_corpus_load`].
void msrl_corpus_free(struct MsrlCorpus *corpus);

// Number of examples in the corpus.
//
// # Safety
// `corpus` must be null or a live handle; `out` must be null or writable.
enum MsrlStatus msrl_corpus_len(const struct MsrlCorpus *corpus, size_t *out);

// Voting@k accuracy of `policy` on `corpus`.
//
// # Safety
// Handles must be null or live; `out_accuracy` must be null or writable.
enum MsrlStatus msrl_evaluate(const struct MsrlPolicy *policy,
                              const struct MsrlCorpus *corpus,
                              int32_t format,
                              int32_t channel,
                              size_t k,
                              uint64_t seed,
                              double *out_accuracy);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MSRL_H */
